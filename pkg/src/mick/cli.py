"""Command-line entry point: ``mick {train,eval,align,stats,sample-episode}``.

Exit codes: 0 success, 1 validation failure, 2 I/O failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import align as al
from .checkpoint import CheckpointError, format_config, load_checkpoint, load_config, parse_value, save_checkpoint
from .data import CROSS_DOMAIN, DataError, build_vocab, format_stats_table, load_dataset, sample_episode, verify_disjoint
from .report import plot_eval, plot_training
from .trainer import TrainConfig, TrainingError, evaluate, train

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("mick")


class ValidationError(Exception):
    pass


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides (take precedence over --config)")
    for f in fields(TrainConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar="VALUE")


def _overrides(args) -> dict:
    out = {}
    for f in fields(TrainConfig):
        raw = getattr(args, "cfg_" + f.name)
        if raw is not None:
            out[f.name] = parse_value(f.name, raw)
    return out


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    original = load_dataset(args.train)
    cross = load_dataset(args.cross, CROSS_DOMAIN) if args.cross else None
    if args.test:
        shared = verify_disjoint(original, load_dataset(args.test))
        if shared:
            raise ValidationError(
                "training and test relation sets must be disjoint; shared labels: " + ", ".join(sorted(shared))
            )
    sources = [original] + ([cross] if cross is not None else [])
    sources += [load_dataset(p) for p in args.vocab_extra]
    vocab = build_vocab(sources, cfg.vocab_mode)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    with metrics_path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config": cfg.to_dict()}, sort_keys=True) + "\n")
        trainer = train(original, cross, cfg, vocab,
                        on_episode=lambda rec: fh.write(json.dumps(rec, sort_keys=True) + "\n"))
    save_checkpoint(out / "checkpoint.mick", cfg, vocab, {**trainer.slow, **trainer.fast})
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    if not args.no_figures and trainer.state.metrics:
        plot_training(trainer.state.metrics, out / "training.png")
    st = trainer.state
    print(f"episodes {st.episode_counter}  fast updates {st.fast_update_count}  slow updates {st.slow_update_count}")
    print(f"checkpoint {out / 'checkpoint.mick'}")
    print(f"metrics    {metrics_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    test = load_dataset(args.test)
    rep = evaluate(test, ckpt.params, ckpt.vocab, args.n_way, args.k_shot, args.q_query,
                   args.tasks, args.seed, ckpt.config.T, args.workers)
    doc = {"report": rep.summary(), "config": ckpt.config.to_dict(), "test": str(args.test)}
    print(f"{rep.n_way}-way {rep.k_shot}-shot over {rep.task_count} tasks: "
          f"accuracy {rep.mean:.4f} +- {rep.std:.4f}")
    print(format_config(ckpt.config), end="")
    report_path = Path(args.report) if args.report else Path(args.checkpoint).with_suffix(".eval.json")
    report_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    if args.figure:
        plot_eval(rep.accuracies, args.figure, f"{rep.n_way}-way {rep.k_shot}-shot")
    return EXIT_OK


def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def cmd_align(args) -> int:
    dictionary = al.EntityDictionary.load(args.dictionary)
    sentences = _read_lines(args.corpus)
    segs = [line.split() for line in _read_lines(args.segmentation)] if args.segmentation else None
    cands, stats = al.align_corpus(sentences, dictionary, segs)
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for c in cands:
            rec = c.to_instance().to_record()
            rec["provenance"] = c.provenance
            rec["entity_types"] = [e.type for e in c.entities]
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_stats(args) -> int:
    named = [(Path(p).stem, load_dataset(p)) for p in args.paths]
    print(format_stats_table(named))
    return EXIT_OK


def cmd_sample_episode(args) -> int:
    ds = load_dataset(args.data)
    vocab = build_vocab([ds], args.vocab_mode)
    ep = sample_episode(ds, args.n_way, args.k_shot, args.q_query, np.random.default_rng(args.seed), vocab, args.T)

    def dump(e):
        toks = [vocab.id_to_token[i] for i in e.token_ids[:e.true_length]]
        return {"tokens": toks, "slot": e.relation_slot, "true_length": e.true_length,
                "pos_head": e.pos_head[:e.true_length].tolist(), "pos_tail": e.pos_tail[:e.true_length].tolist()}

    doc = {"class_labels": ep.class_labels,
           "support": [[dump(e) for e in row] for row in ep.support],
           "query": [[dump(e) for e in row] for row in ep.query]}
    print(json.dumps(doc, ensure_ascii=False, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mick", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="meta-train and write a checkpoint plus metrics log")
    t.add_argument("--config", help="flat 'key = value' config file")
    t.add_argument("--train", required=True, help="original training instances")
    t.add_argument("--cross", help="cross-domain instances for task enrichment")
    t.add_argument("--test", help="test instances; only checked for relation overlap")
    t.add_argument("--vocab-extra", action="append", default=[], metavar="PATH",
                   help="additional instance files whose tokens join the vocabulary")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--no-figures", action="store_true")
    _config_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on random test tasks")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--n-way", type=int, default=5)
    e.add_argument("--k-shot", type=int, default=1)
    e.add_argument("--q-query", type=int, default=5)
    e.add_argument("--tasks", type=int, default=2000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--report", help="JSON report path (default: next to the checkpoint)")
    e.add_argument("--figure", help="write a per-task accuracy histogram here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("align", help="extract two-entity candidate sentences with a dictionary")
    a.add_argument("--corpus", required=True, help="one sentence per line")
    a.add_argument("--dictionary", required=True, help="'surface<TAB>type' per line")
    a.add_argument("--segmentation", help="parallel file of space-separated words")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_align)

    s = sub.add_parser("stats", help="class and instance counts per dataset")
    s.add_argument("paths", nargs="+")
    s.set_defaults(func=cmd_stats)

    d = sub.add_parser("sample-episode", help="dump one sampled episode as JSON")
    d.add_argument("--data", required=True)
    d.add_argument("--n-way", type=int, default=5)
    d.add_argument("--k-shot", type=int, default=5)
    d.add_argument("--q-query", type=int, default=5)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--T", type=int, default=128)
    d.add_argument("--vocab-mode", default="word", choices=["word", "char"])
    d.set_defaults(func=cmd_sample_episode)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, DataError, TrainingError, CheckpointError, al.AlignError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # pragma: no cover - last-resort guard
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
