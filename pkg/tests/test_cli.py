import json
from itertools import combinations

import numpy as np
import pytest

from mick.checkpoint import load_checkpoint
from mick.cli import main
from mick.data import save_dataset
from mick.report import read_metrics

from conftest import grid_dataset
from test_align import ALPHABET, brute_force_segmentation, brute_force_spans

TINY_FLAGS = ["--T", "24", "--d-c", "6", "--d-p", "2", "--d-h", "8", "--n-way", "3", "--k-shot", "2", "--q-query", "2"]


@pytest.fixture(scope="module")
def files(tmp_path_factory, small_corpus):
    d = tmp_path_factory.mktemp("cli")
    save_dataset(small_corpus.train, d / "train.jsonl")
    save_dataset(small_corpus.test, d / "test.jsonl")
    return d


@pytest.fixture(scope="module")
def trained(files):
    out = files / "run"
    code = main(["train", "--train", str(files / "train.jsonl"), "--test", str(files / "test.jsonl"),
                 "--vocab-extra", str(files / "test.jsonl"), "--out", str(out),
                 "--episodes", "12", "--epsilon", "4", *TINY_FLAGS])
    assert code == 0
    return out


class TestTrain:
    def test_outputs(self, trained):
        for name in ("checkpoint.mick", "metrics.jsonl", "config.txt", "training.png"):
            assert (trained / name).stat().st_size > 0
        cfg, recs = read_metrics(trained / "metrics.jsonl")
        assert cfg["episodes"] == 12 and cfg["alpha"] == 0.1
        assert [r["episode"] for r in recs] == list(range(1, 13))
        ck = load_checkpoint(trained / "checkpoint.mick")
        assert set(ck.params) >= {"word_table", "conv_filters", "W", "b"}
        assert ck.config.d_h == 8

    def test_config_file_and_flag_precedence(self, files, tmp_path):
        conf = tmp_path / "c.txt"
        conf.write_text("episodes = 3\nseed = 5\nd_h = 4\n")
        assert main(["train", "--config", str(conf), "--train", str(files / "train.jsonl"), "--out",
                     str(tmp_path / "o"), "--no-figures", *TINY_FLAGS, "--seed", "6"]) == 0
        ck = load_checkpoint(tmp_path / "o" / "checkpoint.mick")
        assert (ck.config.episodes, ck.config.seed, ck.config.d_h) == (3, 6, 8)
        assert not (tmp_path / "o" / "training.png").exists()

    def test_shared_labels_refused(self, files, tmp_path, capsys):
        out = tmp_path / "refused"
        code = main(["train", "--train", str(files / "train.jsonl"), "--test", str(files / "train.jsonl"),
                     "--out", str(out), *TINY_FLAGS])
        assert code == 1
        err = capsys.readouterr().err
        assert "disjoint" in err and "rel00" in err
        assert not out.exists()

    def test_shrunken_setting(self, tmp_path):
        save_dataset(grid_dataset(10, 10, seed=2), tmp_path / "shrunk.jsonl")
        assert main(["train", "--train", str(tmp_path / "shrunk.jsonl"), "--out", str(tmp_path / "s"),
                     "--no-figures", "--n-way", "5", "--k-shot", "5", "--q-query", "5", "--episodes", "6",
                     "--T", "10", "--d-c", "4", "--d-p", "2", "--d-h", "6"]) == 0

    def test_missing_file_is_io_error(self, tmp_path):
        assert main(["train", "--train", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "x")]) == 2

    def test_bad_override_is_validation_error(self, files, tmp_path):
        assert main(["train", "--train", str(files / "train.jsonl"), "--out", str(tmp_path / "x"),
                     "--alpha", "fast"]) == 1


class TestEval:
    def test_identical_report_bytes(self, trained, files, tmp_path, capsys):
        reports = []
        for i in range(2):
            rp = tmp_path / f"r{i}.json"
            assert main(["eval", "--checkpoint", str(trained / "checkpoint.mick"), "--test",
                         str(files / "test.jsonl"), "--tasks", "40", "--seed", "3", "--report", str(rp),
                         "--figure", str(tmp_path / f"h{i}.png")]) == 0
            reports.append(rp.read_bytes())
        assert reports[0] == reports[1]
        doc = json.loads(reports[0])
        assert doc["report"]["task_count"] == 40 and doc["report"]["k_shot"] == 1
        out = capsys.readouterr().out
        assert "accuracy" in out and "alpha = 0.1" in out
        assert (tmp_path / "h0.png").stat().st_size > 0

    def test_default_report_path(self, trained, files):
        assert main(["eval", "--checkpoint", str(trained / "checkpoint.mick"), "--test",
                     str(files / "test.jsonl"), "--tasks", "3"]) == 0
        assert (trained / "checkpoint.eval.json").exists()

    def test_corrupt_checkpoint(self, trained, files, tmp_path, capsys):
        raw = bytearray((trained / "checkpoint.mick").read_bytes())
        raw[100] ^= 0xFF
        bad = tmp_path / "bad.mick"
        bad.write_bytes(bytes(raw))
        assert main(["eval", "--checkpoint", str(bad), "--test", str(files / "test.jsonl")]) == 1
        assert "checksum" in capsys.readouterr().err

    def test_insufficient_data(self, trained, files):
        assert main(["eval", "--checkpoint", str(trained / "checkpoint.mick"), "--test",
                     str(files / "test.jsonl"), "--n-way", "9", "--tasks", "1"]) == 1


def oracle_pipeline_count(lines, surfaces, segs):
    n = 0
    for text, words in zip(lines, segs):
        spans = sorted(brute_force_spans(text, surfaces))
        for (i, l), (j, k) in combinations(spans, 2):
            if i < j + k and j < i + l:
                continue
            ents = [type("E", (), {"start": a, "surface": text[a:a + b]}) for a, b in ((i, l), (j, k))]
            if all(brute_force_segmentation(text, words, e) for e in ents):
                n += 1
    return n


class TestAlign:
    def _run(self, tmp_path, capsys, lines, dictionary, segs=None):
        (tmp_path / "corpus.txt").write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
        (tmp_path / "dict.tsv").write_text("".join(f"{s}\t{t}\n" for s, t in dictionary), encoding="utf-8")
        argv = ["align", "--corpus", str(tmp_path / "corpus.txt"), "--dictionary", str(tmp_path / "dict.tsv"),
                "--out", str(tmp_path / "cands.jsonl")]
        if segs is not None:
            (tmp_path / "seg.txt").write_text("".join(" ".join(w) + "\n" for w in segs), encoding="utf-8")
            argv += ["--segmentation", str(tmp_path / "seg.txt")]
        capsys.readouterr()
        assert main(argv) == 0
        stats = json.loads(capsys.readouterr().out)
        recs = [json.loads(x) for x in (tmp_path / "cands.jsonl").read_text(encoding="utf-8").splitlines()]
        return stats, recs

    def test_empty_corpus(self, tmp_path, capsys):
        stats, recs = self._run(tmp_path, capsys, [], [("a", "T")])
        assert recs == [] and stats["sentences"] == stats["kept"] == stats["candidates"] == 0

    def test_one_sentence(self, tmp_path, capsys):
        stats, recs = self._run(tmp_path, capsys, ["子宫肌瘤出现慢性盆腔炎"],
                                [("子宫肌瘤", "disease"), ("慢性盆腔炎", "disease")])
        assert len(recs) == 1 and stats["written"] == 1
        r = recs[0]
        assert r["relation"] == "UNLABELED" and r["entity_types"] == ["disease", "disease"]
        assert "".join(r["tokens"][r["head"][0]:r["head"][1]]) == "子宫肌瘤"

    def test_fuzzed_count_matches_oracle(self, tmp_path, capsys):
        rng = np.random.default_rng(5)
        dictionary = sorted({("".join(rng.choice(list(ALPHABET), size=int(rng.integers(1, 4)))), "T")
                             for _ in range(25)})
        lines, segs = [], []
        for _ in range(200):
            words = ["".join(rng.choice(list(ALPHABET), size=int(rng.integers(1, 4))))
                     for _ in range(int(rng.integers(1, 8)))]
            lines.append("".join(words))
            segs.append(words)
        stats, recs = self._run(tmp_path, capsys, lines, dictionary, segs)
        want = oracle_pipeline_count(lines, {s for s, _ in dictionary}, segs)
        assert len(recs) == stats["written"] == want
        assert want > 0

    def test_malformed_dictionary(self, tmp_path, capsys):
        (tmp_path / "c.txt").write_text("abc\n")
        (tmp_path / "d.tsv").write_text("a\tT\nbroken\n")
        assert main(["align", "--corpus", str(tmp_path / "c.txt"), "--dictionary", str(tmp_path / "d.tsv"),
                     "--out", str(tmp_path / "o.jsonl")]) == 1
        assert ":2:" in capsys.readouterr().err


def test_stats(files, capsys):
    assert main(["stats", str(files / "train.jsonl"), str(files / "test.jsonl")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert "#cls." in lines[0]
    assert [c.strip() for c in lines[2].split("|")] == ["train", "8", "12", "96"]


def test_sample_episode(files, capsys):
    argv = ["sample-episode", "--data", str(files / "train.jsonl"), "--n-way", "3", "--k-shot", "2",
            "--q-query", "1", "--seed", "4", "--T", "24"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert main(argv) == 0
    assert capsys.readouterr().out == first
    doc = json.loads(first)
    assert len(doc["class_labels"]) == 3
    assert [len(r) for r in doc["support"]] == [2, 2, 2]
