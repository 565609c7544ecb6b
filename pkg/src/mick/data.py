"""Instances, datasets, vocabularies and N-way K-shot episode sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
ORIGINAL, CROSS_DOMAIN = "original", "cross_domain"


class DataError(ValueError):
    """Invalid dataset content (parse errors, bad spans, too few instances)."""


@dataclass(frozen=True)
class Instance:
    tokens: tuple[str, ...]
    head: tuple[int, int]
    tail: tuple[int, int]
    relation: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "head", tuple(self.head))
        object.__setattr__(self, "tail", tuple(self.tail))
        n = len(self.tokens)
        if n == 0:
            raise DataError("instance has no tokens")
        for label, (s, e) in (("head", self.head), ("tail", self.tail)):
            if not 0 <= s < e <= n:
                raise DataError(f"{label} span ({s}, {e}) invalid for {n} tokens")
        if self.head[0] < self.tail[1] and self.tail[0] < self.head[1]:
            raise DataError(f"head span {self.head} overlaps tail span {self.tail}")
        if not self.relation:
            raise DataError("empty relation label")

    def to_record(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "head": list(self.head),
            "tail": list(self.tail),
            "relation": self.relation,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "Instance":
        try:
            return cls(rec["tokens"], rec["head"], rec["tail"], rec["relation"])
        except KeyError as exc:
            raise DataError(f"missing field {exc.args[0]!r}") from None
        except TypeError as exc:
            raise DataError(f"malformed field: {exc}") from None

    def to_chars(self) -> "Instance":
        """Explode tokens into characters, remapping both spans."""
        starts = np.cumsum([0] + [len(t) for t in self.tokens])
        chars = tuple(c for t in self.tokens for c in t)

        def remap(span):
            return int(starts[span[0]]), int(starts[span[1]])

        return Instance(chars, remap(self.head), remap(self.tail), self.relation)


@dataclass
class Dataset:
    groups: dict[str, list[Instance]]
    origin: str = ORIGINAL

    def __post_init__(self):
        for rel, items in self.groups.items():
            if not items:
                raise DataError(f"relation {rel!r} has no instances")

    @property
    def relations(self) -> list[str]:
        return list(self.groups)

    def __len__(self) -> int:
        return sum(len(v) for v in self.groups.values())

    def instances(self) -> Iterable[Instance]:
        for items in self.groups.values():
            yield from items

    @classmethod
    def from_instances(cls, instances: Iterable[Instance], origin: str = ORIGINAL) -> "Dataset":
        groups: dict[str, list[Instance]] = {}
        for inst in instances:
            groups.setdefault(inst.relation, []).append(inst)
        return cls(groups, origin)


def load_dataset(path, origin: str = ORIGINAL) -> Dataset:
    """Read one JSON instance record per line, grouping by relation."""
    path = Path(path)
    instances = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: expected an object")
            try:
                instances.append(Instance.from_record(rec))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not instances:
        raise DataError(f"{path}: no instances")
    return Dataset.from_instances(instances, origin)


def save_dataset(dataset: Dataset | Iterable[Instance], path) -> None:
    items = dataset.instances() if isinstance(dataset, Dataset) else dataset
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in items:
            fh.write(json.dumps(inst.to_record(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple[str, ...]
    mode: str = "word"
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("word", "char"):
            raise ValueError(f"vocab mode must be 'word' or 'char', got {self.mode!r}")
        if self.id_to_token[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise ValueError("ids 0 and 1 are reserved for PAD and UNK")
        object.__setattr__(self, "token_to_id", {t: i for i, t in enumerate(self.id_to_token) if i >= 2})

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)


def build_vocab(datasets: Sequence[Dataset], mode: str = "word") -> Vocab:
    """Sorted, deterministic id assignment; ids 0 and 1 are PAD and UNK."""
    tokens: set[str] = set()
    count = 0
    for ds in datasets:
        for inst in ds.instances():
            count += 1
            if mode == "char":
                tokens.update(c for t in inst.tokens for c in t)
            else:
                tokens.update(inst.tokens)
    if count == 0:
        raise DataError("cannot build a vocabulary from zero instances")
    return Vocab((PAD_TOKEN, UNK_TOKEN, *sorted(tokens)), mode)


@dataclass(frozen=True)
class EncodedInstance:
    token_ids: np.ndarray
    pos_head: np.ndarray
    pos_tail: np.ndarray
    true_length: int
    relation_slot: int = -1


def position_buckets(n: int, start: int, T: int) -> np.ndarray:
    return np.clip(np.arange(n) - start, -(T - 1), T - 1) + (T - 1)


def encode_instance(inst: Instance, vocab: Vocab, T: int, slot: int = -1) -> EncodedInstance:
    """Pad/truncate to ``T`` token ids plus head- and tail-relative position buckets."""
    if T < 1:
        raise ValueError("T must be positive")
    if vocab.mode == "char":
        inst = inst.to_chars()
    if not inst.tokens:
        raise DataError("zero-length token sequence")
    n = min(len(inst.tokens), T)
    if inst.head[1] > n or inst.tail[1] > n:
        raise DataError(f"entity span truncated away at T={T} ({len(inst.tokens)} tokens)")
    ids = np.full(T, PAD, dtype=np.int64)
    ids[:n] = [vocab.lookup(t) for t in inst.tokens[:n]]
    return EncodedInstance(
        token_ids=ids,
        pos_head=position_buckets(T, inst.head[0], T),
        pos_tail=position_buckets(T, inst.tail[0], T),
        true_length=n,
        relation_slot=slot,
    )


@dataclass
class Episode:
    class_labels: list[str]
    support: list[list[EncodedInstance]]
    query: list[list[EncodedInstance]]

    @property
    def n_way(self) -> int:
        return len(self.class_labels)


def sample_episode(
    dataset: Dataset | Mapping[str, Sequence[Instance]],
    N: int,
    K: int,
    Q: int,
    rng: np.random.Generator,
    vocab: Vocab,
    T: int,
) -> Episode:
    """Draw N classes, then K support and Q query instances per class, all without replacement."""
    groups = dataset.groups if isinstance(dataset, Dataset) else dataset
    labels = list(groups)
    if len(labels) < N:
        raise DataError(f"need {N} classes, dataset has {len(labels)}")
    chosen = [labels[i] for i in rng.choice(len(labels), size=N, replace=False)]
    support, query = [], []
    for slot, label in enumerate(chosen):
        items = groups[label]
        if len(items) < K + Q:
            raise DataError(f"class {label!r} has {len(items)} instances, need {K + Q}")
        picks = rng.choice(len(items), size=K + Q, replace=False)
        enc = [encode_instance(items[i], vocab, T, slot) for i in picks]
        support.append(enc[:K])
        query.append(enc[K:])
    return Episode([str(c) for c in chosen], support, query)


def verify_disjoint(train: Dataset, test: Dataset) -> set[str]:
    """Relation labels shared by both datasets; empty means the split is valid."""
    return set(train.groups) & set(test.groups)


def dataset_stats(dataset: Dataset) -> dict:
    sizes = [len(v) for v in dataset.groups.values()]
    return {
        "classes": len(sizes),
        "min_per_class": min(sizes),
        "max_per_class": max(sizes),
        "instances": sum(sizes),
    }


def format_stats_table(named: Sequence[tuple[str, Dataset]]) -> str:
    """Dataset / #cls. / #inst./cls. / #inst. table, one row per dataset."""
    rows = [("Dataset", "#cls.", "#inst./cls.", "#inst.")]
    for name, ds in named:
        s = dataset_stats(ds)
        per = f"{s['min_per_class']:,}" if s["min_per_class"] == s["max_per_class"] else f"{s['min_per_class']:,}-{s['max_per_class']:,}"
        rows.append((name, f"{s['classes']:,}", per, f"{s['instances']:,}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for k, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append(" | ".join(cells))
        if k == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def vocab_from_tokens(tokens: Iterable[str], mode: str = "word") -> Vocab:
    return Vocab((PAD_TOKEN, UNK_TOKEN, *sorted(set(tokens))), mode)
