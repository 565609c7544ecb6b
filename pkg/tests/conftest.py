import json

import numpy as np
import pytest

from mick.data import Dataset, Instance, vocab_from_tokens
from mick.synthetic import make_corpus


def make_instance(tokens, head, tail, relation):
    return Instance(list(tokens), head, tail, relation)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return path


def grid_dataset(n_classes, per_class, seed=0, prefix="r", length=8):
    rng = np.random.default_rng(seed)
    groups = {}
    for c in range(n_classes):
        items = []
        for _ in range(per_class):
            toks = [f"w{int(x)}" for x in rng.integers(0, 30, size=length)]
            items.append(Instance(toks, (0, 1), (length - 1, length), f"{prefix}{c}"))
        groups[f"{prefix}{c}"] = items
    return Dataset(groups)


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(n_train=8, n_test=5, per_class=12, seed=3)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return vocab_from_tokens(small_corpus.tokens)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
