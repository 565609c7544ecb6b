"""Prototype-based class matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx


@dataclass
class PrototypeSet:
    vectors: nx.Tensor  # N x d_h
    class_labels: list[str]

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.class_labels):
            raise ValueError(f"{self.vectors.shape[0]} prototypes for {len(self.class_labels)} labels")


def compute_prototypes(support: nx.Tensor, class_labels: Sequence[str] | None = None) -> PrototypeSet:
    """Mean support vector per class; ``support`` is ``N x K x d_h``."""
    if support.data.ndim != 3:
        raise nx.ShapeError(f"support grid must be N x K x d_h, got {support.shape}")
    N, K, _ = support.shape
    if K < 1:
        raise ValueError("each class needs at least one support vector")
    labels = [str(i) for i in range(N)] if class_labels is None else list(class_labels)
    return PrototypeSet(nx.mean(support, axis=1), labels)


def match_scores(queries: nx.Tensor, protos: PrototypeSet) -> nx.Tensor:
    """Negative squared distances, ``M x d_h`` queries against ``N`` prototypes."""
    return nx.negate(nx.sq_dist(queries, protos.vectors))


def match_query(E_q: nx.Tensor, protos: PrototypeSet) -> tuple[nx.Tensor, int]:
    """Score a single query; the prediction is the first slot with the highest score."""
    scores = match_scores(nx.reshape(E_q, (1, E_q.shape[-1])), protos)
    scores = nx.reshape(scores, (protos.vectors.shape[0],))
    return scores, int(np.argmax(scores.data))


def match_loss(queries: nx.Tensor, slots: Sequence[int], protos: PrototypeSet) -> nx.Tensor:
    """Mean cross-entropy of softmax(scores) against each query's true slot."""
    if queries.shape[0] == 0:
        raise ValueError("match_loss needs at least one query")
    probs = nx.softmax(match_scores(queries, protos))
    return nx.mean(nx.cross_entropy(probs, np.asarray(slots)))


def predict(queries: nx.Tensor, protos: PrototypeSet) -> np.ndarray:
    return np.argmax(match_scores(queries, protos).data, axis=1)
