"""N-way linear support classifier (the fast parameters)."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx

CLASSIFIER_PARAMS = ("W", "b")


def init_classifier_params(n_way: int, d_h: int) -> dict[str, np.ndarray]:
    """Zero weights and bias, so the first output distribution is exactly uniform."""
    if n_way < 1 or d_h < 1:
        raise ValueError("n_way and d_h must be positive")
    return {"W": np.zeros((n_way, d_h)), "b": np.zeros(n_way)}


def classify_support(E: nx.Tensor, leaves: Mapping[str, nx.Tensor]) -> nx.Tensor:
    """``softmax(W E + b)`` for a ``d_h`` vector or a ``B x d_h`` batch."""
    W, b = leaves["W"], leaves["b"]
    single = E.data.ndim == 1
    batch = nx.reshape(E, (1, E.shape[0])) if single else E
    if batch.shape[1] != W.shape[1]:
        raise nx.ShapeError(f"representation size {batch.shape[1]} vs classifier input {W.shape[1]}")
    probs = nx.softmax(nx.add(nx.matmul(batch, nx.transpose(W)), b))
    return nx.reshape(probs, (W.shape[0],)) if single else probs


def support_loss(support: nx.Tensor, slots: Sequence[int], leaves: Mapping[str, nx.Tensor]) -> nx.Tensor:
    """Mean cross-entropy of the classifier over all support vectors (``B x d_h``)."""
    n_way = leaves["W"].shape[0]
    slots = np.asarray(slots)
    if slots.size and slots.max() >= n_way:
        raise ValueError(f"support slot {int(slots.max())} outside a {n_way}-way classifier")
    return nx.mean(nx.cross_entropy(classify_support(support, leaves), slots))
