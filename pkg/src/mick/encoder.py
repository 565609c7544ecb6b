"""Context encoder: word + dual position embeddings followed by a CNN with max pooling."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .data import PAD, EncodedInstance

ENCODER_PARAMS = ("word_table", "pos_head_table", "pos_tail_table", "conv_filters", "conv_bias")


def init_encoder_params(
    vocab_size: int,
    T: int,
    rng: np.random.Generator,
    d_c: int = 50,
    d_p: int = 5,
    d_h: int = 230,
    w: int = 3,
) -> dict[str, np.ndarray]:
    for name, v in (("vocab_size", vocab_size), ("T", T), ("d_c", d_c), ("d_p", d_p), ("d_h", d_h), ("w", w)):
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    depth = d_c + 2 * d_p
    word = rng.uniform(-0.1, 0.1, size=(vocab_size, d_c))
    word[PAD] = 0.0
    return {
        "word_table": word,
        "pos_head_table": rng.uniform(-0.1, 0.1, size=(2 * T - 1, d_p)),
        "pos_tail_table": rng.uniform(-0.1, 0.1, size=(2 * T - 1, d_p)),
        "conv_filters": rng.standard_normal((d_h, w, depth)) / np.sqrt(w * depth),
        "conv_bias": np.zeros(d_h),
    }


def embed_batch(batch: Sequence[EncodedInstance], leaves: Mapping[str, nx.Tensor]) -> nx.Tensor:
    """Stack the embedding matrices of ``batch`` into a ``B x T x (d_c + 2 d_p)`` tensor."""
    ids = np.stack([e.token_ids for e in batch])
    ph = np.stack([e.pos_head for e in batch])
    pt = np.stack([e.pos_tail for e in batch])
    return nx.concat(
        [
            nx.embedding_lookup(leaves["word_table"], ids),
            nx.embedding_lookup(leaves["pos_head_table"], ph),
            nx.embedding_lookup(leaves["pos_tail_table"], pt),
        ],
        axis=2,
    )


def embed_input(enc: EncodedInstance, leaves: Mapping[str, nx.Tensor]) -> nx.Tensor:
    """Single-instance ``T x (d_c + 2 d_p)`` embedding matrix."""
    X = embed_batch([enc], leaves)
    return nx.reshape(X, X.shape[1:])


def valid_windows(true_length: int, w: int) -> int:
    pad = w // 2
    return true_length + 2 * pad - w + 1


def encode_batch(X: nx.Tensor, lengths: Sequence[int], leaves: Mapping[str, nx.Tensor]) -> nx.Tensor:
    """``B x T x D`` embeddings to ``B x d_h`` sentence vectors.

    Rows at or beyond each sentence's true length are zeroed before the
    convolution and only windows that fit the zero-padded true sentence are
    pooled, so the amount of padding never affects the output.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    B, T, _ = X.shape
    if lengths.shape != (B,) or lengths.min() < 1 or lengths.max() > T:
        raise ValueError(f"true lengths must lie in [1, {T}]")
    w = leaves["conv_filters"].shape[1]
    n_valid = valid_windows(lengths, w)
    if n_valid.min() < 1:
        raise ValueError(f"sentence shorter than a width-{w} window even after padding")
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)[:, :, None]
    masked = nx.mul(X, X.graph.constant(mask))
    conv = nx.conv1d(masked, leaves["conv_filters"], leaves["conv_bias"])
    return nx.max_pool_valid(nx.relu(conv), n_valid)


def encode_sentence(X: nx.Tensor, true_length: int, leaves: Mapping[str, nx.Tensor]) -> nx.Tensor:
    """Single ``T x D`` matrix to a ``d_h`` vector."""
    out = encode_batch(nx.reshape(X, (1, *X.shape)), [true_length], leaves)
    return nx.reshape(out, out.shape[1:])


def encode_instances(batch: Sequence[EncodedInstance], leaves: Mapping[str, nx.Tensor]) -> nx.Tensor:
    return encode_batch(embed_batch(batch, leaves), [e.true_length for e in batch], leaves)
