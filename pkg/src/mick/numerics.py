"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive appends one node to the :class:`Graph` its inputs live on.
Nodes are appended after their inputs, so the tape is topologically ordered
by construction and :meth:`Graph.backward` is a single reverse sweep.

Typical use::

    g = Graph()
    w = g.param("w", np.ones((3, 2)))
    x = g.constant(np.arange(3.0).reshape(1, 3))
    loss = sum_(matmul(x, w))
    grads = g.backward(loss)
    grads_by_name = g.param_grads(grads)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonDeterministicError(RuntimeError):
    """Raised when two forward passes of the same computation disagree."""


@dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None


class Tensor:
    """A value recorded on a :class:`Graph`.

    ``data`` is a float64 ndarray (row-major); ``node_id`` indexes the tape.
    """

    __slots__ = ("data", "node_id", "graph")

    def __init__(self, data: np.ndarray, node_id: int, graph: "Graph"):
        self.data = data
        self.node_id = node_id
        self.graph = graph

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node_id})"


@dataclass
class Graph:
    """Append-only tape of primitive applications."""

    nodes: list[_Node] = field(default_factory=list)
    params: dict[str, int] = field(default_factory=dict)

    def _record(self, kind, inputs, value, vjp) -> Tensor:
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(_Node(kind, tuple(t.node_id for t in inputs), value, vjp))
        return Tensor(value, len(self.nodes) - 1, self)

    def constant(self, value) -> Tensor:
        return self._record("constant", (), np.array(value, dtype=np.float64), None)

    def param(self, name: str, value: np.ndarray) -> Tensor:
        """Register a named leaf whose gradient can be collected by name."""
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered on this graph")
        t = self._record("param", (), np.array(value, dtype=np.float64), None)
        self.params[name] = t.node_id
        return t

    def backward(self, root: Tensor) -> dict[int, np.ndarray]:
        """Return ``node_id -> gradient`` for every node reachable from ``root``."""
        if root.graph is not self:
            raise ValueError("root belongs to a different graph")
        if root.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
        for nid in range(root.node_id, -1, -1):
            g = grads.get(nid)
            node = self.nodes[nid]
            if g is None or node.vjp is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                if inp in grads:
                    grads[inp] = grads[inp] + gi
                else:
                    grads[inp] = gi
        return grads

    def param_grads(self, grads: Mapping[int, np.ndarray], names: Sequence[str] | None = None) -> dict[str, np.ndarray]:
        """Gradients keyed by parameter name; unreachable parameters get zeros."""
        names = list(self.params) if names is None else names
        out = {}
        for name in names:
            nid = self.params[name]
            g = grads.get(nid)
            out[name] = np.zeros_like(self.nodes[nid].value) if g is None else g
        return out


def _same_graph(*ts: Tensor) -> Graph:
    g = ts[0].graph
    for t in ts[1:]:
        if t.graph is not g:
            raise ValueError("operands recorded on different graphs")
    return g


def _check_finite(*ts: Tensor) -> None:
    for t in ts:
        if not np.all(np.isfinite(t.data)):
            raise ValueError("non-finite input")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- primitives ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    _check_finite(a, b)
    av, bv = a.data, b.data
    return g._record("matmul", (a, b), av @ bv, lambda gr: (gr @ bv.T, av.T @ gr))


def add(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from None
    sa, sb = a.shape, b.shape
    return g._record("add", (a, b), out, lambda gr: (_unbroadcast(gr, sa), _unbroadcast(gr, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting."""
    g = _same_graph(a, b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}") from None
    av, bv = a.data, b.data
    return g._record(
        "mul", (a, b), out,
        lambda gr: (_unbroadcast(gr * bv, av.shape), _unbroadcast(gr * av, bv.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.graph._record("scale", (a,), a.data * c, lambda gr: (gr * c,))


def negate(a: Tensor) -> Tensor:
    return a.graph._record("negate", (a,), -a.data, lambda gr: (-gr,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return a.graph._record("relu", (a,), out, lambda gr: (gr * (out > 0),))


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape

    def vjp(gr):
        if axis is None:
            return (np.broadcast_to(gr, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(gr, axis), shape).copy(),)

    return a.graph._record("sum", (a,), a.data.sum(axis=axis), vjp)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError(f"mean over empty axis of shape {a.shape}")
    return scale(sum_(a, axis), 1.0 / n)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from None
    return a.graph._record("reshape", (a,), out, lambda gr: (gr.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    return a.graph._record("transpose", (a,), a.data.T.copy(), lambda gr: (gr.T,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis`` (rows by default)."""
    if not tensors:
        raise ShapeError("concat of nothing")
    g = _same_graph(*tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return g._record("concat", tensors, out, lambda gr: tuple(np.split(gr, bounds, axis=axis)))


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D ``table``; output shape is ``ids.shape + (dim,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"lookup table must be a matrix, got {table.shape}")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"lookup id out of range [0, {n})")
    tshape = table.shape

    def vjp(gr):
        out = np.zeros(tshape)
        np.add.at(out, ids.reshape(-1), gr.reshape(-1, tshape[1]))
        return (out,)

    return table.graph._record("lookup", (table,), table.data[ids], vjp)


def conv1d(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Convolution over time with ``floor(w/2)`` zeros padded on each side.

    ``x`` is ``B x T x D``, ``filters`` is ``H x w x D``, ``bias`` is ``H``.
    Output is ``B x (T + 2*(w//2) - w + 1) x H``; window ``p`` covers padded
    rows ``p .. p+w-1``.
    """
    g = _same_graph(x, filters, bias)
    if x.data.ndim != 3 or filters.data.ndim != 3 or x.shape[2] != filters.shape[2]:
        raise ShapeError(f"conv1d shape mismatch: input {x.shape}, filters {filters.shape}")
    if bias.shape != (filters.shape[0],):
        raise ShapeError(f"conv1d bias shape {bias.shape} for {filters.shape[0]} filters")
    B, T, D = x.shape
    H, w, _ = filters.shape
    pad = w // 2
    out_len = T + 2 * pad - w + 1
    if out_len < 1:
        raise ShapeError(f"conv1d window {w} longer than padded input {T + 2 * pad}")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    cols = np.concatenate([xp[:, k:k + out_len, :] for k in range(w)], axis=2).reshape(B * out_len, w * D)
    wmat = filters.data.reshape(H, w * D)
    out = (cols @ wmat.T + bias.data).reshape(B, out_len, H)

    def vjp(gr):
        gr2 = gr.reshape(B * out_len, H)
        gcols = (gr2 @ wmat).reshape(B, out_len, w * D)
        gxp = np.zeros_like(xp)
        for k in range(w):
            gxp[:, k:k + out_len, :] += gcols[:, :, k * D:(k + 1) * D]
        gw = (gr2.T @ cols).reshape(H, w, D)
        return gxp[:, pad:pad + T, :], gw, gr2.sum(axis=0)

    return g._record("conv1d", (x, filters, bias), out, vjp)


def max_pool_valid(x: Tensor, valid) -> Tensor:
    """Max over the first ``valid[b]`` time steps of ``x`` (``B x L x H``)."""
    valid = np.asarray(valid, dtype=np.int64)
    if x.data.ndim != 3 or valid.shape != (x.shape[0],):
        raise ShapeError(f"max_pool_valid: input {x.shape}, valid counts {valid.shape}")
    B, L, H = x.shape
    if valid.min() < 1 or valid.max() > L:
        raise ValueError(f"valid window counts must lie in [1, {L}]")
    masked = np.where(np.arange(L)[None, :, None] < valid[:, None, None], x.data, -np.inf)
    arg = masked.argmax(axis=1)  # B x H, first maximum wins ties
    out = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

    def vjp(gr):
        gx = np.zeros((B, L, H))
        np.put_along_axis(gx, arg[:, None, :], gr[:, None, :], axis=1)
        return (gx,)

    return x.graph._record("maxpool", (x,), out, vjp)


def softmax(v: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row maximum."""
    if v.data.size == 0 or v.shape[-1] == 0:
        raise ShapeError("softmax of an empty vector")
    _check_finite(v)
    z = v.data - v.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(gr):
        return (s * (gr - (gr * s).sum(axis=-1, keepdims=True)),)

    return v.graph._record("softmax", (v,), s, vjp)


def cross_entropy(dist: Tensor, target) -> Tensor:
    """``-log(dist[target])`` with probabilities floored at ``1e-12``.

    ``dist`` may carry leading batch axes; ``target`` then has that shape
    and the result holds one loss per distribution.
    """
    target = np.asarray(target, dtype=np.int64)
    p = dist.data
    if p.ndim == 0 or target.shape != p.shape[:-1]:
        raise ShapeError(f"cross_entropy: dist {p.shape} with targets {target.shape}")
    n = p.shape[-1]
    if target.size and (target.min() < 0 or target.max() >= n):
        raise IndexError(f"target index out of range [0, {n})")
    if not np.all(np.abs(p.sum(axis=-1) - 1.0) <= 1e-9):
        raise ValueError("cross_entropy needs normalized distributions")
    picked = np.take_along_axis(p, target[..., None], axis=-1)[..., 0]
    clamped = np.maximum(picked, PROB_FLOOR)

    def vjp(gr):
        gp = np.zeros_like(p)
        local = np.where(picked > PROB_FLOOR, -1.0 / clamped, 0.0)
        np.put_along_axis(gp, target[..., None], (gr * local)[..., None], axis=-1)
        return (gp,)

    return dist.graph._record("xent", (dist,), -np.log(clamped), vjp)


def sq_dist(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances between rows: ``M x d, N x d -> M x N``."""
    g = _same_graph(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"sq_dist shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = (diff ** 2).sum(axis=-1)

    def vjp(gr):
        t = 2.0 * gr[:, :, None] * diff
        return t.sum(axis=1), -t.sum(axis=0)

    return g._record("sqdist", (a, b), out, vjp)


# --- optimisation and verification ---------------------------------------------


def sgd_update(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    """Plain gradient step ``p - lr * g``; entries with zero gradient keep their exact bits."""
    if not lr >= 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    out = {}
    for name, p in params.items():
        if name not in grads:
            raise KeyError(f"no gradient for parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} for parameter {name!r} of shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
        if lr == 0:
            out[name] = p.copy()
        else:
            out[name] = np.where(g == 0, p, p - lr * g)
    return out


ScalarFn = Callable[[Graph, dict[str, Tensor]], Tensor]


def _forward(f: ScalarFn, params: Mapping[str, np.ndarray]) -> tuple[Graph, dict[str, Tensor], Tensor]:
    g = Graph()
    leaves = {name: g.param(name, value) for name, value in params.items()}
    root = f(g, leaves)
    return g, leaves, root


def grad_check(f: ScalarFn, params: Mapping[str, np.ndarray], eps: float = 1e-6) -> float:
    """Worst relative error between the tape gradient and central differences.

    ``f`` builds a scalar on the graph it is given from the named leaves.
    Absolute error is used wherever both magnitudes are below ``1e-8``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    g, _, root = _forward(f, params)
    _, _, again = _forward(f, params)
    if not np.array_equal(root.data, again.data):
        raise NonDeterministicError("two forward passes disagree")
    analytic = g.param_grads(g.backward(root))

    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        an = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _forward(f, params)[2].item()
            flat[i] = orig - eps
            down = _forward(f, params)[2].item()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            denom = max(abs(num), abs(an[i]))
            err = abs(num - an[i])
            if denom >= 1e-8:
                err /= denom
            worst = max(worst, err)
    return worst
