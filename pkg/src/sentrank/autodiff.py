"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Just enough surface for the memory re-ranker: matrix-vector products,
same-shape elementwise arithmetic, sigmoid/tanh/relu, absolute difference,
feature-axis concatenation, row pooling, row gather/stack (for batched
ranking losses) and inverted dropout. No generic broadcasting, no views.

Every op appends a node to an implicit tape; node ids increase in insertion
order, which is also a topological order of the graph. ``backward`` walks the
reachable subgraph in reverse id order, so repeated calls on an unchanged
graph produce identical gradients.

Ops accept either single samples (vectors) or row-batched samples
(one sample per row of a 2-d array); the two layouts share the same code
paths and semantics.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager

import numpy as np

from .errors import NonFiniteError, ShapeError

_ids = itertools.count()
_grad_enabled = True


class Tensor:
    """A node in the computation graph: a float64 array plus gradient slot."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "tid")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = data
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.tid = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    """Wrap an array as a graph input that receives no gradient."""
    return Tensor(np.asarray(data, dtype=np.float64))


def parameter(data) -> Tensor:
    """Wrap an array as a trainable leaf; ``backward`` fills its ``grad``."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def variable(data: np.ndarray) -> Tensor:
    """Like ``parameter`` but shares the caller's float64 array (no copy)."""
    if data.dtype != np.float64:
        raise ShapeError(f"variable: need float64 storage, got {data.dtype}")
    return Tensor(data, requires_grad=True)


@contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _finite_probe(out, op):
    # Cheap screen: a single reduction. Any NaN/Inf in the array makes the
    # sum non-finite (model values are O(1), so finite sums cannot overflow).
    if not math.isfinite(float(out.sum())):
        raise NonFiniteError(f"{op}: non-finite values in output")


def _node(op, out, parents, backward_fn):
    _finite_probe(out, op)
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(out, parents, backward_fn, requires_grad=True)
    return Tensor(out)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """`w @ x` for a vector x, or row-wise (`x @ w.T`) for a batch of rows."""
    wd, xd = w.data, x.data
    if wd.ndim != 2:
        raise ShapeError(f"matvec: weight must be 2-d, got {wd.shape}")
    if xd.ndim == 1:
        if xd.shape[0] != wd.shape[1]:
            raise ShapeError(f"matvec: weight {wd.shape} incompatible with input {xd.shape}")
        out = wd @ xd

        def backward_fn(g):
            if w.requires_grad:
                w.grad += np.outer(g, xd)
            if x.requires_grad:
                x.grad += wd.T @ g

    elif xd.ndim == 2:
        if xd.shape[1] != wd.shape[1]:
            raise ShapeError(f"matvec: weight {wd.shape} incompatible with input {xd.shape}")
        out = xd @ wd.T

        def backward_fn(g):
            if w.requires_grad:
                w.grad += g.T @ xd
            if x.requires_grad:
                x.grad += g @ wd

    else:
        raise ShapeError(f"matvec: input must be 1-d or 2-d, got {xd.shape}")
    return _node("matvec", out, (w, x), backward_fn)


def _same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g

    return _node("add", out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    out = a.data - b.data

    def backward_fn(g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad -= g

    return _node("sub", out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd

    def backward_fn(g):
        if a.requires_grad:
            a.grad += g * bd
        if b.requires_grad:
            b.grad += g * ad

    return _node("mul", out, (a, b), backward_fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a 1-d bias to a vector or to every row of a batch."""
    xd, bd = x.data, b.data
    if bd.ndim != 1:
        raise ShapeError(f"add_bias: bias must be 1-d, got {bd.shape}")
    if xd.shape[-1] != bd.shape[0] or xd.ndim not in (1, 2):
        raise ShapeError(f"add_bias: input {xd.shape} incompatible with bias {bd.shape}")
    out = xd + bd
    batched = xd.ndim == 2

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g
        if b.requires_grad:
            b.grad += g.sum(axis=0) if batched else g

    return _node("add_bias", out, (x, b), backward_fn)


def scale_rows(s: Tensor, x: Tensor) -> Tensor:
    """Scale a vector by a scalar, or each row of a batch by its own scalar."""
    sd, xd = s.data, x.data
    if xd.ndim == 1:
        if sd.shape not in ((), (1,)):
            raise ShapeError(f"scale_rows: need scalar scale for vector input, got {sd.shape}")
        factor = sd.reshape(())
        out = factor * xd

        def backward_fn(g):
            if s.requires_grad:
                s.grad += np.asarray((g * xd).sum()).reshape(sd.shape)
            if x.requires_grad:
                x.grad += g * factor

    elif xd.ndim == 2:
        if sd.shape not in ((xd.shape[0],), (xd.shape[0], 1)):
            raise ShapeError(f"scale_rows: scale {sd.shape} incompatible with input {xd.shape}")
        col = sd.reshape(-1, 1)
        out = xd * col

        def backward_fn(g):
            if s.requires_grad:
                s.grad += (g * xd).sum(axis=1).reshape(sd.shape)
            if x.requires_grad:
                x.grad += g * col

    else:
        raise ShapeError(f"scale_rows: input must be 1-d or 2-d, got {xd.shape}")
    return _node("scale_rows", out, (s, x), backward_fn)


def one_minus(x: Tensor) -> Tensor:
    out = 1.0 - x.data

    def backward_fn(g):
        if x.requires_grad:
            x.grad -= g

    return _node("one_minus", out, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form avoids exp overflow for large |x|.
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g * out * (1.0 - out)

    return _node("sigmoid", out, (x,), backward_fn)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g * (1.0 - out * out)

    return _node("tanh", out, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g * mask

    return _node("relu", out, (x,), backward_fn)


def absdiff(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("absdiff", a, b)
    diff = a.data - b.data
    out = np.abs(diff)
    sign = np.sign(diff)

    def backward_fn(g):
        if a.requires_grad:
            a.grad += g * sign
        if b.requires_grad:
            b.grad -= g * sign

    return _node("absdiff", out, (a, b), backward_fn)


def concat(*tensors: Tensor) -> Tensor:
    """Concatenate vectors, or batches of rows along the feature axis."""
    if len(tensors) < 2:
        raise ShapeError("concat: need at least two inputs")
    ndim = tensors[0].data.ndim
    if any(t.data.ndim != ndim for t in tensors) or ndim not in (1, 2):
        raise ShapeError(f"concat: inputs must share rank 1 or 2, got {[t.data.shape for t in tensors]}")
    if ndim == 1:
        out = np.concatenate([t.data for t in tensors])
    else:
        rows = tensors[0].data.shape[0]
        if any(t.data.shape[0] != rows for t in tensors):
            raise ShapeError(f"concat: row counts differ: {[t.data.shape for t in tensors]}")
        out = np.concatenate([t.data for t in tensors], axis=1)
    widths = [t.data.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.grad += g[..., lo:hi]

    return _node("concat", out, tuple(tensors), backward_fn)


def mean_rows(x: Tensor) -> Tensor:
    """Arithmetic mean over the rows of a 2-d array."""
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"mean_rows: input must be 2-d, got {xd.shape}")
    n = xd.shape[0]
    out = xd.mean(axis=0)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g / n

    return _node("mean_rows", out, (x,), backward_fn)


def mean_all(x: Tensor) -> Tensor:
    """Scalar mean over all entries."""
    n = x.data.size
    out = np.asarray(x.data.mean())

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g / n

    return _node("mean_all", out, (x,), backward_fn)


def vstack(tensors) -> Tensor:
    """Stack 2-d blocks with equal column counts along the row axis."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("vstack: need at least one input")
    cols = tensors[0].data.shape
    if any(t.data.ndim != 2 for t in tensors) or len(cols) != 2:
        raise ShapeError(f"vstack: inputs must be 2-d, got {[t.data.shape for t in tensors]}")
    if any(t.data.shape[1] != cols[1] for t in tensors):
        raise ShapeError(f"vstack: column counts differ: {[t.data.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=0)
    heights = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + heights)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.grad += g[lo:hi]

    return _node("vstack", out, tuple(tensors), backward_fn)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of a 2-d array by index (duplicates allowed)."""
    if x.data.ndim != 2:
        raise ShapeError(f"take_rows: input must be 2-d, got {x.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = x.data[idx]

    def backward_fn(g):
        if x.requires_grad:
            np.add.at(x.grad, idx, g)

    return _node("take_rows", out, (x,), backward_fn)


def dropout(x: Tensor, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale by 1/(1-rate).

    Identity (the input tensor itself, no rng consumption) outside training
    or at rate 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode needs an rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = x.data * mask

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g * mask

    return _node("dropout", out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every tensor the scalar ``loss`` depends on."""
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        for p in t.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append(p)
    nodes.sort(key=lambda t: t.tid)
    for t in nodes:
        t.grad = np.zeros_like(t.data)
    loss.grad = np.ones((), dtype=np.float64)
    for t in reversed(nodes):
        if t.backward_fn is not None:
            t.backward_fn(t.grad)
