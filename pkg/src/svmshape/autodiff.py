"""Small reverse-mode autodiff over float64 numpy arrays.

Every op appends a node to the :class:`Tape` of its inputs; :func:`backward`
walks the tape in reverse.  Broadcasting is limited to scalar scaling and the
row-vector bias of :func:`add_bias`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeMismatch
from .svm_core import KernelParams, SvmModel, discriminant, fit
from .svm_diff import backward_discriminant


@dataclass
class Node:
    op: str
    inputs: tuple
    shape: tuple
    value: np.ndarray
    vjp: Callable | None = None
    name: str | None = None


class Tape:
    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.check_finite = check_finite

    def _push(self, op, inputs, value, vjp=None, name=None) -> "Tensor":
        if self.check_finite and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite value produced by {op}")
        for i in inputs:
            if i >= len(self.nodes):
                raise ValueError("input id must precede its consumer")
        self.nodes.append(Node(op, tuple(inputs), value.shape, value, vjp, name))
        return Tensor(value, self, len(self.nodes) - 1)

    def leaf(self, value, name: str | None = None) -> "Tensor":
        return self._push("leaf", (), np.array(value, dtype=float), None, name)

    def leaves(self) -> dict[str, int]:
        return {n.name: i for i, n in enumerate(self.nodes) if n.op == "leaf" and n.name}


class Tensor:
    __slots__ = ("data", "tape", "id")

    def __init__(self, data, tape: Tape | None = None, id: int | None = None):
        self.data = np.asarray(data, dtype=float)
        self.tape = tape
        self.id = id

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, id={self.id})"


def constant(value) -> Tensor:
    return Tensor(np.array(value, dtype=float))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _record(op, inputs: Sequence[Tensor], value, vjp, name=None) -> Tensor:
    """Record ``value`` on the tape shared by ``inputs`` (or return a constant)."""
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if not tapes:
        return Tensor(value)
    if len(tapes) > 1:
        raise ValueError("inputs belong to different tapes")
    tape = next(iter(tapes.values()))
    ids = tuple(t.id if t.tape is not None else -1 for t in inputs)
    return tape._push(op, tuple(i for i in ids if i >= 0), value, (ids, vjp), name)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


# forward ops ------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if b.data.ndim != 2 or a.data.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data

    def vjp(g):
        if av.ndim == 1:
            return b.data @ g, np.outer(av, g)
        return g @ bv.T, av.T @ g

    return _record("matmul", (a, b), av @ bv, vjp)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _same_shape("add", a, b)
    return _record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _same_shape("sub", a, b)
    return _record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def add_bias(x, b) -> Tensor:
    """``x + b`` with ``b`` a row vector added to every row of the 2-D ``x``."""
    x, b = _wrap(x), _wrap(b)
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"add_bias: {x.shape} + {b.shape}")
    red = tuple(range(x.data.ndim - 1))
    return _record("add_bias", (x, b), x.data + b.data, lambda g: (g, g.sum(axis=red)))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    nd = ts[0].data.ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.data.ndim != nd or any(t.shape[d] != ts[0].shape[d] for d in range(nd) if d != ax):
            raise ShapeMismatch(f"concat: {[t.shape for t in ts]} along axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _record("concat", ts, np.concatenate([t.data for t in ts], axis=ax),
                   lambda g: tuple(np.split(g, sizes, axis=ax)))


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    return _record("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def softplus(x) -> Tensor:
    x = _wrap(x)
    v = x.data
    out = np.where(v > 30.0, v, np.log1p(np.exp(np.minimum(v, 30.0))))
    sig = _sigmoid(v)
    return _record("softplus", (x,), out, lambda g: (g * sig,))


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    s = _sigmoid(x.data)
    return _record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = _wrap(x)
    t = np.tanh(x.data)
    return _record("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def scale(s, x) -> Tensor:
    """Scalar-times-tensor; ``s`` is a float or a tensor with one element."""
    x = _wrap(x)
    if not isinstance(s, Tensor):
        c = float(s)
        return _record("scale", (x,), c * x.data, lambda g: (c * g,))
    if s.data.size != 1:
        raise ShapeMismatch(f"scale: factor must have one element, got {s.shape}")
    sv = float(s.data.reshape(()))
    xv = x.data
    return _record("scale", (s, x), sv * xv,
                   lambda g: (np.full(s.shape, float(np.sum(g * xv))), sv * g))


def total(x) -> Tensor:
    x = _wrap(x)
    shape = x.shape
    return _record("sum", (x,), np.array(x.data.sum()), lambda g: (np.full(shape, float(g)),))


sum = total  # noqa: A001 - op name used throughout the pipeline


def mean(x) -> Tensor:
    x = _wrap(x)
    return scale(1.0 / x.data.size, total(x))


def square(x) -> Tensor:
    x = _wrap(x)
    xv = x.data
    return _record("square", (x,), xv * xv, lambda g: (2.0 * xv * g,))


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    old = x.shape
    return _record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def take(x, index: slice) -> Tensor:
    """Slice along the first axis."""
    x = _wrap(x)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _record("take", (x,), x.data[index].copy(), vjp)


def svm_discriminant(support, sigma, queries, labels, mode: str, C: float = 1.0,
                     tol: float = 1e-8) -> tuple[Tensor, SvmModel]:
    """Custom node: fit the SVM on ``support`` and evaluate ``P`` at ``queries``.

    Its backward pass is :func:`svmshape.svm_diff.backward_discriminant`.
    """
    support, sigma, queries = _wrap(support), _wrap(sigma), _wrap(queries)
    if support.data.ndim != 2 or support.shape[1] != 3 or queries.shape[-1] != 3:
        raise ShapeMismatch("svm_discriminant expects N x 3 support and Q x 3 queries")
    model = fit(support.data, labels, KernelParams(mode, sigma.data), C, tol)
    values = discriminant(model, queries.data)
    qv = queries.data

    def vjp(g):
        grads = backward_discriminant(model, qv, g)
        return grads.d_support, grads.d_sigma.reshape(sigma.shape), grads.d_query

    return _record("svm", (support, sigma, queries), np.atleast_1d(values), vjp), model


# reverse pass -----------------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of the scalar ``loss`` for every named leaf on ``tape``."""
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    if loss.data.size != 1:
        raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones(loss.shape)}
    for idx in range(loss.id, -1, -1):
        node = tape.nodes[idx]
        g = grads.pop(idx, None) if node.op != "leaf" else grads.get(idx)
        if g is None or node.vjp is None:
            continue
        ids, fn = node.vjp
        parts = fn(g)
        for i, part in zip(ids, parts):
            if i < 0:
                continue
            part = np.asarray(part, dtype=float).reshape(tape.nodes[i].shape)
            grads[i] = grads[i] + part if i in grads else part
    out = {}
    for name, i in tape.leaves().items():
        out[name] = grads.get(i, np.zeros(tape.nodes[i].shape))
    return out
