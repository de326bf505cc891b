"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every primitive builds a new :class:`Tensor` whose ``parents`` point at its
operands. :func:`backward` orders the graph reachable from a scalar loss
(the tape) and replays it in reverse, accumulating ``grad`` on every tensor
that requires it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.op = op
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    out = Tensor(value, requires_grad=any(p.requires_grad for p in parents), parents=tuple(parents), op=op)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# --- binary elementwise ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    out = _result(a.data + b.data, (a, b), "add")

    def _back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out._backward = _back
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    out = _result(a.data - b.data, (a, b), "sub")

    def _back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    out._backward = _back
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    out = _result(a.data * b.data, (a, b), "mul")

    def _back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    out._backward = _back
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = _result(-a.data, (a,), "neg")
    out._backward = lambda g: _accumulate(a, -g)
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")

    def _back(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    out._backward = _back
    return out


# --- unary elementwise ----------------------------------------------------

def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        v = np.exp(a.data)
    out = _result(v, (a,), "exp")
    out._backward = lambda g: _accumulate(a, g * v)
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.log(a.data)
    out = _result(v, (a,), "log")
    out._backward = lambda g: _accumulate(a, g / a.data)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    v = _sigmoid(a.data)
    out = _result(v, (a,), "sigmoid")
    out._backward = lambda g: _accumulate(a, g * v * (1.0 - v))
    return out


def log_sigmoid(a) -> Tensor:
    """ln sigmoid(a), computed without forming sigmoid(a)."""
    a = _as_tensor(a)
    x = a.data
    v = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    out = _result(v, (a,), "log_sigmoid")
    out._backward = lambda g: _accumulate(a, g * _sigmoid(-x))
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = _result(a.data * mask, (a,), "relu")
    out._backward = lambda g: _accumulate(a, g * mask)
    return out


# --- softmax family -------------------------------------------------------

def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim == 0:
        raise ShapeError("log_softmax: needs at least one axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    v = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _result(v, (a,), "log_softmax")
    p = np.exp(v)

    def _back(g):
        _accumulate(a, g - p * g.sum(axis=axis, keepdims=True))

    out._backward = _back
    return out


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim == 0:
        raise ShapeError("softmax: needs at least one axis")
    shifted = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    v = shifted / shifted.sum(axis=axis, keepdims=True)
    out = _result(v, (a,), "softmax")

    def _back(g):
        _accumulate(a, v * (g - (g * v).sum(axis=axis, keepdims=True)))

    out._backward = _back
    return out


# --- reductions and indexing ----------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")

    def _back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    out._backward = _back
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        v = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    out = _result(v, ts, "concat")
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def _back(g):
        for t, piece in zip(ts, np.split(g, cuts, axis=axis)):
            _accumulate(t, piece)

    out._backward = _back
    return out


def take(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; serves both embeddings and batch gathers."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"take: ids out of range [0, {n})")
    out = _result(table.data[ids], (table,), "take")

    def _back(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids, g)
            _accumulate(table, acc)

    out._backward = _back
    return out


def pick(a, cols) -> Tensor:
    """Select ``a[r, cols[r]]`` for every row r of a 2-D tensor."""
    a = _as_tensor(a)
    cols = np.asarray(cols, dtype=np.int64)
    if a.data.ndim != 2 or cols.shape != (a.shape[0],):
        raise ShapeError(f"pick: {a.shape} with column ids {cols.shape}")
    if cols.size and (cols.min() < 0 or cols.max() >= a.shape[1]):
        raise IndexError(f"pick: column ids out of range [0, {a.shape[1]})")
    rows = np.arange(a.shape[0])
    out = _result(a.data[rows, cols], (a,), "pick")

    def _back(g):
        acc = np.zeros_like(a.data)
        acc[rows, cols] = g
        _accumulate(a, acc)

    out._backward = _back
    return out


# --- tape -----------------------------------------------------------------

def tape(root: Tensor) -> list[Tensor]:
    """Topological order of the graph feeding ``root`` (root last)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_of(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Run backward and return gradients keyed like ``params`` (zeros if untouched)."""
    backward(loss)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
