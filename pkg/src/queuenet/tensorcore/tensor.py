"""Dense float64 tensors with reverse-mode differentiation.

Each op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Calling
:func:`backward` on a scalar walks that graph once in reverse topological
order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, value, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return gather(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(value: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    return value


def make(value: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap an op result; the backward closure returns one gradient (or None) per parent."""
    _finite(value, op)
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, needs, tuple(parents) if needs else (), backward_fn if needs else None, op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    return make(a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    return make(a.value - b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    return make(a.value * b.value, (a, b),
                lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
                "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return make(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g), "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make(value, tensors, backward, "concat")


def sum_rows(x: Tensor) -> Tensor:
    """Sum over the leading axis."""
    return make(x.value.sum(axis=0), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum_rows")


def total(x: Tensor) -> Tensor:
    return make(np.asarray(x.value.sum()), (x,), lambda g: (np.full(x.shape, float(g)),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.value.size
    return make(np.asarray(x.value.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),), "mean")


def gather(x: Tensor, idx) -> Tensor:
    """Rows ``x[idx]``; repeated indices accumulate gradient."""
    x, idx = as_tensor(x), np.asarray(idx)

    def backward(g):
        out = np.zeros_like(x.value)
        np.add.at(out, idx, g)
        return (out,)

    return make(x.value[idx], (x,), backward, "gather")


def scatter_add(x: Tensor, idx, n: int) -> Tensor:
    """``out[idx[i]] += x[i]`` into ``n`` zero rows (segment sum)."""
    x, idx = as_tensor(x), np.asarray(idx)
    if len(idx) != x.shape[0]:
        raise ShapeError(f"scatter_add: {len(idx)} indices for {x.shape[0]} rows")
    out = np.zeros((n,) + x.shape[1:])
    np.add.at(out, idx, x.value)
    return make(out, (x,), lambda g: (g[idx],), "scatter_add")


def index_update(base: Tensor, idx, rows: Tensor) -> Tensor:
    """Copy of ``base`` with rows ``idx`` (distinct) replaced by ``rows``."""
    base, rows, idx = as_tensor(base), as_tensor(rows), np.asarray(idx)
    if rows.shape != (len(idx),) + base.shape[1:]:
        raise ShapeError(f"index_update: rows {rows.shape} do not fit {len(idx)} rows of {base.shape}")
    value = base.value.copy()
    value[idx] = rows.value

    def backward(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx]

    return make(value, (base, rows), backward, "index_update")


def elementwise(x: Tensor, f: Callable, df: Callable, op: str = "elementwise") -> Tensor:
    """Apply ``f``; ``df(x_value, y_value)`` gives the local derivative."""
    x = as_tensor(x)
    with np.errstate(all="ignore"):  # non-finite results are reported by make()
        y = f(x.value)
    return make(y, (x,), lambda g: (g * df(x.value, y),), op)


def square(x: Tensor) -> Tensor:
    return elementwise(x, np.square, lambda v, y: 2.0 * v, "square")


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if grad is None:
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar or an explicit gradient, got {loss.shape}")
        grad = np.ones_like(loss.value)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.asarray(grad, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
