"""A small reverse-mode tape over numpy arrays.

Just enough operations for the recurrent/feedforward autoencoders, the
softmax cluster head and the logistic outcome heads. Every value is a
float64 ndarray; broadcasting is allowed for elementwise ops and gradients
are summed back to the operand shape.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Var",
    "as_var",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "square",
    "sigmoid",
    "softplus",
    "tanh",
    "relu",
    "exp",
    "log",
    "clip",
    "softmax",
    "sum",
    "mean",
    "where",
    "columns",
    "concat_columns",
    "backward",
]


class Var:
    """A node on the tape: a primal value, its adjoint and how to propagate it."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")
    __array_ufunc__ = None  # make ndarray <op> Var dispatch to Var's reflected ops

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

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


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(value, parents, backward_fn):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Var(value)
    return Var(value, parents, backward_fn)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g):
        return g @ b.value.T, a.value.T @ g

    return _node(a.value @ b.value, (a, b), bw)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), bw)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), bw)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(a.value * b.value, (a, b), bw)


def neg(a) -> Var:
    a = as_var(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def square(a) -> Var:
    a = as_var(a)
    return _node(a.value**2, (a,), lambda g: (2.0 * a.value * g,))


def sigmoid(a) -> Var:
    a = as_var(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Var:
    """log(1 + exp(a)) without overflow."""
    a = as_var(a)
    return _node(np.logaddexp(0.0, a.value), (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * a.value)),))


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out**2),))


def relu(a) -> Var:
    a = as_var(a)
    active = a.value > 0
    return _node(np.where(active, a.value, 0.0), (a,), lambda g: (g * active,))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def clip(a, lo: float, hi: float) -> Var:
    """Clamp to [lo, hi]; zero gradient where the clamp is active."""
    a = as_var(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a) -> Var:
    """Row-wise softmax of a 2-D array."""
    a = as_var(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _node(out, (a,), bw)


def sum(a, axis=None) -> Var:  # noqa: A001 - mirrors numpy
    a = as_var(a)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(a.value.sum(axis=axis), (a,), bw)


def mean(a, axis=None) -> Var:
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def where(mask, a, b) -> Var:
    """Elementwise ``a`` where ``mask`` holds, else ``b``; exact, unlike blending."""
    a, b = as_var(a), as_var(b)
    mask = np.asarray(mask, dtype=bool)

    def bw(g):
        return _unbroadcast(np.where(mask, g, 0.0), a.shape), _unbroadcast(np.where(mask, 0.0, g), b.shape)

    return _node(np.where(mask, a.value, b.value), (a, b), bw)


def columns(a, start: int, stop: int) -> Var:
    a = as_var(a)

    def bw(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return _node(a.value[:, start:stop], (a,), bw)


def concat_columns(parts) -> Var:
    parts = [as_var(p) for p in parts]
    widths = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, widths[i] : widths[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.value for p in parts], axis=1), parts, bw)


def backward(root: Var) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every leaf that requires it.

    ``root`` must be a scalar. Nodes are visited in reverse topological
    order; leaves that do not influence the root keep a zero gradient.
    """
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar root")
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    adjoint = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            adjoint[key] = pg if key not in adjoint else adjoint[key] + pg
