"""Array-level reverse-mode differentiation.

A :class:`Tensor` wraps a float64 ndarray and records the operation that
produced it.  Calling :meth:`Tensor.backward` on a scalar walks the graph in
reverse topological order and accumulates ``grad`` on every node.

Every op also accepts plain ndarrays; when no argument is a Tensor the op
returns a plain ndarray and records nothing, so the same model code serves
both the pure forward path and the traced path.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def backward(self) -> None:
        if self.value.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.value.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if isinstance(p, Tensor) and id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise NotImplementedError("division by a traced tensor")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)


def _val(x):
    return x.value if isinstance(x, Tensor) else x


def _traced(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _accum(t, g) -> None:
    if not isinstance(t, Tensor):
        return
    g = _unbroadcast(g, t.value.shape)
    # grads are never mutated in place, so views are safe to keep
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    out = _val(a) + _val(b)
    if not _traced(a, b):
        return out

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return Tensor(out, (a, b), bw)


def sub(a, b):
    out = _val(a) - _val(b)
    if not _traced(a, b):
        return out

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return Tensor(out, (a, b), bw)


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    if not _traced(a, b):
        return out

    def bw(g):
        if isinstance(a, Tensor):
            _accum(a, g * bv)
        if isinstance(b, Tensor):
            _accum(b, g * av)

    return Tensor(out, (a, b), bw)


def linear(x, w, b):
    """Affine map ``x @ w.T + b`` over the last axis of ``x``."""
    xv, wv, bv = _val(x), _val(w), _val(b)
    lead = xv.shape[:-1]
    x2 = xv.reshape(-1, xv.shape[-1])
    out = (x2 @ wv.T + bv).reshape(*lead, wv.shape[0])
    if not _traced(x, w, b):
        return out

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        if isinstance(x, Tensor):
            _accum(x, (g2 @ wv).reshape(xv.shape))
        if isinstance(w, Tensor):
            _accum(w, g2.T @ x2)
        if isinstance(b, Tensor):
            _accum(b, g2.sum(axis=0))

    return Tensor(out, (x, w, b), bw)


def matmul(a, b):
    """Plain 2-D matrix product."""
    av, bv = _val(a), _val(b)
    out = av @ bv
    if not _traced(a, b):
        return out

    def bw(g):
        if isinstance(a, Tensor):
            _accum(a, g @ bv.T)
        if isinstance(b, Tensor):
            _accum(b, av.T @ g)

    return Tensor(out, (a, b), bw)


def relu(x):
    xv = _val(x)
    out = np.maximum(xv, 0.0)
    if not _traced(x):
        return out

    def bw(g):
        # subgradient at 0 is 0
        _accum(x, g * (xv > 0.0))

    return Tensor(out, (x,), bw)


def tanh(x):
    out = np.tanh(_val(x))
    if not _traced(x):
        return out

    def bw(g):
        _accum(x, g * (1.0 - out * out))

    return Tensor(out, (x,), bw)


def elementwise(x, fn: Callable[[np.ndarray], np.ndarray], dfn: Callable[[np.ndarray], np.ndarray]):
    """Apply a scalar function with known derivative elementwise."""
    xv = _val(x)
    out = fn(xv)
    if not _traced(x):
        return out

    def bw(g):
        _accum(x, g * dfn(xv))

    return Tensor(out, (x,), bw)


def square(x):
    return elementwise(x, np.square, lambda v: 2.0 * v)


def total(x):
    out = np.asarray(_val(x).sum())
    if not _traced(x):
        return out
    shape = x.value.shape

    def bw(g):
        _accum(x, np.broadcast_to(g, shape))

    return Tensor(out, (x,), bw)


def mean(x):
    n = _val(x).size
    if n == 0:
        raise ContractError("mean of an empty array")
    return mul(total(x), 1.0 / n)


def take(x, idx):
    xv = _val(x)
    out = xv[idx]
    if not _traced(x):
        return out

    def bw(g):
        full = np.zeros_like(xv)
        if _is_basic(idx):
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accum(x, full)

    return Tensor(out, (x,), bw)


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def reshape(x, shape):
    xv = _val(x)
    out = xv.reshape(shape)
    if not _traced(x):
        return out

    def bw(g):
        _accum(x, g.reshape(xv.shape))

    return Tensor(out, (x,), bw)


def rowdot(a, b):
    """Contract the last axis: ``out[..., p] = sum_k a[..., k] * b[..., p, k]``.

    ``a`` has shape (n, q) and ``b`` has shape (n, p, q).
    """
    av, bv = _val(a), _val(b)
    out = np.einsum("nk,npk->np", av, bv)
    if not _traced(a, b):
        return out

    def bw(g):
        if isinstance(a, Tensor):
            _accum(a, np.einsum("np,npk->nk", g, bv))
        if isinstance(b, Tensor):
            _accum(b, g[:, :, None] * av[:, None, :])

    return Tensor(out, (a, b), bw)


def value(x) -> np.ndarray:
    return _val(x)
