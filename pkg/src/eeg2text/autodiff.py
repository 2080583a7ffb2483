"""Reverse-mode automatic differentiation over float64 numpy arrays.

A tape of `Tensor` nodes is built during the forward pass; `backward()`
walks it once in reverse topological order. Everything runs in double
precision with a fixed evaluation order, so repeated runs with the same
inputs produce bit-identical values and gradients.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Large finite stand-in for -inf in attention masks: exp() underflows to 0
# without producing NaN in the backward pass.
NEG_INF = -1e30


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """One node of the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _toposort(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


# -- elementwise ops ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def bw(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(g, b.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def bw(g):
        a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = Tensor(a.data / b.data, parents=(a, b))

    def bw(g):
        a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def tanh(x) -> Tensor:
    x = astensor(x)
    y = np.tanh(x.data)
    out = Tensor(y, parents=(x,))

    def bw(g):
        x.accumulate(g * (1.0 - y * y))

    out._backward = bw if out.requires_grad else None
    return out


def sigmoid(x) -> Tensor:
    x = astensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y, parents=(x,))

    def bw(g):
        x.accumulate(g * y * (1.0 - y))

    out._backward = bw if out.requires_grad else None
    return out


def exp(x) -> Tensor:
    x = astensor(x)
    y = np.exp(x.data)
    out = Tensor(y, parents=(x,))

    def bw(g):
        x.accumulate(g * y)

    out._backward = bw if out.requires_grad else None
    return out


def log(x) -> Tensor:
    x = astensor(x)
    out = Tensor(np.log(x.data), parents=(x,))

    def bw(g):
        x.accumulate(g / x.data)

    out._backward = bw if out.requires_grad else None
    return out


def gelu(x) -> Tensor:
    """Exact GELU: x * Phi(x), with Phi the standard normal CDF."""
    x = astensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf, parents=(x,))

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        x.accumulate(g * (cdf + x.data * pdf))

    out._backward = bw if out.requires_grad else None
    return out


# -- reductions / shaping -------------------------------------------------


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = astensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), parents=(x,))

    def bw(g):
        if axis is None:
            x.accumulate(np.broadcast_to(g, x.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x.accumulate(np.broadcast_to(gg, x.data.shape).copy())

    out._backward = bw if out.requires_grad else None
    return out


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = astensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x, shape) -> Tensor:
    x = astensor(x)
    out = Tensor(x.data.reshape(shape), parents=(x,))

    def bw(g):
        x.accumulate(g.reshape(x.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def transpose(x, axes=None) -> Tensor:
    x = astensor(x)
    out = Tensor(x.data.transpose(axes), parents=(x,))
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        x.accumulate(g.transpose(inv))

    out._backward = bw if out.requires_grad else None
    return out


def take(x, idx) -> Tensor:
    """Basic or integer indexing with scatter-add backward."""
    x = astensor(x)
    out = Tensor(x.data[idx], parents=(x,))

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x.accumulate(full)

    out._backward = bw if out.requires_grad else None
    return out


def concat(parts, axis=0) -> Tensor:
    parts = [astensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), parents=tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            p.accumulate(g[tuple(sl)])

    out._backward = bw if out.requires_grad else None
    return out


def stack(parts, axis=0) -> Tensor:
    parts = [astensor(p) for p in parts]
    out = Tensor(np.stack([p.data for p in parts], axis=axis), parents=tuple(parts))

    def bw(g):
        for i, p in enumerate(parts):
            p.accumulate(np.take(g, i, axis=axis))

    out._backward = bw if out.requires_grad else None
    return out


# -- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    """2D or batched matmul; batch dimensions of a and b must match."""
    a, b = astensor(a), astensor(b)
    out = Tensor(np.matmul(a.data, b.data), parents=(a, b))

    def bw(g):
        a.accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        b.accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))

    out._backward = bw if out.requires_grad else None
    return out


def linear(x, w, b=None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def embedding(table, ids) -> Tensor:
    """Row gather from an embedding table, ids is a 1D int array."""
    table = astensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids], parents=(table,))

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table.accumulate(full)

    out._backward = bw if out.requires_grad else None
    return out


# -- fused neural-net ops -------------------------------------------------


def softmax(x, axis=-1) -> Tensor:
    x = astensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, parents=(x,))

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        x.accumulate(y * (g - dot))

    out._backward = bw if out.requires_grad else None
    return out


def layer_norm(x, gamma, beta, eps=1e-5) -> Tensor:
    """Normalization over the last axis with learnable scale and shift."""
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data, parents=(x, gamma, beta))

    def bw(g):
        gxhat = g * gamma.data
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        x.accumulate(inv * (gxhat - m1 - xhat * m2))
        gamma.accumulate(_unbroadcast(g * xhat, gamma.data.shape))
        beta.accumulate(_unbroadcast(g, beta.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def softmax_cross_entropy(logits, target_ids, mask=None) -> Tensor:
    """Mean negative log-likelihood over unmasked positions.

    logits: (N, V); target_ids: (N,) ints; mask: (N,) bool, True = counted.
    """
    logits = astensor(logits)
    target_ids = np.asarray(target_ids, dtype=np.int64)
    n, _ = logits.data.shape
    m = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise ValueError("cross entropy over zero unmasked positions")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    nll = -logp[np.arange(n), target_ids]
    out = Tensor((nll * m).sum() / count, parents=(logits,))

    def bw(g):
        probs = np.exp(logp)
        probs[np.arange(n), target_ids] -= 1.0
        probs *= (m / count)[:, None] * g
        logits.accumulate(probs)

    out._backward = bw if out.requires_grad else None
    return out


def dropout(x, rate, rng, train_mode) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not train_mode or rate <= 0.0:
        return astensor(x)
    keep = (rng.random(astensor(x).data.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


def causal_mask(n: int) -> np.ndarray:
    """(1, n, n) additive mask blocking attention to future positions."""
    m = np.triu(np.full((n, n), NEG_INF), k=1)
    return m[None, :, :]
