"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: each op builds a `Tensor` holding the numpy result plus a
closure that routes the output gradient to the op's parents. `backward()`
walks the graph in reverse topological order. Gradient buffers are never
mutated in place, so closures may hand the same array to several parents.

Only the ops this package needs are implemented; all of them are exact
(no approximations in the backward pass), which is what lets the
finite-difference suite demand rel. err < 1e-4 in float64.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / sampling paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction --------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    """Build an output Tensor; record the graph only when needed."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _acc(t, g):
    # never in place: `g` may be shared with another parent's buffer
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def power(a, p):
    a = as_tensor(a)
    out_data = a.data ** p

    def backward(g):
        _acc(a, g * (p * a.data ** (p - 1)))

    return _node(out_data, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data)
            _acc(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 else np.outer(a.data, g)
            _acc(b, _unbroadcast(gb, b.data.shape))

    return _node(out_data, (a, b), backward)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _acc(a, g * out_data)

    return _node(out_data, (a,), backward)


def log(a):
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        _acc(a, g / a.data)

    return _node(out_data, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        _acc(a, g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _acc(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a):
    """tanh-approximated GELU (the GPT-2 variant)."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        _acc(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))

    return _node(out_data, (a,), backward)


def silu(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def backward(g):
        _acc(a, g * (s * (1.0 + a.data * (1.0 - s))))

    return _node(out_data, (a,), backward)


# -- reductions ----------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(ax % a.data.ndim for ax in axes):
                gg = np.expand_dims(gg, ax)
        _acc(a, np.broadcast_to(gg, a.data.shape).copy())

    return _node(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


# -- shape manipulation ----------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        _acc(a, g.reshape(a.data.shape))

    return _node(out_data, (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    out_data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def backward(g):
        _acc(a, g.transpose(inv))

    return _node(out_data, (a,), backward)


def getitem(a, idx):
    """Slicing / fancy indexing. Fancy index backward uses scatter-add."""
    a = as_tensor(a)
    out_data = a.data[idx]
    fancy = isinstance(idx, np.ndarray) or (
        isinstance(idx, tuple) and any(isinstance(i, np.ndarray) for i in idx)
    )

    def backward(g):
        if not a.requires_grad:
            return
        ga = np.zeros_like(a.data)
        if fancy:
            np.add.at(ga, idx, g)
        else:
            ga[idx] += g
        _acc(a, ga)

    return _node(out_data, (a,), backward)


def embedding(table, ids):
    """Row gather: out[...] = table[ids[...]]. `ids` is an int array."""
    table = as_tensor(table)
    out_data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            _acc(table, gt)

    return _node(out_data, (table,), backward)


def scatter_rows(base, index, rows):
    """Replace base[index] with `rows` (index: tuple of int arrays, no duplicates)."""
    base, rows = as_tensor(base), as_tensor(rows)
    out_data = base.data.copy()
    out_data[index] = rows.data

    def backward(g):
        if base.requires_grad:
            gb = g.copy()
            gb[index] = 0.0
            _acc(base, gb)
        if rows.requires_grad:
            _acc(rows, g[index])

    return _node(out_data, (base, rows), backward)


def take_along(a, idx, axis=-1):
    """np.take_along_axis with gradient; idx must not repeat along `axis`."""
    a = as_tensor(a)
    out_data = np.take_along_axis(a.data, idx, axis=axis)

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.put_along_axis(ga, idx, g, axis=axis)
            _acc(a, ga)

    return _node(out_data, (a,), backward)


# -- fused neural-net ops ----------------------------------------------------------

def softmax(a, axis=-1):
    a = as_tensor(a)
    x = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(x)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gs = g * out_data
        _acc(a, gs - out_data * gs.sum(axis=axis, keepdims=True))

    return _node(out_data, (a,), backward)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    x = a.data - m
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out_data = x - lse
    sm = np.exp(out_data)

    def backward(g):
        _acc(a, g - sm * g.sum(axis=axis, keepdims=True))

    return _node(out_data, (a,), backward)


def layer_norm(a, gain, bias, eps=1e-5):
    """LayerNorm over the last axis with learned affine."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            red = tuple(range(g.ndim - 1))
            _acc(gain, (g * xhat).sum(axis=red))
        if bias.requires_grad:
            red = tuple(range(g.ndim - 1))
            _acc(bias, g.sum(axis=red))
        if a.requires_grad:
            gx = g * gain.data
            _acc(a, inv * (gx - gx.mean(axis=-1, keepdims=True)
                           - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _node(out_data, (a, gain, bias), backward)


def im2col3x3(a):
    """(B,H,W,C) -> (B,H,W,9C) of zero-padded 3x3 neighbourhoods (ki,kj,C order)."""
    a = as_tensor(a)
    B, H, W, C = a.data.shape
    xp = np.zeros((B, H + 2, W + 2, C), a.data.dtype)
    xp[:, 1:H + 1, 1:W + 1] = a.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    out_data = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B, H, W, 9 * C)

    def backward(g):
        if not a.requires_grad:
            return
        g6 = g.reshape(B, H, W, 3, 3, C)
        gp = np.zeros((B, H + 2, W + 2, C), g.dtype)
        for ki in range(3):
            for kj in range(3):
                gp[:, ki:ki + H, kj:kj + W] += g6[:, :, :, ki, kj]
        _acc(a, gp[:, 1:H + 1, 1:W + 1])

    return _node(out_data, (a,), backward)
