"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape: each op returns a Var holding the forward value, its parent
Vars, and a closure that maps the output cotangent to parent cotangents.
`backward()` walks the tape in reverse topological order. Inside a
`no_grad()` block ops compute values only, so inference and training share
one numeric code path.

Convolution adjoints are recomputed from the saved operand references
(flip-kernel correlation for the input, valid-mode correlation for the
kernel) instead of caching im2col buffers; this keeps the tape's memory
proportional to the activations themselves.
"""

from __future__ import annotations

import threading

import numpy as np

from .tensor_core import (corr2d_same, depthwise_corr2d_same,
                          depthwise_kernel_grad)

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class no_grad:
    """Context manager: ops inside compute values without recording."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


class Var:
    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad")

    def __init__(self, value, parents=(), vjp=None, requires_grad=True):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents if _grad_enabled() else ()
        self.vjp = vjp if _grad_enabled() else None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def backward(self, seed=None):
        """Accumulate gradients of this (scalar) Var into the tape."""
        if seed is None:
            if self.value.ndim != 0:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones((), dtype=np.float64)
        order = _toposort(self)
        owned = {}
        for v in order:
            v.grad = None
        self.grad = np.asarray(seed, dtype=np.float64)
        for v in reversed(order):
            if v.vjp is None or v.grad is None:
                continue
            for parent, contrib in zip(v.parents, v.vjp(v.grad)):
                if contrib is None or not parent.requires_grad:
                    continue
                if isinstance(contrib, ScatterGrad):
                    if parent.grad is None:
                        parent.grad = np.zeros(parent.value.shape)
                        owned[id(parent)] = True
                    elif not owned[id(parent)]:
                        parent.grad = parent.grad.copy()
                        owned[id(parent)] = True
                    parent.grad[contrib.idx] += contrib.grad
                elif parent.grad is None:
                    # Keep the contribution as-is (it may alias another
                    # grad); materialize a private buffer only if a second
                    # contribution arrives.
                    parent.grad = np.asarray(contrib, dtype=np.float64)
                    owned[id(parent)] = False
                elif not owned[id(parent)]:
                    parent.grad = parent.grad + contrib
                    owned[id(parent)] = True
                else:
                    parent.grad += contrib


def _toposort(root: Var) -> list[Var]:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(x, requires_grad=False)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(value, parents, vjp):
    if not _grad_enabled():
        return Var(value, requires_grad=False)
    return Var(value, parents=parents, vjp=vjp,
               requires_grad=any(p.requires_grad for p in parents))


def add(a, b):
    a, b = as_var(a), as_var(b)
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_var(a), as_var(b)
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a):
    a = as_var(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def reshape(a, shape):
    a = as_var(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


class ScatterGrad:
    """Sparse cotangent: `grad` belongs at `idx` of the parent's buffer.

    Lets slicing ops hand back just the slice instead of a full-size
    zero-filled array; backward() scatters it in place.
    """

    __slots__ = ("idx", "grad")

    def __init__(self, idx, grad):
        self.idx = idx
        self.grad = grad


def index(a, idx):
    """Basic (slice/int) indexing with zero-scatter backward."""
    a = as_var(a)
    return _make(a.value[idx], (a,), lambda g: (ScatterGrad(idx, g),))


def concat(vs, axis: int = -1):
    """Concatenate Vars along an axis; backward splits the cotangent.

    Repeating the same Var in vs tiles it; its split pieces are then
    accumulated, which is exactly the tiling adjoint.
    """
    vs = [as_var(v) for v in vs]
    sizes = [v.shape[axis if axis >= 0 else v.value.ndim + axis] for v in vs]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([v.value for v in vs], axis=axis), tuple(vs), vjp)


def vsum(a, axis=None, keepdims=False):
    a = as_var(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def vmean(a, axis=None, keepdims=False):
    a = as_var(a)
    shape = a.shape
    if axis is None:
        n = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([shape[i] for i in axes]))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, shape).copy(),)

    return _make(a.value.mean(axis=axis, keepdims=keepdims), (a,), vjp)


def vsigmoid(a):
    a = as_var(a)
    # Same expression as tensor_core.sigmoid so both paths agree bitwise.
    out = 0.5 * np.tanh(0.5 * a.value) + 0.5
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def vtanh(a):
    a = as_var(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def vabs(a):
    a = as_var(a)
    s = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * s,))


def vsoftmax(a, axis=-1):
    a = as_var(a)
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    ez = np.exp(z)
    out = ez / ez.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, (a,), vjp)


def linear(x, w):
    """x (B,C) @ w.T (C,K) -> (B,K); logits per row of the weight matrix."""
    x, w = as_var(x), as_var(w)
    xv, wv = x.value, w.value
    return _make(xv @ wv.T, (x, w),
                 lambda g: (g @ wv, g.T @ xv))


def readout(pooled, w, b):
    """pooled (B,C) -> pooled @ w + b, scalar bias."""
    pooled, w, b = as_var(pooled), as_var(w), as_var(b)
    pv, wv = pooled.value, w.value
    return _make(pv @ wv + b.value, (pooled, w, b),
                 lambda g: (np.outer(g, wv), g @ pv, np.asarray(g.sum())))


def conv2d_same(x, k, bias):
    """Same-mode cross-correlation over the last two axes with one kernel.

    x: Var (..., H, W); k: Var (kh, kw); bias: Var scalar.
    """
    x, k, bias = as_var(x), as_var(k), as_var(bias)
    kv = k.value
    out = corr2d_same(x.value, kv) + bias.value

    def vjp(g):
        gx = corr2d_same(g, kv[::-1, ::-1]) if x.requires_grad else None
        gk = None
        if k.requires_grad:
            kh, kw = kv.shape
            ph, pw = (kh - 1) // 2, (kw - 1) // 2
            pad = [(0, 0)] * (x.value.ndim - 2) + [(ph, ph), (pw, pw)]
            xp = np.pad(x.value, pad)
            oh, ow = g.shape[-2:]
            gk = np.empty((kh, kw))
            for m in range(kh):
                for n in range(kw):
                    gk[m, n] = np.sum(g * xp[..., m:m + oh, n:n + ow])
        return gx, gk, np.asarray(g.sum())

    return _make(out, (x, k, bias), vjp)


def depthwise_conv2d_same(x, kernels):
    """Per-channel same-mode correlation, channels last.

    x: Var (..., H, W, C); kernels: Var (C, kh, kw).
    """
    x, kernels = as_var(x), as_var(kernels)
    kv = kernels.value
    out = depthwise_corr2d_same(x.value, kv)

    def vjp(g):
        gx = depthwise_corr2d_same(g, np.ascontiguousarray(kv[:, ::-1, ::-1])) \
            if x.requires_grad else None
        gk = depthwise_kernel_grad(g, x.value, kv.shape[-2], kv.shape[-1]) \
            if kernels.requires_grad else None
        return gx, gk

    return _make(out, (x, kernels), vjp)
