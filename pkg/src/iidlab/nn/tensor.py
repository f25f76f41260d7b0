"""A small reverse-mode autodiff engine over numpy arrays.

Every op builds an output ``Tensor`` that remembers its parents and a closure
mapping the output gradient to parent gradients.  ``Tensor.backward`` walks
the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _make(data, parents, backward, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward, "div")


def power(a, exponent: float):
    a = as_tensor(a)

    def backward(g):
        a._accum(g * exponent * a.data ** (exponent - 1))

    return _make(a.data**exponent, (a,), backward, "pow")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        a._accum(g * mask)

    return _make(a.data * mask, (a,), backward, "relu")


def _sigmoid(x):
    # Split by sign so neither branch overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


def sigmoid(a):
    """Logistic function, clamped one ulp inside (0, 1) so it never saturates."""
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def backward(g):
        a._accum(g * s * (1 - s))

    tiny = np.finfo(s.dtype).epsneg
    return _make(np.clip(s, tiny, 1 - tiny), (a,), backward, "sigmoid")


def silu(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def backward(g):
        a._accum(g * s * (1 + a.data * (1 - s)))

    return _make(a.data * s, (a,), backward, "silu")


# -- reductions and shape ops -------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)

    def backward(g):
        a._accum(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def getitem(a, idx):
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g) if _has_advanced(idx) else full.__setitem__(idx, g)
        a._accum(full)

    return _make(a.data[idx], (a,), backward, "getitem")


def _has_advanced(idx):
    idx = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# -- spatial ops on (N, C, H, W) ----------------------------------------------------


def _im2col(xh, k):
    """(N, H, W, C) -> (N*H*W, k*k*C) patches with zero 'same' padding."""
    n, h, w, c = xh.shape
    if k == 1:
        return np.ascontiguousarray(xh).reshape(n * h * w, c)
    p = k // 2
    xp = np.pad(xh, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, k * k * c)


def _kernel_matrix(w):
    o, c, k, _ = w.shape
    return w.transpose(2, 3, 1, 0).reshape(k * k * c, o)


def conv2d(x, w, b=None):
    """Stride-1 'same' convolution (cross-correlation) with odd square kernels.

    Works through an im2col matrix in NHWC order; outputs are NCHW views over
    NHWC memory so the next convolution transposes for free.  The input
    gradient is itself a convolution of the output gradient with the flipped,
    channel-transposed kernel.
    """
    x, w = as_tensor(x), as_tensor(w)
    o, c, k, _ = w.shape
    n, _, h, wd = x.shape
    cols = _im2col(x.data.transpose(0, 2, 3, 1), k)
    out = cols @ _kernel_matrix(w.data)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out += b.data
        parents.append(b)
    out = out.reshape(n, h, wd, o).transpose(0, 3, 1, 2)

    def backward(g):
        gh = g.transpose(0, 2, 3, 1)
        gm = np.ascontiguousarray(gh).reshape(n * h * wd, o)
        if w.requires_grad:
            w._accum((cols.T @ gm).reshape(k, k, c, o).transpose(3, 2, 0, 1))
        if b is not None and b.requires_grad:
            b._accum(gm.sum(axis=0))
        if x.requires_grad:
            flipped = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx = _im2col(gh, k) @ _kernel_matrix(flipped)
            x._accum(gx.reshape(n, h, wd, c).transpose(0, 3, 1, 2))

    return _make(out, parents, backward, "conv2d")


def avg_pool2d(x, factor=2):
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"spatial size {(h, w)} not divisible by {factor}")
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def backward(g):
        up = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        x._accum(up / (factor * factor))

    return _make(out, (x,), backward, "avg_pool2d")


def _sl(ndim, axis, sl):
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def _up2(x, axis):
    """2x linear upsampling along one axis with half-pixel centers (edge clamped)."""
    nd = x.ndim
    prev = np.concatenate([x[_sl(nd, axis, slice(0, 1))], x[_sl(nd, axis, slice(None, -1))]], axis)
    nxt = np.concatenate([x[_sl(nd, axis, slice(1, None))], x[_sl(nd, axis, slice(-1, None))]], axis)
    even = 0.75 * x + 0.25 * prev
    odd = 0.75 * x + 0.25 * nxt
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(x.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def _up2_adjoint(g, axis):
    nd = g.ndim
    ge = g[_sl(nd, axis, slice(0, None, 2))]
    go = g[_sl(nd, axis, slice(1, None, 2))]
    gx = 0.75 * (ge + go)
    gx[_sl(nd, axis, slice(None, -1))] += 0.25 * ge[_sl(nd, axis, slice(1, None))]
    gx[_sl(nd, axis, slice(0, 1))] += 0.25 * ge[_sl(nd, axis, slice(0, 1))]
    gx[_sl(nd, axis, slice(1, None))] += 0.25 * go[_sl(nd, axis, slice(None, -1))]
    gx[_sl(nd, axis, slice(-1, None))] += 0.25 * go[_sl(nd, axis, slice(-1, None))]
    return gx


def upsample_bilinear(x):
    """2x bilinear upsampling of (N, C, H, W) with half-pixel centers."""
    x = as_tensor(x)
    out = _up2(_up2(x.data, 2), 3)

    def backward(g):
        x._accum(_up2_adjoint(_up2_adjoint(g, 3), 2))

    return _make(out, (x,), backward, "upsample_bilinear")


def forward_diff(x, axis):
    """Forward difference along ``axis`` with a zero in the last position."""
    x = as_tensor(x)
    axis = axis % x.ndim
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    hi, lo = tuple(hi), tuple(lo)
    out = np.zeros_like(x.data)
    out[lo] = x.data[hi] - x.data[lo]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[hi] += g[lo]
        gx[lo] -= g[lo]
        x._accum(gx)

    return _make(out, (x,), backward, "forward_diff")
