"""Minimal reverse-mode autodiff over numpy arrays.

Only the op set needed by the two model families and the CRF head is
provided. Every op returns a new :class:`Tensor` holding a closure that
pushes its output gradient back to its inputs.
"""
from __future__ import annotations

import numpy as np

DTYPES = {
    "fp64": np.float64,
    "fp32": np.float32,
    "fp16": np.float16,
    "u8": np.uint8,
}


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    # make numpy defer to our reflected operators
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind in "iub" and requires_grad:
            raise TypeError("integer tensors cannot require grad")
        if arr.dtype.kind not in "fiub":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph ------------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not (parent.requires_grad or parent._backward is not None):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operator sugar ---------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None and like.data.dtype.kind == "f":
        arr = arr.astype(like.data.dtype)
    return Tensor(arr)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _tracks(*ts):
    return any(t.requires_grad or t._backward is not None for t in ts)


def _make(data, parents, backward):
    out = Tensor(data)
    if _tracks(*parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------
def add(a, b):
    a, b = _pair(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), back)


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def sigmoid(x):
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1 - out),))


def _sigmoid(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x):
    v = x.data
    out = np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))
    return _make(out, (x,), lambda g: (g * _sigmoid(v),))


def silu(x):
    v = x.data
    s = _sigmoid(v)
    return _make(v * s, (x,), lambda g: (g * (s + v * s * (1 - s)),))


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1 - out * out),))


# -- linear algebra -------------------------------------------------------
def matmul(a, b):
    a, b = _pair(a, b)

    def back(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
        else:
            ga = g @ np.swapaxes(b.data, -1, -2)
        if a.ndim == 1:
            gb = np.multiply.outer(a.data, g)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back)


# -- reductions -----------------------------------------------------------
def tsum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), back)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


def logsumexp(x, axis=-1, keepdims=False):
    m = np.max(x.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make(out, (x,), back)


# -- shape ----------------------------------------------------------------
def reshape(x, shape):
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x, a, b):
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def getitem(x, idx):
    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), back)


def concat(ts, axis=-1):
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), back)


def pad_time(x, left):
    """Zero-pad axis -2 (time) on the left by ``left`` steps."""
    if left == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[-2] = (left, 0)
    sl = [slice(None)] * x.ndim
    sl[-2] = slice(left, None)
    sl = tuple(sl)
    return _make(np.pad(x.data, widths), (x,), lambda g: (g[sl],))


def where_const(mask, x, fill):
    """Replace ``x`` by the constant ``fill`` where ``mask`` is False."""
    out = np.where(mask, x.data, fill).astype(x.data.dtype)
    return _make(out, (x,), lambda g: (np.where(mask, g, 0).astype(g.dtype),))
