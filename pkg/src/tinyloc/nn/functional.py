"""Layer primitives shared by both model families."""
import numpy as np

from .tensor import (_make, as_tensor, concat, getitem, matmul, pad_time,
                     silu, sqrt, where_const)

__all__ = [
    "linear", "causal_conv1d", "depthwise_causal_conv1d", "scaled_dot_attention",
    "silu", "softmax", "log_softmax", "layer_norm",
]


def linear(x, weight, bias=None):
    """Affine map ``y = x @ weight.T + bias`` over the trailing axis."""
    x = as_tensor(x, like=weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"linear: input trailing dim {x.shape[-1]} != weight in_features {weight.shape[1]}")
    y = matmul(x, weight.T)
    if bias is not None:
        y = y + bias
    return y


def _shifted_windows(x, k):
    # (..., T, C) -> (..., T, k*C); block j holds x[t - j]
    T = x.shape[-2]
    xp = pad_time(x, k - 1)
    blocks = []
    for j in range(k):
        sl = [slice(None)] * x.ndim
        sl[-2] = slice(k - 1 - j, k - 1 - j + T)
        blocks.append(getitem(xp, tuple(sl)))
    return blocks[0] if k == 1 else concat(blocks, axis=-1)


def causal_conv1d(x, weight, bias=None):
    """Causal 1-D convolution over axis -2.

    ``weight`` has shape ``(out_channels, in_channels, k)`` and tap ``j``
    multiplies the input ``j`` steps in the past, so the output at ``t``
    only sees inputs at positions ``<= t``.
    """
    x = as_tensor(x, like=weight)
    out_c, in_c, k = weight.shape
    if k <= 0:
        raise ValueError("kernel width must be >= 1")
    if x.shape[-1] != in_c:
        raise ValueError(f"causal_conv1d: input has {x.shape[-1]} channels, weight expects {in_c}")
    win = _shifted_windows(x, k)
    # (out, in, k) -> (out, k, in) -> (out, k*in), matching the window layout
    w2 = weight.swapaxes(1, 2).reshape(out_c, k * in_c)
    y = matmul(win, w2.T)
    if bias is not None:
        y = y + bias
    return y


def depthwise_causal_conv1d(x, weight, bias=None):
    """Per-channel causal convolution; ``weight`` is ``(channels, k)``."""
    x = as_tensor(x, like=weight)
    C, k = weight.shape
    if k <= 0:
        raise ValueError("kernel width must be >= 1")
    T = x.shape[-2]
    xp = pad_time(x, k - 1)
    y = None
    for j in range(k):
        sl = [slice(None)] * x.ndim
        sl[-2] = slice(k - 1 - j, k - 1 - j + T)
        term = getitem(xp, tuple(sl)) * weight[:, j]
        y = term if y is None else y + term
    if bias is not None:
        y = y + bias
    return y


def softmax(x, axis=-1):
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), back)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), back)


def layer_norm(x, weight=None, bias=None, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    y = xc / sqrt(var + eps)
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y


def scaled_dot_attention(q, k, v, causal=True, return_weights=False):
    """Single-head scaled dot-product attention over axis -2.

    With ``causal`` set, row ``t`` only attends to positions ``<= t``.
    """
    q, k, v = (as_tensor(t) for t in (q, k, v))
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    T, H = q.shape[-2], q.shape[-1]
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(H))
    if causal:
        mask = np.tril(np.ones((T, T), dtype=bool))
        scores = where_const(mask, scores, -np.inf)
    w = softmax(scores, axis=-1)
    out = matmul(w, v)
    return (out, w) if return_weights else out


def sinusoidal_encoding(T, dim, dtype=np.float32):
    """Standard sin/cos position table of shape ``(T, dim)``."""
    pos = np.arange(T)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / max(dim, 1))
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)

