"""Post-training int8 quantization of linear layers.

Two schemes:

* static, vector-wise: one (scale, zero_point) per weight row over the
  non-outlier columns; input columns whose calibration activations reach
  the outlier threshold keep their weight column in fp16, and the two
  partial products are summed (mixed precision);
* dynamic, tensor-wise: one (scale, zero_point) for the whole weight;
  activations are quantized on the fly from each call's own range.

Only :class:`~tinyloc.nn.Linear` layers are touched.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np

from .nn.layers import Linear, Module
from .nn.tensor import Tensor

log = logging.getLogger(__name__)

STATIC = "static_vectorwise"
DYNAMIC = "dynamic_tensorwise"
DEFAULT_TAU = 6.0
RANGE_EPS = 1e-8
# fp32 scale + int32 zero point
QPARAM_BYTES = 8


class AlreadyQuantizedError(ValueError):
    pass


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    qmin: int = 0
    qmax: int = 255


def int_range(signed=False):
    return (-128, 127) if signed else (0, 255)


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def affine_params(min_float, max_float, qmin=0, qmax=255) -> QuantParams:
    """Scale and zero point mapping ``[min_float, max_float]`` onto ``[qmin, qmax]``.

    ``zero_point = qmin + round(-min_float / scale)``, which is the plain
    ``round(-min_float / scale)`` for the unsigned range, clamped into range.
    The scale is rounded up to the nearest fp32 value so that it survives
    serialization unchanged and still covers the whole range.
    """
    if not max_float > min_float:
        raise ValueError(f"degenerate float range [{min_float}, {max_float}]")
    if not qmax > qmin:
        raise ValueError(f"degenerate integer range [{qmin}, {qmax}]")
    scale = (float(max_float) - float(min_float)) / (qmax - qmin)
    zp = qmin + int(round_half_away(-float(min_float) / scale))
    s32 = np.float32(scale)
    if float(s32) < scale:
        s32 = np.nextafter(s32, np.float32(np.inf))
    scale = float(s32)
    zp = min(max(zp, qmin), qmax)
    return QuantParams(scale, zp, qmin, qmax)


def range_params(values, qmin=0, qmax=255) -> QuantParams:
    """Affine params for ``values``; the range always includes 0 and is
    widened by ``RANGE_EPS`` when degenerate."""
    v = np.asarray(values)
    lo = min(float(v.min()), 0.0) if v.size else 0.0
    hi = max(float(v.max()), 0.0) if v.size else 0.0
    if hi - lo <= 0:
        hi = lo + RANGE_EPS
    return affine_params(lo, hi, qmin, qmax)


def _code_dtype(qp):
    if qp.qmin >= 0 and qp.qmax <= 255:
        return np.uint8
    if qp.qmin >= -128 and qp.qmax <= 127:
        return np.int8
    return np.int32


def quantize_tensor(x, qp: QuantParams):
    q = round_half_away(np.asarray(x, dtype=np.float64) / qp.scale + qp.zero_point)
    return np.clip(q, qp.qmin, qp.qmax).astype(_code_dtype(qp))


def dequantize(q, qp: QuantParams):
    return (np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale


def quantize_rows(w, qmin=0, qmax=255):
    """Vector-wise quantization: one QuantParams per row of ``w``."""
    params = [range_params(row, qmin, qmax) for row in w]
    codes = np.stack([quantize_tensor(row, qp) for row, qp in zip(w, params)]) if len(w) else \
        np.zeros(w.shape, dtype=np.uint8)
    return codes, params


def dequantize_rows(codes, params):
    if not params:
        return np.zeros(codes.shape)
    scale = np.array([p.scale for p in params])[:, None]
    zp = np.array([p.zero_point for p in params], dtype=np.float64)[:, None]
    return (codes.astype(np.float64) - zp) * scale


def detect_outlier_columns(activations, tau):
    """Columns whose max |activation| over the calibration set reaches ``tau``."""
    a = np.asarray(activations)
    if a.size == 0:
        raise ValueError("outlier detection needs a non-empty calibration set")
    colmax = np.abs(a.reshape(-1, a.shape[-1])).max(axis=0)
    return np.flatnonzero(colmax >= tau).astype(np.int64)


class QuantizedLinear(Module):
    """Frozen int8 linear layer (inference only).

    ``codes`` holds the non-outlier weight columns, ``qparams`` one record
    per row (static) or a single record (dynamic); ``outlier_idx`` lists
    input columns stored in ``outlier_weight`` at fp16.
    """

    def __init__(self, mode, in_features, out_features, codes, qparams, bias=None,
                 outlier_idx=None, outlier_weight=None):
        if mode not in (STATIC, DYNAMIC):
            raise ValueError(f"unknown quantization mode {mode!r}")
        self.mode = mode
        self.in_features = in_features
        self.out_features = out_features
        self.codes = codes
        self.qparams = list(qparams)
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float32)
        idx = np.zeros(0, np.int64) if outlier_idx is None else np.asarray(outlier_idx, np.int64)
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= in_features):
            raise ValueError("outlier indices must be sorted, unique and within the input dim")
        self.outlier_idx = idx
        self.outlier_weight = (np.zeros((out_features, 0), np.float16) if outlier_weight is None
                               else np.asarray(outlier_weight, np.float16))
        keep = np.ones(in_features, dtype=bool)
        keep[idx] = False
        self.keep_idx = np.flatnonzero(keep)
        if codes.shape != (out_features, self.keep_idx.size):
            raise ValueError(f"payload shape {codes.shape} != {(out_features, self.keep_idx.size)}")
        self._w_cache = None

    def _own_param_count(self):
        return self.out_features * self.in_features + (0 if self.bias is None else self.bias.size)

    def dequantized_weight(self):
        """Integer part only, as ``(out, in - n_outliers)`` float64."""
        if self._w_cache is None:
            if self.mode == STATIC:
                self._w_cache = dequantize_rows(self.codes, self.qparams)
            else:
                self._w_cache = dequantize(self.codes, self.qparams[0])
        return self._w_cache

    def forward(self, x):
        arr = x.data if isinstance(x, Tensor) else np.asarray(x)
        out_dtype = arr.dtype if arr.dtype.kind == "f" else np.float32
        if self.mode == STATIC:
            y = mixed_matmul(self, arr)
        else:
            y = _dynamic_matmul(self, arr)
        return Tensor(y.astype(out_dtype))

    def __repr__(self):
        return (f"QuantizedLinear({self.mode}, {self.in_features}, {self.out_features}, "
                f"outliers={self.outlier_idx.size})")


def mixed_matmul(ql: QuantizedLinear, x):
    """int8 path over non-outlier columns + fp16 path over outliers + bias."""
    x = np.asarray(x)
    if x.shape[-1] != ql.in_features:
        raise ValueError(f"input dim {x.shape[-1]} != {ql.in_features}")
    y = x[..., ql.keep_idx].astype(np.float64) @ ql.dequantized_weight().T
    if ql.outlier_idx.size:
        xo = x[..., ql.outlier_idx].astype(np.float16).astype(np.float32)
        y = y + xo @ ql.outlier_weight.astype(np.float32).T
    if ql.bias is not None:
        y = y + ql.bias
    return y


def _dynamic_matmul(ql, x):
    x = np.asarray(x)
    qp = range_params(x, *int_range(ql.qparams[0].qmin < 0))
    xq = dequantize(quantize_tensor(x, qp), qp)
    y = xq @ ql.dequantized_weight().T
    if ql.bias is not None:
        y = y + ql.bias
    return y


def static_quantize_linear(layer: Linear, calibration, tau=DEFAULT_TAU, signed=False):
    """Vector-wise int8 with fp16 outlier columns.

    ``calibration`` is either raw input activations ``(..., in)`` or an
    already reduced per-column max-abs vector of length ``in`` (pass it as
    a 1-D array).
    """
    if tau <= 0:
        raise ValueError("outlier threshold must be > 0")
    return _static_from_outliers(layer, detect_outlier_columns(calibration, tau), signed)


def _static_from_outliers(layer, outliers, signed=False):
    w = layer.weight.data.astype(np.float64)
    out_f, in_f = w.shape
    if outliers.size == in_f:
        log.warning("every input column of a %dx%d layer is an outlier; storing it as fp16",
                    out_f, in_f)
    keep = np.setdiff1d(np.arange(in_f), outliers)
    codes, params = quantize_rows(w[:, keep], *int_range(signed))
    bias = None if layer.bias is None else layer.bias.data
    return QuantizedLinear(STATIC, in_f, out_f, codes, params, bias,
                           outliers, w[:, outliers].astype(np.float16))


def dynamic_quantize_linear(layer: Linear, signed=False):
    w = layer.weight.data.astype(np.float64)
    qp = range_params(w, *int_range(signed))
    bias = None if layer.bias is None else layer.bias.data
    return QuantizedLinear(DYNAMIC, w.shape[1], w.shape[0], quantize_tensor(w, qp), [qp], bias)


def _linears(model):
    from .models.base import linear_layers
    return linear_layers(model)


def _reject_quantized(model):
    for _, mod in model.named_modules():
        if isinstance(mod, QuantizedLinear):
            raise AlreadyQuantizedError("model already contains quantized layers")


def dynamic_quantize_model(model, signed=False):
    """Copy of ``model`` with every Linear replaced by a tensor-wise int8 layer."""
    _reject_quantized(model)
    targets = _linears(model)
    if not targets:
        return model
    qmodel = copy.deepcopy(model)
    for _, parent, key, layer in _linears(qmodel):
        _replace(parent, key, dynamic_quantize_linear(layer, signed))
    return qmodel


class _Recorder(Module):
    def __init__(self, layer):
        self.layer = layer
        self.colmax = None

    def forward(self, x):
        a = np.abs(x.data.reshape(-1, x.shape[-1])).max(axis=0)
        self.colmax = a if self.colmax is None else np.maximum(self.colmax, a)
        return self.layer(x)


def _replace(parent, key, new):
    if isinstance(parent, list):
        parent[key] = new
    else:
        setattr(parent, key, new)


def quantize_model_static(model, calibration_data, tau=DEFAULT_TAU, batch_size=64, signed=False):
    """Copy of ``model`` with every Linear statically quantized.

    ``calibration_data`` is an iterable of input arrays ``(T, D)`` or
    ``(B, T, D)`` drawn from the training distribution; it is run through
    the model once to find per-layer outlier input columns.
    """
    _reject_quantized(model)
    if tau <= 0:
        raise ValueError("outlier threshold must be > 0")
    qmodel = copy.deepcopy(model)
    targets = _linears(qmodel)
    if not targets:
        return qmodel
    recorders = []
    for _, parent, key, layer in targets:
        rec = _Recorder(layer)
        _replace(parent, key, rec)
        recorders.append(rec)
    batches = list(_calibration_batches(calibration_data, batch_size))
    if not batches:
        raise ValueError("static quantization requires a non-empty calibration set")
    try:
        for xb in batches:
            qmodel.emissions(xb)
    finally:
        for (_, parent, key, layer) in targets:
            _replace(parent, key, layer)
    for (_, parent, key, layer), rec in zip(targets, recorders):
        outliers = np.flatnonzero(rec.colmax >= tau).astype(np.int64)
        _replace(parent, key, _static_from_outliers(layer, outliers, signed))
    return qmodel


def _calibration_batches(data, batch_size):
    if isinstance(data, np.ndarray) and data.ndim == 3:
        for i in range(0, len(data), batch_size):
            yield data[i:i + batch_size]
        return
    by_len = {}
    for x in data:
        x = np.asarray(x)
        if x.ndim == 3:
            yield x
            continue
        by_len.setdefault(x.shape[0], []).append(x)
    for seqs in by_len.values():
        for i in range(0, len(seqs), batch_size):
            yield np.stack(seqs[i:i + batch_size])


def quantized_layers(model):
    return [(name, mod) for name, mod in model.named_modules() if isinstance(mod, QuantizedLinear)]


def linear_weight_bytes(layer):
    """Weight storage of one linear layer, excluding its bias.

    fp32 layers: ``4 * out * in``. Quantized layers: int8 payload, plus
    ``QPARAM_BYTES`` per quant-params record, plus 2 bytes per fp16 outlier
    weight.
    """
    if isinstance(layer, QuantizedLinear):
        return (layer.codes.size * layer.codes.itemsize + QPARAM_BYTES * len(layer.qparams)
                + 2 * layer.outlier_weight.size)
    return 4 * layer.weight.data.size
