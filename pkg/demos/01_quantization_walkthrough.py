"""Where the bytes go when a linear layer is quantized.

Run: python demos/01_quantization_walkthrough.py
"""
import numpy as np

from tinyloc.harness import model_size, serialized_bytes
from tinyloc.models import ModelConfig, build_model
from tinyloc.nn import Linear
from tinyloc.quantize import (affine_params, dequantize, linear_weight_bytes, quantize_model_static,
                              quantize_tensor, static_quantize_linear)

rng = np.random.default_rng(0)

print("1. The affine map")
qp = affine_params(-1.0, 1.0)
print(f"   [-1, 1] -> [0, 255]: scale={qp.scale:.6f} (2/255={2 / 255:.6f}) zero_point={qp.zero_point}")
x = rng.uniform(-1, 1, size=8)
err = np.abs(dequantize(quantize_tensor(x, qp), qp) - x)
print(f"   round-trip error on 8 values: max {err.max():.5f} <= scale/2 = {qp.scale / 2:.5f}")

print("\n2. One 64x64 layer, vector-wise (one scale and zero point per row)")
layer = Linear(64, 64, bias=False, rng=rng)
calib = rng.uniform(-1, 1, size=(32, 64))
ql = static_quantize_linear(layer, calib)
print(f"   fp32 weights: {linear_weight_bytes(layer)} B")
print(f"   uint8 codes + 64 x 8 B qparams: {linear_weight_bytes(ql)} B "
      f"({100 * (1 - linear_weight_bytes(ql) / linear_weight_bytes(layer)):.1f}% smaller)")

print("\n3. Outlier columns stay in fp16")
calib[:, 5] *= 50
ql = static_quantize_linear(layer, calib, tau=6.0)
print(f"   columns above tau=6: {ql.outlier_idx.tolist()}")
print(f"   codes {ql.codes.nbytes} B + qparams {8 * len(ql.qparams)} B + fp16 column "
      f"{ql.outlier_weight.nbytes} B = {linear_weight_bytes(ql)} B")
y_ref = calib @ layer.weight.data.T
print(f"   max output error vs fp32: {np.abs(ql(calib).data - y_ref).max():.4f}")

print("\n4. Small models can grow")
calib = [rng.uniform(size=(20, 4))]
for family, hidden, layers in (("mamba", 1, 1), ("mamba", 8, 1), ("mdcsa", 16, (1,))):
    m = build_model(ModelConfig(family, hidden, layers, 4, 3))
    q = quantize_model_static(m, calib)
    print(f"   {m.config.name:12s} fp32 {serialized_bytes(m):6d} B -> static {serialized_bytes(q):6d} B")
q = quantize_model_static(build_model(ModelConfig("mamba", 1, 1, 4, 3)), calib)
sb = model_size(q)
print(f"   H1 after quantization: payload {sb.payload_bytes} B, qparams {sb.qparam_bytes} B, "
      f"record headers {sb.overhead_bytes} B, file header {sb.header_bytes} B")
