"""Selective state-space tagger (Mamba-style).

Linear embedding, a stack of identical Mamba blocks, a class head and a
CRF. Block layout follows the reference Mamba block: gated input
projection, depthwise causal conv, input-dependent (delta, B, C), learned
A and D, SiLU gating and an output projection, then residual + LayerNorm.
"""
import math

import numpy as np

from ..crf import CRF
from ..nn import functional as F
from ..nn.layers import DepthwiseCausalConv1d, LayerNorm, Linear, Module, Parameter
from ..nn.tensor import exp, softplus
from .base import EmissionModel, ModelConfig
from .ssm import selective_ssm_scan


class MambaBlock(Module):
    def __init__(self, hidden, expand, state_dim, conv_width, dt_rank, rng):
        inner = expand * hidden
        self.inner = inner
        self.state_dim = state_dim
        self.dt_rank = dt_rank
        self.in_proj = Linear(hidden, 2 * inner, bias=False, rng=rng)
        self.conv = DepthwiseCausalConv1d(inner, conv_width, rng=rng)
        self.x_proj = Linear(inner, dt_rank + 2 * state_dim, bias=False, rng=rng)
        self.dt_proj = Linear(dt_rank, inner, rng=rng)
        # reference init: dt in [1e-3, 1e-1] log-uniformly, bias = softplus^-1(dt)
        std = dt_rank ** -0.5
        self.dt_proj.weight.data = rng.uniform(-std, std, (inner, dt_rank)).astype(np.float32)
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), inner))
        self.dt_proj.bias.data = (dt + np.log(-np.expm1(-dt))).astype(np.float32)
        self.A_log = Parameter(np.log(np.tile(np.arange(1, state_dim + 1, dtype=np.float32),
                                              (inner, 1))))
        self.D = Parameter(np.ones(inner, np.float32))
        self.out_proj = Linear(inner, hidden, bias=False, rng=rng)
        self.norm = LayerNorm(hidden)

    def forward(self, h):
        E, N, R = self.inner, self.state_dim, self.dt_rank
        xz = self.in_proj(h)
        xs, z = xz[..., :E], xz[..., E:]
        xs = F.silu(self.conv(xs))
        dbc = self.x_proj(xs)
        delta = softplus(self.dt_proj(dbc[..., :R]))
        Bm, Cm = dbc[..., R:R + N], dbc[..., R + N:]
        A = -exp(self.A_log)
        y = selective_ssm_scan(delta, A, Bm, Cm, self.D, xs)
        y = y * F.silu(z)
        return self.norm(h + self.out_proj(y))


class Mamba(EmissionModel):
    def __init__(self, config):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        H = config.hidden_size
        self.embed = Linear(config.input_dim, H, rng=rng)
        self.blocks = [MambaBlock(H, config.expand, config.state_dim, config.conv_width,
                                  config.dt_rank, rng) for _ in range(config.layers)]
        self.head = Linear(H, config.num_classes, rng=rng)
        self.crf = CRF(config.num_classes)

    def emissions(self, x):
        h = self.embed(self._input(x))
        for block in self.blocks:
            h = block(h)
        return self.head(h)


def build_mamba(cfg: ModelConfig) -> Mamba:
    if cfg.family != "mamba":
        raise ValueError(f"build_mamba got family {cfg.family!r}")
    return Mamba(cfg)
