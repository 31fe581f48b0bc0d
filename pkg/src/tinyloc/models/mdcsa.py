"""Convolutional self-attention tagger (MDCSA-style).

Each kernel size in the layer spec gets one DCSA branch: queries and keys
come from causal convolutions of that width, values from a linear map.
The attention output is merged with the branch input by a gated causal
convolution, followed by a position-wise feed-forward. Branch outputs are
averaged before the class head.
"""
import numpy as np

from ..crf import CRF
from ..nn import functional as F
from ..nn.layers import CausalConv1d, LayerNorm, Linear, Module
from ..nn.tensor import concat, sigmoid
from .base import EmissionModel, ModelConfig


class DCSABranch(Module):
    def __init__(self, hidden, kernel, ffn_mult, rng):
        self.kernel = kernel
        self.q_conv = CausalConv1d(hidden, hidden, kernel, rng=rng)
        # a key bias only shifts every score in a row equally, so softmax ignores it
        self.k_conv = CausalConv1d(hidden, hidden, kernel, bias=False, rng=rng)
        self.v_proj = Linear(hidden, hidden, rng=rng)
        # value and gate halves of a GLU over [input, attention]
        self.merge = CausalConv1d(2 * hidden, 2 * hidden, kernel, rng=rng)
        self.norm1 = LayerNorm(hidden)
        self.ffn_in = Linear(hidden, ffn_mult * hidden, rng=rng)
        self.ffn_out = Linear(ffn_mult * hidden, hidden, rng=rng)
        self.norm2 = LayerNorm(hidden)

    def forward(self, x):
        H = x.shape[-1]
        att = F.scaled_dot_attention(self.q_conv(x), self.k_conv(x), self.v_proj(x))
        m = self.merge(concat([x, att], axis=-1))
        gated = m[..., :H] * sigmoid(m[..., H:])
        h = self.norm1(x + gated)
        f = self.ffn_out(F.silu(self.ffn_in(h)))
        return self.norm2(h + f)


class MDCSA(EmissionModel):
    def __init__(self, config):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        H = config.hidden_size
        self.embed = Linear(config.input_dim, H, rng=rng)
        self.branches = [DCSABranch(H, k, config.ffn_mult, rng) for k in config.layers]
        self.head = Linear(H, config.num_classes, rng=rng)
        self.crf = CRF(config.num_classes)

    def emissions(self, x):
        x = self._input(x)
        T = x.shape[-2]
        h = self.embed(x)
        h = h + F.sinusoidal_encoding(T, self.config.hidden_size, h.data.dtype)
        out = None
        for branch in self.branches:
            b = branch(h)
            out = b if out is None else out + b
        out = out * (1.0 / len(self.branches))
        return self.head(out)


def build_mdcsa(cfg: ModelConfig) -> MDCSA:
    if cfg.family != "mdcsa":
        raise ValueError(f"build_mdcsa got family {cfg.family!r}")
    return MDCSA(cfg)
