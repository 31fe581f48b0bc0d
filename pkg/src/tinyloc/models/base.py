from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..crf import CRF
from ..nn.layers import Linear, Module, param_count
from ..nn.tensor import Tensor

FAMILIES = ("mdcsa", "mamba")
# kernel sets behind the "L1" / "L3" shorthand
DEFAULT_KERNELS = {1: (1,), 3: (1, 4, 7)}


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``layers`` is a tuple of kernel sizes for ``mdcsa`` (``(1, 4, 7)`` is
    the "L3" model, ``(1,)`` the "L1" model) and a block count for
    ``mamba``.
    """

    family: str
    hidden_size: int
    layers: tuple | int
    input_dim: int
    num_classes: int
    state_dim: int = 16
    conv_width: int = 4
    expand: int = 2
    dt_rank: int | None = None
    ffn_mult: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.hidden_size < 1 or self.input_dim < 1:
            raise ValueError("hidden_size and input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.family == "mdcsa":
            ks = (self.layers,) if isinstance(self.layers, int) else tuple(self.layers)
            if not ks or any(int(k) < 1 for k in ks):
                raise ValueError(f"invalid kernel set {self.layers!r}")
            self.layers = tuple(int(k) for k in ks)
        else:
            if isinstance(self.layers, (tuple, list)):
                raise ValueError("mamba layers is a block count, not a kernel set")
            if int(self.layers) < 1:
                raise ValueError("mamba needs at least one block")
            self.layers = int(self.layers)
            if self.state_dim < 1 or self.expand < 1 or self.conv_width < 1:
                raise ValueError("state_dim, expand and conv_width must be >= 1")
            if self.dt_rank is None:
                self.dt_rank = math.ceil(self.hidden_size / 16)
            if self.dt_rank < 1:
                raise ValueError("dt_rank must be >= 1")

    @property
    def n_layers(self):
        return len(self.layers) if self.family == "mdcsa" else self.layers

    @property
    def name(self):
        base = f"{self.family}:H{self.hidden_size}L{self.n_layers}"
        if self.family == "mdcsa" and DEFAULT_KERNELS.get(self.n_layers) != self.layers:
            base += "[" + ",".join(map(str, self.layers)) + "]"
        return base

    def layer_label(self):
        """Block count for mamba, the kernel set for mdcsa."""
        if self.family == "mdcsa":
            return "{" + ",".join(map(str, self.layers)) + "}"
        return str(self.layers)

    def to_dict(self):
        d = asdict(self)
        if isinstance(d["layers"], tuple):
            d["layers"] = list(d["layers"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("layers"), list):
            d["layers"] = tuple(d["layers"])
        return cls(**d)


class EmissionModel(Module):
    """Sequence network producing ``(B, T, K)`` scores, plus its CRF head."""

    config: ModelConfig
    crf: CRF
    head: Linear

    def __init__(self, config):
        self.config = config

    def _input(self, x):
        arr = x.data if isinstance(x, Tensor) else np.asarray(x)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[-1] != self.config.input_dim:
            raise ValueError(
                f"expected input (B, T, {self.config.input_dim}), got {arr.shape}")
        return Tensor(arr.astype(self._param_dtype()))

    def _param_dtype(self):
        return self.crf.transitions.data.dtype

    def emissions(self, x):
        raise NotImplementedError

    def forward(self, x):
        return self.emissions(x)

    def loss(self, x, labels):
        return self.crf.nll(self.emissions(x), np.asarray(labels).reshape(-1, np.shape(x)[-2]))

    def predict(self, x):
        return self.crf.decode(self.emissions(x).data)

    def num_params(self):
        return param_count(self)


def linear_layers(model):
    """``(name, parent, attr, layer)`` for every full-precision Linear."""
    out = []
    for name, mod in model.named_modules():
        for key, child in vars(mod).items():
            if isinstance(child, Linear):
                out.append((f"{name}.{key}" if name else key, mod, key, child))
            elif isinstance(child, list):
                for i, item in enumerate(child):
                    if isinstance(item, Linear):
                        out.append((f"{name}.{key}.{i}" if name else f"{key}.{i}", child, i, item))
    return out
