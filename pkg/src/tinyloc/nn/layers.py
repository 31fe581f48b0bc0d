"""Parameterised building blocks with a tiny module system."""
import numpy as np

from . import functional as F
from .tensor import Tensor


def xavier_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def Parameter(data, name=None):
    return Tensor(np.array(data), requires_grad=True, name=name)


class Module:
    """Owns named parameters and child modules, in attribute order."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_modules(self, prefix=""):
        yield prefix, self
        for key, child in self._children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield (f"{prefix}.{key}" if prefix else key), val
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}.{key}" if prefix else key)

    def _own_param_count(self):
        return sum(v.data.size for v in vars(self).values()
                   if isinstance(v, Tensor) and v.requires_grad)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(p.data.dtype).copy()


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(xavier_uniform(rng, (out_features, in_features),
                                               in_features, out_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)

    def __repr__(self):
        return f"Linear({self.in_features}, {self.out_features}, bias={self.bias is not None})"


class CausalConv1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, bias=True, rng=None,
                 dtype=np.float32):
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel_size = kernel_size
        self.weight = Parameter(xavier_uniform(
            rng, (out_channels, in_channels, kernel_size),
            in_channels * kernel_size, out_channels * kernel_size, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype)) if bias else None

    def forward(self, x):
        return F.causal_conv1d(x, self.weight, self.bias)


class DepthwiseCausalConv1d(Module):
    def __init__(self, channels, kernel_size, bias=True, rng=None, dtype=np.float32):
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel_size = kernel_size
        self.weight = Parameter(xavier_uniform(rng, (channels, kernel_size),
                                               kernel_size, kernel_size, dtype))
        self.bias = Parameter(np.zeros(channels, dtype)) if bias else None

    def forward(self, x):
        return F.depthwise_causal_conv1d(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        self.eps = eps
        self.weight = Parameter(np.ones(dim, dtype))
        self.bias = Parameter(np.zeros(dim, dtype))

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, self.eps)


def param_count(module):
    """Total element count over every parameter tensor, frozen ones included."""
    return int(sum(mod._own_param_count() for _, mod in module.named_modules()))
