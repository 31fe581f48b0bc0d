from . import functional
from .gradcheck import grad_check
from .layers import (CausalConv1d, DepthwiseCausalConv1d, LayerNorm, Linear, Module,
                     Parameter, param_count)
from .optim import Adam, NonFiniteGradient
from .tensor import Tensor

__all__ = [
    "Adam", "CausalConv1d", "DepthwiseCausalConv1d", "LayerNorm", "Linear", "Module",
    "NonFiniteGradient", "Parameter", "Tensor", "functional", "grad_check", "param_count",
]
