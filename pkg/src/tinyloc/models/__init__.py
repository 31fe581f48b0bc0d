from ..nn.layers import param_count
from .base import EmissionModel, ModelConfig, linear_layers
from .mamba import Mamba, build_mamba
from .mdcsa import MDCSA, build_mdcsa
from .ssm import selective_ssm_scan


def build_model(cfg: ModelConfig) -> EmissionModel:
    if cfg.family == "mdcsa":
        return build_mdcsa(cfg)
    return build_mamba(cfg)


__all__ = [
    "EmissionModel", "ModelConfig", "MDCSA", "Mamba", "build_model", "build_mdcsa",
    "build_mamba", "linear_layers", "param_count", "selective_ssm_scan",
]
