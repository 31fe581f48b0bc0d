"""Shared setup for whole-model gradient checks."""
import numpy as np

from tinyloc.models import ModelConfig, build_model


def conditioned_model(family, hidden, layers, D=3, K=3, seed=0):
    """fp64 model moved to a well-conditioned parameter point.

    The default Mamba init has step sizes near 1e-3, which makes the
    gradients of ``A_log`` and ``dt_proj`` tiny and lost in finite
    difference roundoff. Perturbing every parameter and widening the step
    size range keeps all gradients comfortably above that floor.
    """
    model = build_model(ModelConfig(family, hidden, layers, D, K, seed=seed)).astype(np.float64)
    r = np.random.default_rng(seed + 100)
    for name, p in model.named_parameters():
        if name.endswith("A_log"):
            p.data = np.log(r.uniform(0.5, 1.5, p.data.shape))
        elif name.endswith("dt_proj.bias"):
            p.data = r.uniform(-1.0, 0.5, p.data.shape)
        else:
            p.data = p.data + 0.5 * r.normal(size=p.data.shape)
    return model


def model_loss(model, T=5, B=2, seed=0):
    r = np.random.default_rng(seed + 200)
    cfg = model.config
    x = r.uniform(size=(B, T, cfg.input_dim))
    y = r.integers(0, cfg.num_classes, size=(B, T))
    return lambda: model.loss(x, y)
