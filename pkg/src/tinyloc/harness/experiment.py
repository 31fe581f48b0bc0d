"""Train a model grid, apply compression variants, evaluate each on test."""
from __future__ import annotations

import logging
import warnings
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from ..container import dump_model
from ..data import DatasetSplit, SynthConfig, generate_synthetic
from ..distill import HARD, KDConfig, distill_train, select_teacher
from ..models import ModelConfig, build_model
from ..quantize import DEFAULT_TAU, dynamic_quantize_model, quantize_model_static
from ..train import TrainConfig, evaluate, train
from .size import BUDGET_32K, BUDGET_64K, budget_check

log = logging.getLogger(__name__)

BASELINE = "baseline"
STATIC_Q = "static_quant"
DYNAMIC_Q = "dynamic_quant"
DISTILL = "distill"
DISTILL_STATIC_Q = "distill_static_quant"
VARIANTS = (BASELINE, STATIC_Q, DYNAMIC_Q, DISTILL, DISTILL_STATIC_Q)

# the models the in-home budget tables single out: the best pick per family
# under each of the 64 KB and 32 KB budgets
DEFAULT_SWEEP = ("mdcsa:H16L1", "mamba:H32L1", "mdcsa:H8L1", "mamba:H8L1")

_PURPOSE = {"init": 1, "batch": 2, "kd_init": 3, "kd_batch": 4}


@dataclass
class EvalReport:
    model: str
    family: str
    hidden: int
    layers: str
    param_count: int
    serialized_bytes: int
    variant: str
    macro_f1: float
    accuracy: float
    budget_64k: bool
    budget_32k: bool
    seed: int
    dataset_id: str
    teacher: str = ""
    tau: float | None = None
    alpha: float | None = None
    pre_quant_f1: float | None = None
    pre_quant_accuracy: float | None = None
    error: str = ""

    def as_dict(self):
        return asdict(self)


@dataclass
class ExperimentConfig:
    models: list
    variants: tuple = VARIANTS
    seed: int = 0
    dataset: DatasetSplit | None = None
    dataset_id: str = "synthetic"
    train: TrainConfig = field(default_factory=TrainConfig)
    tau: float = DEFAULT_TAU
    alpha: float = 0.1
    kd_mode: str = HARD

    def __post_init__(self):
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ValueError(f"unknown variants {unknown}")
        if not self.models:
            raise ValueError("empty model grid")


def derive_seed(master, name, purpose):
    """Stable child seed for (master seed, model name, purpose)."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(name.encode()), _PURPOSE[purpose]])
    return int(ss.generate_state(1)[0])


def _as_spec(m):
    if isinstance(m, ModelConfig):
        return m.family, m.hidden_size, m.layers
    if isinstance(m, str):
        from ..config import parse_model_name
        return parse_model_name(m)
    return tuple(m)


def _row(cfg, mc, model, variant, data, **extra):
    model.meta = {"variant": variant, "seed": cfg.seed,
                  **{k: v for k, v in extra.items() if k in ("teacher", "alpha", "tau")}}
    f1, acc = evaluate(model, data.test, data.class_count)
    nbytes = len(dump_model(model))
    return EvalReport(mc.name, mc.family, mc.hidden_size, mc.layer_label(), model.num_params(),
                      nbytes, variant, f1, acc, budget_check(nbytes, BUDGET_64K),
                      budget_check(nbytes, BUDGET_32K), cfg.seed, cfg.dataset_id, **extra)


def error_row(seed, dataset_id, mc, variant, exc, param_count=0):
    return EvalReport(mc.name, mc.family, mc.hidden_size, mc.layer_label(), param_count, 0, variant,
                      float("nan"), float("nan"), False, False, seed, dataset_id,
                      error=f"{type(exc).__name__}: {exc}")


def run_experiment(cfg: ExperimentConfig, return_models=False):
    """One EvalReport per (model, variant); a failing stage becomes an error row."""
    data = cfg.dataset if cfg.dataset is not None else generate_synthetic(SynthConfig())
    D, K = data.feature_dim, data.class_count
    calib = [s.features for s in data.train]
    configs, baselines = [], {}
    for spec in cfg.models:
        family, hidden, layers = _as_spec(spec)
        probe = ModelConfig(family, hidden, layers, D, K)
        mc = ModelConfig(family, hidden, layers, D, K, seed=derive_seed(cfg.seed, probe.name, "init"))
        configs.append(mc)
        try:
            tc = TrainConfig(cfg.train.epochs, cfg.train.batch_size, cfg.train.lr,
                             derive_seed(cfg.seed, mc.name, "batch"), cfg.train.patience,
                             cfg.train.time_limit)
            baselines[mc.name] = train(build_model(mc), data, tc).model
        except Exception as exc:  # recorded per row
            log.warning("training %s failed: %s", mc.name, exc)
            baselines[mc.name] = exc

    teacher = None
    if any(v in (DISTILL, DISTILL_STATIC_Q) for v in cfg.variants):
        trained = [m for m in baselines.values() if not isinstance(m, Exception)]
        teacher = select_teacher(trained, data.val, K) if trained else None

    rows, models = [], {}
    for mc in configs:
        base = baselines[mc.name]
        student = None
        for variant in cfg.variants:
            try:
                if isinstance(base, Exception):
                    raise base
                if variant == BASELINE:
                    model, extra = base, {}
                elif variant == STATIC_Q:
                    model = quantize_model_static(base, calib, cfg.tau)
                    extra = {"tau": cfg.tau}
                elif variant == DYNAMIC_Q:
                    model, extra = dynamic_quantize_model(base), {}
                else:
                    if teacher is None:
                        raise RuntimeError("no trained teacher available")
                    tid = teacher.config.name
                    if student is None:
                        kd = KDConfig(cfg.alpha, cfg.kd_mode, tid, cfg.train.epochs,
                                      cfg.train.batch_size, cfg.train.lr,
                                      derive_seed(cfg.seed, mc.name, "kd_batch"))
                        scfg = ModelConfig.from_dict({**mc.to_dict(),
                                                      "seed": derive_seed(cfg.seed, mc.name, "kd_init")})
                        with warnings.catch_warnings():
                            if mc.name == tid:
                                # the teacher distilling into its own architecture is expected
                                warnings.simplefilter("ignore", RuntimeWarning)
                            student = distill_train(teacher, scfg, data, kd).model
                    extra = {"teacher": tid, "alpha": cfg.alpha}
                    model = student
                    if variant == DISTILL_STATIC_Q:
                        pf1, pacc = evaluate(student, data.test, K)
                        model = quantize_model_static(student, calib, cfg.tau)
                        extra.update(tau=cfg.tau, pre_quant_f1=pf1, pre_quant_accuracy=pacc)
                rows.append(_row(cfg, mc, model, variant, data, **extra))
                models[(mc.name, variant)] = model
            except Exception as exc:
                log.warning("%s/%s failed: %s", mc.name, variant, exc)
                rows.append(error_row(cfg.seed, cfg.dataset_id, mc, variant, exc))
    return (rows, models) if return_models else rows
