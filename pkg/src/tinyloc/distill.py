"""Knowledge distillation from a frozen CRF teacher into a smaller student.

The teacher's CRF has no per-class probability output, so its targets are
the one-hot Viterbi path (default) or, optionally, the CRF posterior
marginals. The student side of the soft term is a per-timestep softmax
over its emission scores, before its own CRF.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .container import param_checksum
from .crf import crf_nll
from .models import build_model
from .nn import functional as F
from .nn.tensor import Tensor
from .train import TrainConfig, TrainResult, evaluate, length_batches, stack, train

log = logging.getLogger(__name__)

HARD = "hard_viterbi"
SOFT = "soft_marginals"


@dataclass
class KDConfig:
    alpha: float = 0.1
    mode: str = HARD
    teacher_id: str = ""
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mode not in (HARD, SOFT):
            raise ValueError(f"unknown teacher-target mode {self.mode!r}")

    def train_config(self):
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.seed)


def select_teacher(candidates, val, K=None, return_scores=False):
    """Candidate with the highest validation macro-F1; ties go to the larger model."""
    if not candidates:
        raise ValueError("no teacher candidates")
    K = K if K is not None else candidates[0].config.num_classes
    scores = [evaluate(m, val, K)[0] for m in candidates]
    best = max(range(len(candidates)), key=lambda i: (scores[i], candidates[i].num_params(), -i))
    return (candidates[best], scores) if return_scores else candidates[best]


def teacher_targets(teacher, seqs, mode=HARD, batch_size=256):
    """Per-sequence ``(T, K)`` target rows from a frozen teacher."""
    if mode not in (HARD, SOFT):
        raise ValueError(f"unknown teacher-target mode {mode!r}")
    K = teacher.config.num_classes
    out = [None] * len(seqs)
    for idx in length_batches(seqs, batch_size):
        x, _ = stack(seqs, idx)
        em = teacher.emissions(x).data.astype(np.float64)
        if mode == HARD:
            rows = np.eye(K)[teacher.crf.decode(em)]
        else:
            rows = teacher.crf.marginals(em)
        for i, r in zip(idx, rows):
            out[i] = r
    return out


def distill_term(student_emissions, targets):
    """Mean over timesteps of ``-sum_k P_t[k] log softmax(e)[k]``."""
    e = student_emissions if isinstance(student_emissions, Tensor) else Tensor(student_emissions)
    t = np.asarray(targets, dtype=e.data.dtype)
    if t.shape != e.shape:
        raise ValueError(f"target shape {t.shape} != emission shape {e.shape}")
    ce = -(F.log_softmax(e, axis=-1) * t).sum(axis=-1)
    return ce.mean()


def kd_loss(student_emissions, gold_labels, targets, alpha, crf_params):
    """``alpha * crf_nll + (1 - alpha) * distill_term``.

    ``crf_params`` is a CRF module or a ``(transitions, start, end)`` triple.
    The endpoints return the single term itself, so ``alpha == 1`` is the
    plain CRF loss bit for bit.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if hasattr(crf_params, "transitions"):
        crf_params = (crf_params.transitions, crf_params.start, crf_params.end)
    if alpha == 1.0:
        return crf_nll(student_emissions, gold_labels, *crf_params)
    ld = distill_term(student_emissions, targets)
    if alpha == 0.0:
        return ld
    return crf_nll(student_emissions, gold_labels, *crf_params) * alpha + ld * (1.0 - alpha)


def distill_train(teacher, student_cfg, data, kd_cfg: KDConfig) -> TrainResult:
    """Train a fresh student from ``student_cfg`` against ``teacher``."""
    if student_cfg.num_classes != teacher.config.num_classes:
        raise ValueError(f"class count mismatch: teacher K={teacher.config.num_classes}, "
                         f"student K={student_cfg.num_classes}")
    if student_cfg.input_dim != teacher.config.input_dim:
        raise ValueError(f"input dim mismatch: teacher D={teacher.config.input_dim}, "
                         f"student D={student_cfg.input_dim}")
    student = build_model(student_cfg)
    if student.num_params() >= teacher.num_params():
        warnings.warn("student is not smaller than its teacher", RuntimeWarning, stacklevel=2)
    if kd_cfg.alpha == 1.0:
        warnings.warn("alpha = 1 disables the distillation term", RuntimeWarning, stacklevel=2)
    before = param_checksum(teacher)
    targets = teacher_targets(teacher, data.train, kd_cfg.mode)

    def loss_fn(model, idx, x, y):
        t = np.stack([targets[i] for i in idx])
        return kd_loss(model.emissions(x), y, t, kd_cfg.alpha, model.crf)

    result = train(student, data, kd_cfg.train_config(), loss_fn)
    if param_checksum(teacher) != before:
        raise RuntimeError("teacher parameters changed during distillation")
    student.meta = {"variant": "distill", "teacher": kd_cfg.teacher_id or teacher.config.name,
                    "alpha": kd_cfg.alpha, "kd_mode": kd_cfg.mode}
    return result
