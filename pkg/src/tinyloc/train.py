"""Mini-batch training with best-validation checkpointing."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .nn.optim import Adam

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-2
    seed: int = 0
    patience: int | None = None
    time_limit: float | None = None


@dataclass
class TrainResult:
    model: object
    best_epoch: int
    best_val_f1: float
    history: list = field(default_factory=list)


def length_batches(seqs, batch_size, rng=None):
    """Index batches where every member has the same length.

    With ``rng`` the order within and across length groups is shuffled;
    without it the order is deterministic and sequential.
    """
    groups = {}
    for i, s in enumerate(seqs):
        groups.setdefault(len(s), []).append(i)
    batches = []
    for T in sorted(groups):
        idx = np.array(groups[T])
        if rng is not None:
            rng.shuffle(idx)
        batches += [idx[i:i + batch_size] for i in range(0, len(idx), batch_size)]
    if rng is not None:
        order = rng.permutation(len(batches))
        batches = [batches[i] for i in order]
    return batches


def stack(seqs, idx):
    return (np.stack([seqs[i].features for i in idx]),
            np.stack([seqs[i].labels for i in idx]))


def predict_sequences(model, seqs, batch_size=256):
    out = [None] * len(seqs)
    for idx in length_batches(seqs, batch_size):
        x, _ = stack(seqs, idx)
        for i, p in zip(idx, model.predict(x)):
            out[i] = p
    return out


def evaluate(model, seqs, K):
    """``(macro_f1, accuracy)`` over every timestep of ``seqs``."""
    # deferred: the harness package imports this module
    from .harness.metrics import accuracy, macro_f1
    preds = predict_sequences(model, seqs)
    labels = [s.labels for s in seqs]
    return macro_f1(preds, labels, K), accuracy(preds, labels)


def default_loss(model, idx, x, y):
    return model.loss(x, y)


def train(model, data, cfg: TrainConfig, loss_fn=default_loss):
    """Adam on ``loss_fn(model, idx, x, y)``; returns the best-val checkpoint.

    Ties on validation F1 keep the earlier epoch. A non-finite loss or
    gradient raises :class:`TrainingDiverged`.
    """
    if not data.train:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    names = [n for n, _ in model.named_parameters()]
    val = data.val or data.train
    best_f1, best_epoch, best_state = -1.0, 0, model.state_dict()
    history = []
    start = time.monotonic()
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for b, idx in enumerate(length_batches(data.train, cfg.batch_size, rng)):
            x, y = stack(data.train, idx)
            opt.zero_grad()
            loss = loss_fn(model, idx, x, y)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            loss.backward()
            try:
                opt.step(names)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {b}: {exc}") from None
            losses.append(value)
        f1, acc = evaluate(model, val, data.class_count)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_f1": f1, "val_acc": acc})
        log.debug("epoch %d loss %.4f val f1 %.4f", epoch, history[-1]["loss"], f1)
        if f1 > best_f1:
            best_f1, best_epoch, best_state = f1, epoch, model.state_dict()
        if cfg.patience is not None and epoch - best_epoch >= cfg.patience:
            break
        if best_f1 >= 1.0:
            break
        if cfg.time_limit is not None and time.monotonic() - start > cfg.time_limit:
            log.warning("time limit reached after epoch %d", epoch)
            break
    model.load_state_dict(best_state)
    return TrainResult(model, best_epoch, best_f1, history)
