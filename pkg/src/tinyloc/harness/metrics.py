"""Classification metrics over flattened per-timestep predictions."""
import numpy as np


def _flat(preds, labels):
    p = np.concatenate([np.ravel(a) for a in preds]) if isinstance(preds, list) else np.ravel(preds)
    y = np.concatenate([np.ravel(a) for a in labels]) if isinstance(labels, list) else np.ravel(labels)
    if p.shape != y.shape:
        raise ValueError(f"preds and labels differ in length: {p.size} vs {y.size}")
    if p.size == 0:
        raise ValueError("empty input")
    return p.astype(np.int64), y.astype(np.int64)


def confusion_matrix(preds, labels, K):
    p, y = _flat(preds, labels)
    if min(p.min(), y.min()) < 0 or max(p.max(), y.max()) >= K:
        raise ValueError(f"class ids must lie in [0, {K})")
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def per_class_f1(preds, labels, K):
    cm = confusion_matrix(preds, labels, K)
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(0) + cm.sum(1)
    # F1 = 2TP / (2TP + FP + FN); a class absent from both sides scores 0
    return np.divide(2 * tp, denom, out=np.zeros(K), where=denom > 0)


def macro_f1(preds, labels, K):
    """Unweighted mean of per-class F1 over all ``K`` classes."""
    return float(per_class_f1(preds, labels, K).mean())


def accuracy(preds, labels):
    p, y = _flat(preds, labels)
    return float(np.mean(p == y))
