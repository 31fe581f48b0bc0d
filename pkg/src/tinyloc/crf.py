"""Linear-chain CRF head: partition function, NLL, Viterbi and posteriors.

All routines accept a single sequence ``(T, K)`` or a batch ``(B, T, K)``
of emission scores. Boundary scores ``start`` and ``end`` are explicit.
"""
import numpy as np

from .nn.layers import Module, Parameter
from .nn.tensor import Tensor, _make, as_tensor


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(np.log(np.exp(a - m).sum(axis=axis, keepdims=True)) + m, axis=axis)


def _raw(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _batched(e):
    e = _raw(e)
    if e.ndim == 2:
        return e[None], True
    if e.ndim != 3:
        raise ValueError(f"emissions must be (T, K) or (B, T, K), got {e.shape}")
    return e, False


def _forward_alphas(e, trans, start):
    B, T, K = e.shape
    alphas = np.empty_like(e)
    alphas[:, 0] = start + e[:, 0]
    for t in range(1, T):
        alphas[:, t] = _lse(alphas[:, t - 1, :, None] + trans, axis=1) + e[:, t]
    return alphas


def _backward_betas(e, trans, end):
    B, T, K = e.shape
    betas = np.empty_like(e)
    betas[:, T - 1] = end
    for t in range(T - 2, -1, -1):
        betas[:, t] = _lse(trans + (e[:, t + 1] + betas[:, t + 1])[:, None, :], axis=2)
    return betas


def forward_logZ(emissions, transitions, start, end):
    """Log partition function by the forward recursion; scalar or ``(B,)``."""
    e, single = _batched(emissions)
    trans, start, end = _raw(transitions), _raw(start), _raw(end)
    if e.shape[1] < 1:
        raise ValueError("sequence length must be >= 1")
    alphas = _forward_alphas(e, trans, start)
    logz = _lse(alphas[:, -1] + end, axis=1)
    return logz[0] if single else logz


def sequence_score(emissions, labels, transitions, start, end):
    """Unnormalised score of one label path."""
    e = _raw(emissions)
    y = np.asarray(labels)
    trans, start, end = _raw(transitions), _raw(start), _raw(end)
    s = start[y[0]] + e[np.arange(len(y)), y].sum() + end[y[-1]]
    if len(y) > 1:
        s = s + trans[y[:-1], y[1:]].sum()
    return s


def marginals(emissions, transitions, start, end):
    """Per-timestep posteriors ``p(y_t = k | x)`` via forward-backward."""
    e, single = _batched(emissions)
    trans, start, end = _raw(transitions), _raw(start), _raw(end)
    alphas = _forward_alphas(e, trans, start)
    betas = _backward_betas(e, trans, end)
    logz = _lse(alphas[:, -1] + end, axis=1)
    post = np.exp(alphas + betas - logz[:, None, None])
    return post[0] if single else post


def _pairwise(e, trans, alphas, betas, logz):
    # sum over t >= 1 of p(y_{t-1}=i, y_t=j)
    if e.shape[1] < 2:
        return np.zeros((e.shape[0],) + trans.shape, dtype=e.dtype)
    lp = (alphas[:, :-1, :, None] + trans[None, None]
          + (e[:, 1:] + betas[:, 1:])[:, :, None, :] - logz[:, None, None, None])
    return np.exp(lp).sum(axis=1)


def viterbi_decode(emissions, transitions, start, end):
    """Highest-scoring label path; ties go to the lower class index."""
    e, single = _batched(emissions)
    trans, start, end = _raw(transitions), _raw(start), _raw(end)
    B, T, K = e.shape
    score = start + e[:, 0]
    back = np.zeros((B, T, K), dtype=np.int64)
    for t in range(1, T):
        cand = score[:, :, None] + trans          # (B, prev, cur)
        back[:, t] = np.argmax(cand, axis=1)       # argmax keeps the first max
        score = np.max(cand, axis=1) + e[:, t]
    score = score + end
    path = np.zeros((B, T), dtype=np.int64)
    path[:, -1] = np.argmax(score, axis=1)
    for t in range(T - 1, 0, -1):
        path[:, t - 1] = back[np.arange(B), t, path[:, t]]
    return path[0] if single else path


def _check_labels(labels, K):
    y = np.asarray(labels)
    if y.dtype.kind not in "iu":
        raise TypeError("labels must be integers")
    bad = (y < 0) | (y >= K)
    if bad.any():
        raise ValueError(f"label out of range [0, {K}): {np.unique(y[bad]).tolist()}")
    return y.astype(np.int64)


def crf_nll(emissions, labels, transitions, start, end):
    """Mean over the batch of ``logZ - score(gold)``; differentiable.

    ``emissions``, ``transitions``, ``start`` and ``end`` may be Tensors;
    the gradient w.r.t. each is posterior minus empirical counts.
    """
    emissions = as_tensor(emissions)
    transitions, start, end = (as_tensor(t, like=emissions) for t in (transitions, start, end))
    e, single = _batched(emissions.data)
    K = e.shape[-1]
    y = _check_labels(labels, K)
    if single:
        y = y[None]
    if y.shape != e.shape[:2]:
        raise ValueError(f"labels shape {y.shape} does not match emissions {e.shape[:2]}")
    B, T, _ = e.shape
    trans = transitions.data
    alphas = _forward_alphas(e, trans, start.data)
    logz = _lse(alphas[:, -1] + end.data, axis=1)
    rows = np.arange(B)[:, None]
    gold = (start.data[y[:, 0]] + e[rows, np.arange(T)[None], y].sum(axis=1)
            + end.data[y[:, -1]])
    if T > 1:
        gold = gold + trans[y[:, :-1], y[:, 1:]].sum(axis=1)
    loss = np.asarray((logz - gold).mean(), dtype=e.dtype)

    def back(g):
        betas = _backward_betas(e, trans, end.data)
        post = np.exp(alphas + betas - logz[:, None, None])
        onehot = np.zeros_like(e)
        np.put_along_axis(onehot, y[..., None], 1.0, axis=2)
        ge = (post - onehot) * (g / B)
        gt = _pairwise(e, trans, alphas, betas, logz).sum(axis=0)
        if T > 1:
            np.add.at(gt, (y[:, :-1], y[:, 1:]), -1.0)
        gs = post[:, 0].sum(axis=0)
        np.add.at(gs, y[:, 0], -1.0)
        gend = post[:, -1].sum(axis=0)
        np.add.at(gend, y[:, -1], -1.0)
        return ((ge[0] if single else ge), gt * (g / B), gs * (g / B), gend * (g / B))

    return _make(loss, (emissions, transitions, start, end), back)


class CRF(Module):
    """Learned transition, start and end scores for ``K`` classes."""

    def __init__(self, num_classes, dtype=np.float32):
        self.num_classes = num_classes
        self.transitions = Parameter(np.zeros((num_classes, num_classes), dtype))
        self.start = Parameter(np.zeros(num_classes, dtype))
        self.end = Parameter(np.zeros(num_classes, dtype))

    def nll(self, emissions, labels):
        return crf_nll(emissions, labels, self.transitions, self.start, self.end)

    def decode(self, emissions):
        return viterbi_decode(emissions, self.transitions, self.start, self.end)

    def marginals(self, emissions):
        return marginals(emissions, self.transitions, self.start, self.end)

    def log_partition(self, emissions):
        return forward_logZ(emissions, self.transitions, self.start, self.end)
