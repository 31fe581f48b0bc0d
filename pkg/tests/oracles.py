"""Slow reference implementations used only as test oracles."""
import itertools

import numpy as np


def path_score(em, labels, trans, start, end):
    s = start[labels[0]] + end[labels[-1]]
    for t, y in enumerate(labels):
        s += em[t, y]
        if t:
            s += trans[labels[t - 1], y]
    return s


def enumerate_paths(em, trans, start, end):
    """Every label path with its score, in lexicographic order."""
    T, K = em.shape
    return [(p, path_score(em, p, trans, start, end))
            for p in itertools.product(range(K), repeat=T)]


def brute_logz(em, trans, start, end):
    scores = np.array([s for _, s in enumerate_paths(em, trans, start, end)])
    m = scores.max()
    return m + np.log(np.exp(scores - m).sum())


def brute_viterbi(em, trans, start, end):
    """Highest-scoring path; on exact ties the lexicographically smallest
    path wins, which is what lower-index tie breaking yields."""
    best, best_s = None, -np.inf
    for p, s in enumerate_paths(em, trans, start, end):
        if s > best_s:
            best, best_s = p, s
    return np.array(best)


def brute_marginals(em, trans, start, end):
    T, K = em.shape
    logz = brute_logz(em, trans, start, end)
    out = np.zeros((T, K))
    for p, s in enumerate_paths(em, trans, start, end):
        w = np.exp(s - logz)
        for t, y in enumerate(p):
            out[t, y] += w
    return out


def naive_scan(delta, A, B, C, D, x):
    """Scalar-loop selective SSM recurrence for one sequence ``(T, Di)``."""
    T, Di = x.shape
    N = A.shape[1]
    y = np.zeros((T, Di))
    for d in range(Di):
        h = np.zeros(N)
        for t in range(T):
            for n in range(N):
                h[n] = np.exp(delta[t, d] * A[d, n]) * h[n] + delta[t, d] * B[t, n] * x[t, d]
            y[t, d] = sum(C[t, n] * h[n] for n in range(N)) + D[d] * x[t, d]
    return y


def naive_conv(x, w, b=None):
    """Direct causal convolution: ``y[t, o] = sum_{i,j} w[o, i, j] x[t - j, i]``."""
    T, _ = x.shape
    O, I, K = w.shape
    y = np.zeros((T, O))
    for t in range(T):
        for o in range(O):
            acc = 0.0 if b is None else b[o]
            for i in range(I):
                for j in range(K):
                    if t - j >= 0:
                        acc += w[o, i, j] * x[t - j, i]
            y[t, o] = acc
    return y


def naive_attention(q, k, v):
    T, H = q.shape
    out = np.zeros_like(v)
    for t in range(T):
        s = np.array([q[t] @ k[j] / np.sqrt(H) for j in range(t + 1)])
        w = np.exp(s - s.max())
        w /= w.sum()
        out[t] = sum(w[j] * v[j] for j in range(t + 1))
    return out


def loop_macro_f1(preds, labels, K):
    f1s = []
    for c in range(K):
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(f1s) / K
