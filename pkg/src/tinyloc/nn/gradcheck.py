import numpy as np


def grad_check(loss_fn, params, eps=1e-6, n_samples=None, rng=None, stencil=2):
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` takes no arguments and returns a scalar Tensor built from
    ``params`` (a list of leaf Tensors, ideally fp64). When ``n_samples``
    is given, that many coordinates are drawn uniformly over all
    parameters; otherwise every coordinate is checked. ``stencil`` is 2
    for the classic ``(f(x+h) - f(x-h)) / 2h`` or 4 for the fourth-order
    central formula, which tolerates a larger ``eps`` and so less roundoff.

    Returns ``(max_rel_err, n_checked)`` with the relative error
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    for p in params:
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if n_samples is not None and n_samples < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    def at(flat, j, orig, delta):
        flat[j] = orig + delta
        return float(loss_fn().data)

    worst = 0.0
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        if stencil == 2:
            num = (at(flat, j, orig, eps) - at(flat, j, orig, -eps)) / (2 * eps)
        else:
            num = (-at(flat, j, orig, 2 * eps) + 8 * at(flat, j, orig, eps)
                   - 8 * at(flat, j, orig, -eps) + at(flat, j, orig, -2 * eps)) / (12 * eps)
        flat[j] = orig
        a = float(analytic[i].reshape(-1)[j])
        rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
        worst = max(worst, rel)
    return worst, len(coords)
