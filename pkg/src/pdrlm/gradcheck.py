"""Central finite-difference gradient oracle.

Independent of the tape: it only needs a deterministic scalar loss
function of the parameter arrays. Used to verify backward() end to end.
"""

import numpy as np

from .autodiff import Gradients


class NondeterministicLossError(ValueError):
    pass


def finite_difference_gradients(loss_fn, params, eps=1e-3):
    """Central differences (f(p+eps) - f(p-eps)) / (2 eps) per coordinate.

    loss_fn is called as loss_fn(params) and must be deterministic
    (dropout masks frozen); two calls at the unperturbed point are
    compared to detect violations. params is an iterable of objects with
    a mutable .data ndarray; entries are perturbed in place and restored.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    params = list(params)
    f0 = float(loss_fn(params))
    f1 = float(loss_fn(params))
    if f0 != f1:
        raise NondeterministicLossError(
            f"loss_fn is not deterministic: {f0!r} != {f1!r}")
    by_key = {}
    for p in params:
        flat = p.data.ravel()
        g = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(loss_fn(params))
            flat[i] = orig - eps
            fm = float(loss_fn(params))
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * eps)
        by_key[p] = g.reshape(p.data.shape)
    return Gradients(by_key)


def max_relative_error(analytic, numeric, params):
    """max over coordinates of |ga - gn| / max(1e-8, |ga| + |gn|)."""
    worst = 0.0
    for p in params:
        ga = analytic.get(p)
        gn = numeric.get(p)
        denom = np.maximum(1e-8, np.abs(ga) + np.abs(gn))
        err = np.abs(ga - gn) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
