"""Central finite-difference oracle for tape gradients."""

import numpy as np

from .tensor import backward


def numerical_gradient(loss_fn, params, step=1e-6):
    """Central differences of the scalar ``loss_fn()`` w.r.t. each parameter.

    ``loss_fn`` must be a pure function of the parameter values; any
    randomness inside it has to be re-seeded on every call.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn().data)
            flat[i] = orig - step
            down = float(loss_fn().data)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-8):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return diff / scale


def check_gradients(loss_fn, params, step=1e-6):
    """Largest per-parameter relative error between tape and finite differences."""
    analytic = backward(loss_fn(), params)
    numeric = numerical_gradient(loss_fn, params, step)
    return max(relative_error(analytic[p], n) for p, n in zip(params, numeric))
