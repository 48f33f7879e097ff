"""Central finite-difference gradient verification.

These are the independent oracles for every analytic gradient in the package:
they only ever evaluate loss values, never the code paths that produce
analytic gradients.
"""

from __future__ import annotations

import numpy as np

from .nn import ModelParams

DEFAULT_STEP = 1e-5


def fd_array_grad(loss_fn, x: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of a scalar function over every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn(x)
        flat[i] = orig - h
        down = loss_fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def fd_model_grads(loss_fn, params: ModelParams, h: float = DEFAULT_STEP):
    """Central differences over every weight and bias of a model.

    ``loss_fn`` maps a ModelParams to a float. Returns ``(gw, gb)`` pairs in
    layer order.
    """
    work = params.copy()
    grads = []
    for w, b in work.layers:
        gw = np.zeros_like(w)
        gb = np.zeros_like(b)
        for arr, garr in ((w, gw), (b, gb)):
            flat = arr.reshape(-1)
            gflat = garr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn(work)
                flat[i] = orig - h
                down = loss_fn(work)
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * h)
        grads.append((gw, gb))
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-3) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor) over both arrays."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


def model_grad_error(loss_and_grad_fn, params: ModelParams, h: float = DEFAULT_STEP):
    """Compare an analytic gradient routine against central differences.

    ``loss_and_grad_fn`` maps a ModelParams to ``(loss, [(gw, gb), ...])``.
    Returns the max relative error over all layers.
    """
    _, analytic = loss_and_grad_fn(params)
    numeric = fd_model_grads(lambda p: loss_and_grad_fn(p)[0], params, h)
    worst = 0.0
    for (agw, agb), (ngw, ngb) in zip(analytic, numeric):
        worst = max(worst, max_relative_error(agw, ngw))
        worst = max(worst, max_relative_error(agb, ngb))
    return worst
