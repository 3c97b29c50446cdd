import numpy as np
import pytest

from diffden.numerics import Rng


@pytest.fixture
def rng():
    return Rng(20240817)


def finite_diff_param_grads(loss_fn, params, eps=1e-5):
    """Central-difference gradients of loss_fn(params) for every entry."""
    grads_w, grads_b = [], []
    for arrays, grads in ((params.weights, grads_w), (params.biases, grads_b)):
        for a in arrays:
            g = np.zeros_like(a)
            flat = a.ravel()
            gflat = g.ravel()
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                up = loss_fn(params)
                flat[i] = old - eps
                down = loss_fn(params)
                flat[i] = old
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads_w, grads_b


def relative_error(approx, exact, floor=1e-8):
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    scale = np.maximum(np.abs(exact), floor)
    return float(np.max(np.abs(approx - exact) / scale))
