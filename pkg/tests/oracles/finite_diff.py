"""Central finite-difference gradient oracle.

Independent of the autodiff engine: treats the loss as a black-box callable
over a flat parameter vector and perturbs one coordinate at a time.
"""

import numpy as np


def central_diff_grad(loss_fn, theta, h=1e-5):
    """Gradient of loss_fn at theta via (L(t+h) - L(t-h)) / 2h per coordinate.

    loss_fn: callable taking a 1-D float64 vector, returning a scalar.
    theta: 1-D float64 vector.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (loss_fn(up) - loss_fn(dn)) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-8):
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
