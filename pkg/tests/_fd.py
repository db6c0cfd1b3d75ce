"""Finite-difference gradient helper shared by the test modules."""

import numpy as np

from ampnet import tensor as tz


def fd_check(builder, params, eps=1e-6, floor=1e-8):
    """Max relative error between analytic and central-difference gradients.

    ``builder`` rebuilds the scalar loss from the live ``params`` tensors on
    every call; it must be evaluated in float64 mode by the caller.
    """
    for p in params:
        p.grad = None
    loss = builder()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            with tz.no_grad():
                f_plus = builder().item()
            flat[i] = saved - eps
            with tz.no_grad():
                f_minus = builder().item()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(aflat[i]), abs(numeric), floor)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    for p in params:
        p.grad = None
    return worst
