"""Finite-difference verification of analytic gradients.

The checker perturbs every element of every named parameter by +-eps,
re-evaluates the loss, and compares the central difference against the
analytic gradient.  This is the independent oracle for all backward passes
in this package.
"""

from __future__ import annotations

import numpy as np


def grad_check(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               loss_fn, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must run a full forward+backward, filling ``grads`` (after
    zeroing them itself or being called on zeroed buffers), and return the
    scalar loss.  Parameters are perturbed in place and restored.
    """
    for g in grads.values():
        g[...] = 0.0
    loss_fn()
    analytic = {name: g.copy() for name, g in grads.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            for g in grads.values():
                g[...] = 0.0
            lo_hi = loss_fn()
            flat[i] = orig - eps
            for g in grads.values():
                g[...] = 0.0
            lo_lo = loss_fn()
            flat[i] = orig
            numeric = (lo_hi - lo_lo) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-6)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    # restore analytic grads so callers can keep using them
    for name, g in grads.items():
        g[...] = analytic[name]
    return worst
