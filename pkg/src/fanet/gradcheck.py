"""Finite-difference verification of the autodiff engine."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .tensor import Tensor


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Compare the reverse-mode gradient of ``f`` at ``x`` to central differences.

    ``f`` must be a deterministic map from one tensor to a scalar tensor and
    ``x`` should be float64 for the comparison to be meaningful. Returns the
    maximum relative error over all coordinates, with the denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if x.dtype != np.float64:
        raise NumericalError("grad_check requires a float64 input tensor")
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    out.backward()
    if x.grad is None:
        analytic = np.zeros_like(x.data)
    else:
        analytic = x.grad.copy()
    if not np.all(np.isfinite(analytic)):
        bad = np.argwhere(~np.isfinite(analytic))[0]
        raise NumericalError(f"non-finite analytic gradient at coordinate {tuple(bad)}")

    x.requires_grad = False  # forward-only during the stencil sweep
    worst = 0.0
    flat = x.data.reshape(-1)
    aflat = analytic.reshape(-1)
    try:
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(x).data)
            flat[i] = orig - h
            f_minus = float(f(x).data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                coord = tuple(np.unravel_index(i, x.shape))
                raise NumericalError(f"non-finite function value near coordinate {coord}")
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    finally:
        x.requires_grad = True
    return worst
