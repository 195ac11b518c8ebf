"""Central-difference gradient oracle used by the autodiff tests.

Works purely through an operator's forward evaluation: the function under
test maps plain float64 arrays to a scalar, and the oracle perturbs one
element at a time. Nothing here touches backward code, so agreement between
the two is meaningful evidence.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np


def numeric_grad(
    fn: Callable[..., float],
    arrays: Sequence[np.ndarray],
    wrt: int,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of ``fn(*arrays)`` w.r.t. ``arrays[wrt]``."""
    work = [np.array(a, dtype=np.float64) for a in arrays]
    target = work[wrt]
    grad = np.zeros_like(target)
    flat_t = target.ravel()
    flat_g = grad.ravel()
    for k in range(flat_t.size):
        saved = flat_t[k]
        flat_t[k] = saved + h
        f_plus = float(fn(*work))
        flat_t[k] = saved - h
        f_minus = float(fn(*work))
        flat_t[k] = saved
        flat_g[k] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-element error scaled by the larger gradient magnitude (floor 1)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    scale = max(1.0, float(np.abs(analytic).max()), float(np.abs(numeric).max()))
    return float(np.abs(analytic - numeric).max()) / scale
