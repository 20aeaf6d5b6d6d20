"""Central finite differences used wherever an analytic derivative is not supplied."""

from __future__ import annotations

import numpy as np

# single-level derivatives; nested (second-order) derivatives use NESTED_STEP
BASE_STEP = 1e-6
NESTED_STEP = 1e-4


def step_sizes(x: np.ndarray, h: float) -> np.ndarray:
    return h * np.maximum(1.0, np.abs(x))


def jacobian(fun, x, h: float = BASE_STEP) -> np.ndarray:
    """d fun / dx with the derivative index last: shape fun(x).shape + (len(x),)."""
    x = np.asarray(x, dtype=float)
    hs = step_sizes(x, h)
    cols = []
    for c in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[c] += hs[c]
        xm[c] -= hs[c]
        cols.append((np.asarray(fun(xp), dtype=float) - np.asarray(fun(xm), dtype=float)) / (2.0 * hs[c]))
    return np.stack(cols, axis=-1)


def gradient(fun, x, h: float = BASE_STEP) -> np.ndarray:
    return jacobian(lambda y: np.asarray(fun(y), dtype=float), x, h)
