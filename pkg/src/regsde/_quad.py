"""Composite Gauss-Legendre pieces shared by the transform code."""
from __future__ import annotations

import numpy as np

ORDER = 16
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(ORDER)


def gl_interval(fn, lo, hi) -> np.ndarray:
    """Vectorized int_lo^hi fn(u) du for arrays of endpoints (one panel each)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    u = mid[..., None] + half[..., None] * _NODES
    return half * (fn(u) @ _WEIGHTS)


def gl_panels(fn, start: float, width: float, count: int, first: int = 0) -> np.ndarray:
    """Integrals over panels [start + j w, start + (j + 1) w] for j in first..first+count-1."""
    j = np.arange(first, first + count, dtype=float)
    lo = start + j * width
    return gl_interval(fn, lo, lo + width)
