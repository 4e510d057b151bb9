"""Regularized integrals and the Young integral.

Grid conventions follow :mod:`regvar`: step h, eps = m h, left-endpoint sums,
clamped indices. With D+_k = X_{k+m} - X_k and D-_k = X_k - X_{k-m}:

* symmetric  I(t_K) = (h / 2 eps) sum_{k<K} Y_k (D+_k + D-_k)
* forward    I-(t_K) = (h / eps) sum_{k<K} Y_k D+_k
* J-form     J(t_K) = (h / 2 eps) sum_{k<K} (Y_k + Y_{k+m}) D+_k

J equals forward + half the 2-covariation exactly, and symmetric differs from
J only by two boundary blocks of m terms (see :func:`symmetric_boundary_term`).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import YoungRegimeError
from .pathgen import Grid, SamplePath, paths_on_grid
from .regvar import _cumulative, forward_increments, n_covariation_path


def backward_increments(values: np.ndarray, m: int) -> np.ndarray:
    """X_k - X_{k-m}, clamped at node 0."""
    idx = np.maximum(np.arange(values.shape[-1]) - m, 0)
    return values - values[..., idx]


def _vals(p) -> np.ndarray:
    return p.values if isinstance(p, SamplePath) else np.asarray(p, dtype=float)


def _prepare(y, x: SamplePath, eps: float) -> tuple[Grid, int, np.ndarray]:
    grid = paths_on_grid([x] + ([y] if isinstance(y, SamplePath) else []))
    yv = _vals(y)
    if yv.shape != x.values.shape:
        raise ValueError("integrand and integrator lengths differ")
    return grid, grid.eps_steps(eps), yv


def symmetric_integral_eps(y, x: SamplePath, eps: float) -> SamplePath:
    """t -> I_eps(t, x, y), the symmetric regularization of int y d x."""
    grid, m, yv = _prepare(y, x, eps)
    central = forward_increments(x.values, m) + backward_increments(x.values, m)
    return SamplePath(grid, 0.5 * _cumulative(grid, eps, yv * central), label="symmetric")


def forward_integral_eps(y, x: SamplePath, eps: float) -> SamplePath:
    grid, m, yv = _prepare(y, x, eps)
    return SamplePath(grid, _cumulative(grid, eps, yv * forward_increments(x.values, m)),
                      label="forward")


def jform_integral_eps(y, x: SamplePath, eps: float) -> SamplePath:
    grid, m, yv = _prepare(y, x, eps)
    y_ahead = yv[np.minimum(np.arange(yv.size) + m, yv.size - 1)]
    integrand = 0.5 * (yv + y_ahead) * forward_increments(x.values, m)
    return SamplePath(grid, _cumulative(grid, eps, integrand), label="jform")


def bracket_half(y, x: SamplePath, eps: float) -> SamplePath:
    grid, _, yv = _prepare(y, x, eps)
    br = n_covariation_path([SamplePath(grid, yv), x], eps)
    return SamplePath(grid, 0.5 * br, label="bracket_half")


def symmetric_boundary_term(y, x: SamplePath, eps: float) -> np.ndarray:
    """symmetric - J on nodes m <= K <= n - m + 1 (NaN elsewhere).

    With g_k = Y_k (X_k - X_{k-m}) the difference is
    (h / 2 eps) * (sum_{k<m} g_k - sum_{k=K}^{K+m-1} g_k).
    """
    grid, m, yv = _prepare(y, x, eps)
    g = yv * backward_increments(x.values, m)
    csum = np.concatenate([[0.0], np.cumsum(g)])
    n = grid.n_steps
    out = np.full(n + 1, np.nan)
    k = np.arange(m, n - m + 2)
    out[k] = (csum[m] - (csum[k + m] - csum[k])) * grid.step / (2 * eps)
    return out


def interior_slice(grid: Grid, eps: float) -> slice:
    """Nodes t in [eps, 1 - eps]."""
    m = grid.eps_steps(eps)
    return slice(m, grid.n_steps - m + 1)


def identity_defect(y, x: SamplePath, eps: float) -> np.ndarray:
    """symmetric - forward - half bracket - boundary term, interior nodes only."""
    sl = interior_slice(x.grid, eps)
    sym = symmetric_integral_eps(y, x, eps).values
    fwd = forward_integral_eps(y, x, eps).values
    half = bracket_half(y, x, eps).values
    return (sym - fwd - half - symmetric_boundary_term(y, x, eps))[sl]


def ito_sum(y, x: SamplePath) -> SamplePath:
    """Left-point grid sums sum_{k<K} y_k (x_{k+1} - x_k)."""
    yv = _vals(y)
    out = np.concatenate([[0.0], np.cumsum(yv[:-1] * np.diff(x.values))])
    return SamplePath(x.grid, out, label="ito")


def trapezoid_sum(y, x: SamplePath) -> SamplePath:
    """Grid trapezoid sums; the J-form at eps = h."""
    yv = _vals(y)
    out = np.concatenate([[0.0], np.cumsum(0.5 * (yv[:-1] + yv[1:]) * np.diff(x.values))])
    return SamplePath(x.grid, out, label="trapezoid")


def write_integrals_csv(y, x: SamplePath, eps: float, directory, header_comment=None) -> Path:
    sym = symmetric_integral_eps(y, x, eps).values
    fwd = forward_integral_eps(y, x, eps).values
    half = bracket_half(y, x, eps).values
    lines = [f"# {header_comment}"] if header_comment else []
    lines.append("t,symmetric,forward,bracket_half")
    for row in zip(x.grid.nodes.tolist(), sym.tolist(), fwd.tolist(), half.tolist()):
        lines.append(",".join(repr(v) for v in row))
    dest = Path(directory) / f"integrals_eps_{eps!r}.csv"
    dest.write_text("\n".join(lines) + "\n")
    return dest


# --------------------------------------------------------------------------
# stop / shift identities

def stop_identity(x: SamplePath, y: SamplePath, tau: float, eps: float):
    """Both sides of int X^tau d Y^tau = (int X d Y)^tau and a gap bound.

    Returns ``(lhs, rhs, bound)`` as arrays over nodes; ``|lhs - rhs| <= bound``
    holds exactly for the discretized functionals.
    """
    from .pathgen import stop_path

    grid = paths_on_grid([x, y])
    m, p, h = grid.eps_steps(eps), grid.index_of(tau), grid.step
    lhs = symmetric_integral_eps(stop_path(x, tau), stop_path(y, tau), eps).values
    full = symmetric_integral_eps(x, y, eps).values
    rhs = full.copy()
    rhs[p:] = full[p]
    xv, yv, n = x.values, y.values, grid.n_steps
    k1 = np.arange(max(p - m, 0), p)
    k2 = np.arange(p, min(p + m, n + 1))
    gap = (np.abs(xv[k1]) * np.abs(yv[p] - yv[np.minimum(k1 + m, n)])).sum()
    gap += (np.abs(xv[p]) * np.abs(yv[p] - yv[np.maximum(k2 - m, 0)])).sum()
    bound = np.full(n + 1, gap * h / (2 * eps))
    return lhs, rhs, bound


def shift_identity(x: SamplePath, y: SamplePath, tau: float, eps: float):
    """Both sides of int_0^t X_{tau+s} d Y_{tau+s} = int_tau^{tau+t} X d Y.

    Only nodes with t <= 1 - tau are returned; the gap bound is uniform.
    """
    from .pathgen import shift_path

    grid = paths_on_grid([x, y])
    m, p, h, n = grid.eps_steps(eps), grid.index_of(tau), grid.step, grid.n_steps
    lhs = symmetric_integral_eps(shift_path(x, tau), shift_path(y, tau), eps).values
    full = symmetric_integral_eps(x, y, eps).values
    last = n - p
    rhs = full[p: p + last + 1] - full[p]
    k = np.arange(min(m, last + 1))
    gap = (np.abs(x.values[p + k]) * np.abs(y.values[p] - y.values[np.maximum(p + k - m, 0)])).sum()
    bound = np.full(last + 1, gap * h / (2 * eps))
    return lhs[: last + 1], rhs, bound


# --------------------------------------------------------------------------
# Young integral

@dataclass
class YoungResult:
    path: SamplePath
    value: float
    error: float
    levels: dict
    converged: bool
    extrapolated: float = float("nan")


def holder_exponent(x: SamplePath, min_scale: int = 1, max_scale: int | None = None) -> float:
    """Slope of log max|X_{t+s} - X_t| against log s over dyadic scales s."""
    n = x.grid.n_steps
    max_scale = max_scale or n // 8
    scales, osc = [], []
    s = min_scale
    while s <= max_scale:
        d = np.abs(x.values[s:] - x.values[:-s]).max()
        if d > 0:
            scales.append(s / n)
            osc.append(d)
        s *= 2
    if len(scales) < 2:
        return float("inf")
    return float(np.polyfit(np.log(scales), np.log(osc), 1)[0])


def declared_holder(p: SamplePath) -> float | None:
    meta = p.meta or {}
    if "holder" in meta:
        return float(meta["holder"])
    if meta.get("law") in ("fbm", "brownian"):
        return float(meta["hurst"]) - 0.01
    if meta.get("law") == "bifractional":
        return float(meta["h"]) * float(meta["k"]) - 0.01
    return None


def young_integral(
    f: SamplePath,
    g: SamplePath,
    refine_limit: int | None = None,
    alpha: float | None = None,
    gamma: float | None = None,
    tol: float = 1e-10,
) -> YoungResult:
    """Left-point Riemann-Stieltjes sums of int f dg on dyadic refinements.

    Level l uses the nodes with stride 2^(J - l) of the 2^J grid. Refinement
    stops when two successive totals differ by less than ``tol`` or at level
    ``min(refine_limit, J)``. The error estimate is the last difference scaled
    by 1 / (2^r - 1) with r = alpha + gamma - 1 (geometric tail of a rate-r
    sequence), or the raw difference when the exponents are unknown. With
    known exponents the same tail is added to give ``extrapolated``.

    Exponents default to those declared in path metadata. A declared sum
    ``<= 1`` raises :class:`YoungRegimeError`; an estimated one only warns.
    """
    grid = paths_on_grid([f, g])
    alpha = alpha if alpha is not None else declared_holder(f)
    gamma = gamma if gamma is not None else declared_holder(g)
    if alpha is not None and gamma is not None:
        if alpha + gamma <= 1:
            raise YoungRegimeError(
                f"outside Young regime: alpha + gamma = {alpha + gamma:.3f} <= 1"
            )
        rate = alpha + gamma - 1
    else:
        a_hat = alpha if alpha is not None else holder_exponent(f)
        g_hat = gamma if gamma is not None else holder_exponent(g)
        if a_hat + g_hat <= 1:
            warnings.warn(
                f"estimated Hoelder exponents sum to {a_hat + g_hat:.3f} <= 1; "
                "Young sums may not converge", RuntimeWarning, stacklevel=2)
        rate = None
    j_max = int(round(math.log2(grid.n_steps)))
    top = j_max if refine_limit is None else min(int(refine_limit), j_max)
    if top < 1:
        raise ValueError("refine_limit must be >= 1")
    levels: dict[int, float] = {}
    prev = None
    converged = False
    level = 0
    for level in range(1, top + 1):
        stride = 2 ** (j_max - level)
        fv, gv = f.values[::stride], g.values[::stride]
        levels[level] = float(np.sum(fv[:-1] * np.diff(gv)))
        if prev is not None and abs(levels[level] - prev) < tol:
            converged = True
            break
        prev = levels[level]
    stride = 2 ** (j_max - level)
    fv, gv = f.values[::stride], g.values[::stride]
    cum = np.concatenate([[0.0], np.cumsum(fv[:-1] * np.diff(gv))])
    path = SamplePath(Grid(2**level), cum, label="young")
    extrapolated = float(cum[-1])
    if len(levels) >= 2:
        step = levels[level] - levels[level - 1]
        err = abs(step) / (2.0**rate - 1.0) if rate is not None else abs(step)
        if rate is not None:
            # Richardson: remove the leading delta^rate error term
            extrapolated += step / (2.0**rate - 1.0)
    else:
        err = float("inf")
    return YoungResult(path, float(cum[-1]), float(err), levels, converged, extrapolated)
