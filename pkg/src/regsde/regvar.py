"""Regularized n-covariations and limit diagnostics over an epsilon ladder.

For paths X^1..X^n on a grid with step h and eps = m h, the estimator is the
left-endpoint sum

    [X^1, ..., X^n]_eps(t_K) = (h / eps) * sum_{k<K} prod_j (X^j_{k+m} - X^j_k)

with indices beyond the last node clamped to it.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import GridAlignmentError
from .pathgen import Grid, SamplePath, paths_on_grid


def _as_values(p) -> np.ndarray:
    return p.values if hasattr(p, "values") else np.asarray(p, dtype=float)


def forward_increments(values: np.ndarray, m: int) -> np.ndarray:
    """X_{k+m} - X_k for k = 0..n, clamped at the last node (last axis)."""
    n = values.shape[-1] - 1
    idx = np.minimum(np.arange(n + 1) + m, n)
    return values[..., idx] - values


def product_increments(paths: Sequence[SamplePath], eps: float, absolute: bool = False):
    grid = paths_on_grid(paths)
    m = grid.eps_steps(eps)
    prod = np.ones(grid.n_steps + 1)
    for p in paths:
        d = forward_increments(p.values, m)
        prod = prod * (np.abs(d) if absolute else d)
    return grid, m, prod


def _cumulative(grid: Grid, eps: float, integrand: np.ndarray) -> np.ndarray:
    """(h/eps) * cumulative left sum; node 0 is 0."""
    out = np.empty(grid.n_steps + 1)
    out[0] = 0.0
    np.cumsum(integrand[:-1], out=out[1:])
    return out * (grid.step / eps)


def n_covariation_path(paths: Sequence[SamplePath], eps: float) -> np.ndarray:
    """t -> [X^1..X^n]_eps(t) on every node."""
    if not paths:
        raise ValueError("need at least one path")
    grid, _, prod = product_increments(paths, eps)
    return _cumulative(grid, eps, prod)


def n_covariation_eps(paths: Sequence[SamplePath], eps: float, t: float = 1.0) -> float:
    grid = paths_on_grid(paths)
    k = _node(grid, t)
    return float(n_covariation_path(paths, eps)[k])


def strong_norm_eps(paths: Sequence[SamplePath], eps: float) -> float:
    """(1/eps) int_0^1 prod |X^j_{s+eps} - X^j_s| ds."""
    grid, _, prod = product_increments(paths, eps, absolute=True)
    return float(prod[:-1].sum() * grid.step / eps)


def weighted_covariation_path(weight, paths: Sequence[SamplePath], eps: float) -> np.ndarray:
    """t -> (1/eps) int_0^t w_s prod (X^j_{s+eps} - X^j_s) ds, w given per node."""
    grid, _, prod = product_increments(paths, eps)
    return _cumulative(grid, eps, _as_values(weight) * prod)


def _node(grid: Grid, t: float) -> int:
    k = t * grid.n_steps
    if abs(k - round(k)) > 1e-9 or not 0 <= t <= 1:
        raise GridAlignmentError(f"t={t!r} is not a grid node")
    return int(round(k))


# --------------------------------------------------------------------------
# ladder

@dataclass(frozen=True)
class EpsLadder:
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("empty ladder")
        for v in vals:
            j = -math.log2(v)
            if abs(j - round(j)) > 1e-12 or v > 0.5:
                raise GridAlignmentError(f"ladder value {v!r} is not 2^-j with j >= 1")
        if any(a <= b for a, b in zip(vals, vals[1:])):
            raise ValueError("ladder must be strictly decreasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def dyadic(cls, j_min: int, j_max: int) -> "EpsLadder":
        return cls(tuple(2.0**-j for j in range(j_min, j_max + 1)))

    def check(self, grid: Grid) -> "EpsLadder":
        for v in self.values:
            grid.eps_steps(v)
        return self

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


# --------------------------------------------------------------------------
# limit extrapolation

FLAT = "flat"
NOISE_Z = 2.0  # consecutive ladder values closer than this many stderr are indistinguishable
MIN_EXPONENT = 0.1  # fitted rates below this are treated as noise, not convergence


@dataclass
class EstimateReport:
    per_eps: dict
    extrapolated_limit: float
    slope: float
    limit_stderr: float = float("nan")
    flat: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def slope_label(self):
        return FLAT if self.flat else self.slope

    def to_csv(self, dest=None, t: float = 1.0, header_comment: str | None = None) -> str:
        lines = [f"# {header_comment}"] if header_comment else []
        lines.append("eps,t,value,stderr")
        for eps in sorted(self.per_eps, reverse=True):
            value, stderr = self.per_eps[eps]
            lines.append(f"{eps!r},{t!r},{value!r},{stderr!r}")
        slope = FLAT if self.flat else repr(self.slope)
        lines.append(f"#limit={self.extrapolated_limit!r},slope={slope}")
        text = "\n".join(lines) + "\n"
        if dest is not None:
            Path(dest).write_text(text)
        return text


def _normalize(report_input: Mapping) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    eps, val, err = [], [], []
    for e, v in report_input.items():
        if isinstance(v, tuple):
            v, s = v
        else:
            s = float("nan")
        eps.append(float(e))
        val.append(float(v))
        err.append(float(s))
    order = np.argsort(eps)[::-1]
    eps, val, err = (np.asarray(a)[order] for a in (eps, val, err))
    if eps.size < 3:
        raise ValueError("estimate_limit needs at least 3 ladder points")
    if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(val)) and np.all(eps > 0)):
        raise ValueError("estimate_limit needs finite values and positive eps")
    return eps, val, err


def estimate_limit(report_input: Mapping) -> EstimateReport:
    """Fit value ~ L + A eps^p over the ladder.

    p comes from a least-squares line through log|v_i - v_{i+1}| against
    log eps_i (the difference of a power law is again a power law with the
    same exponent). Given p, L and A follow from weighted linear least
    squares; weights are 1/stderr^2 when every point has one.
    """
    eps, val, err = _normalize(report_input)
    per_eps = {float(e): (float(v), float(s)) for e, v, s in zip(eps, val, err)}
    scale = max(1.0, float(np.max(np.abs(val))))
    diffs = np.abs(np.diff(val))
    if np.all(diffs <= 1e-14 * scale):
        return EstimateReport(per_eps, float(val[-1]), 0.0,
                              float(err[-1]) if np.isfinite(err[-1]) else 0.0, flat=True)
    has_err = np.all(np.isfinite(err)) and np.all(err > 0)
    if has_err and np.all(diffs <= NOISE_Z * np.hypot(err[:-1], err[1:])):
        # the ladder cannot resolve a trend: no extrapolation beyond the finest point
        return EstimateReport(per_eps, float(val[-1]), 0.0, float(err[-1]),
                              extra={"noise_dominated": True})
    mask = diffs > 1e-14 * scale
    if mask.sum() >= 2:
        p = float(np.polyfit(np.log(eps[:-1][mask]), np.log(diffs[mask]), 1)[0])
    else:
        p = 1.0
    if not np.isfinite(p) or p <= 1e-6:
        # no decay toward a limit: report the finest value and the raw trend
        p_raw = float(np.polyfit(np.log(eps), np.log(np.abs(val) + 1e-300), 1)[0])
        return EstimateReport(per_eps, float(val[-1]), p_raw, float(err[-1]),
                              extra={"diverging": True})
    if p < MIN_EXPONENT:
        return EstimateReport(per_eps, float(val[-1]), p, float(err[-1]),
                              extra={"noise_dominated": True})
    w = 1.0 / err**2 if has_err else np.ones_like(val)
    design = np.column_stack([np.ones_like(eps), eps**p])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], val * sw, rcond=None)
    limit = float(coef[0])
    if has_err:
        cov = np.linalg.pinv(design.T @ (design * w[:, None]))
        limit_se = float(math.sqrt(max(cov[0, 0], 0.0)))
    else:
        resid = val - design @ coef
        dof = max(len(val) - 2, 1)
        cov = np.linalg.pinv(design.T @ design) * float(resid @ resid) / dof
        limit_se = float(math.sqrt(max(cov[0, 0], 0.0)))
    return EstimateReport(per_eps, limit, p, limit_se, extra={"amplitude": float(coef[1])})


def loglog_slope(eps: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log|value| against log eps."""
    e = np.asarray(eps, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    if np.any(v <= 0):
        warnings.warn("zero values dropped from slope fit", RuntimeWarning, stacklevel=2)
        e, v = e[v > 0], v[v > 0]
    return float(np.polyfit(np.log(e), np.log(v), 1)[0])


# --------------------------------------------------------------------------
# Monte Carlo summaries

def mc_mean(samples) -> tuple[float, float]:
    a = np.asarray(samples, dtype=float)
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else float("nan")


def mc_report(ensemble, ladder: EpsLadder, n: int = 2, t: float = 1.0,
              statistic: str = "covariation") -> tuple[EstimateReport, dict]:
    """Ensemble mean of the n-fold self covariation (or strong norm) per eps.

    Returns the extrapolation report and the raw per-replication samples.
    """
    samples = {}
    for eps in ladder:
        if statistic == "covariation":
            vals = [n_covariation_eps([p] * n, eps, t) for p in ensemble]
        elif statistic == "strong":
            vals = [strong_norm_eps([p] * n, eps) for p in ensemble]
        else:
            raise ValueError(f"unknown statistic {statistic!r}")
        samples[eps] = np.asarray(vals)
    report = estimate_limit({e: mc_mean(v) for e, v in samples.items()})
    return report, samples


def ucp_proxy(estimates: np.ndarray, limits: np.ndarray, interior: slice | None = None,
              quantiles=(0.5, 0.9)) -> dict:
    """Ensemble quantiles of per-replication sup-node deviations.

    ``estimates`` and ``limits`` have shape (replications, nodes).
    """
    dev = np.abs(np.asarray(estimates) - np.asarray(limits))
    if interior is not None:
        dev = dev[:, interior]
    sup = dev.max(axis=1)
    return {q: float(np.quantile(sup, q)) for q in quantiles} | {"sup": sup}


def strong_bounded(medians: Sequence[float], factor: float = 2.0) -> bool:
    """Proxy for boundedness in the strong sense: max/min of medians <= factor."""
    m = np.asarray(medians, dtype=float)
    return bool(np.all(m > 0) and m.max() / m.min() <= factor)


def squared_increment_sum(path: SamplePath, t: float = 1.0) -> float:
    """Realized quadratic variation on the grid, used as a cross-check oracle."""
    k = _node(path.grid, t)
    return float(np.sum(np.diff(path.values[: k + 1]) ** 2))
