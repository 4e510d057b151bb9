"""Residuals of Ito-type formulas and bracket identities along an eps ladder.

Every residual is built from functionals evaluated at one common eps:

* an increment F_t - F_0 is represented by its regularized version
  I_eps(t, F, 1), which is what the left side of each formula converges from;
* integrals against bounded-variation or cubic-variation paths are symmetric
  estimators, by default in the J-form (1/2eps) int (Y_{s+eps} + Y_s) dX; the
  I-form (1/2eps) int Y_s (X_{s+eps} - X_{s-eps}) is available through
  ``estimator="I"``. The two differ by a block of m boundary terms at the
  running endpoint, which for rough paths dominates the residual;
* brackets and cubic terms are (h/eps) sum g_k prod Delta_eps;
* integrals against martingale paths are left-point grid Ito sums.

With this convention every structural special case cancels term by term, so
those cases are exact assertions rather than tolerance checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import MissingDerivativeError
from .pathgen import CompositePath, SamplePath, paths_on_grid
from .reginteg import ito_sum, jform_integral_eps, symmetric_integral_eps, trapezoid_sum
from .regvar import EpsLadder, forward_increments, weighted_covariation_path


# --------------------------------------------------------------------------
# evaluators

@dataclass
class Smooth:
    """Scalar field (s, x) -> f with analytic x-derivatives ``dx[k-1] = d^k f``."""

    fn: Callable
    dx: tuple = ()
    name: str = ""

    def __call__(self, s, x):
        return np.asarray(self.fn(s, x), dtype=float) + np.zeros(np.broadcast(s, x).shape)

    def d(self, order: int, s, x) -> np.ndarray:
        if order == 0:
            return self(s, x)
        if order > len(self.dx):
            raise MissingDerivativeError(f"{self.name or 'field'}: derivative of order {order} missing")
        return np.asarray(self.dx[order - 1](s, x), dtype=float) + np.zeros(np.broadcast(s, x).shape)

    @property
    def order(self) -> int:
        return len(self.dx)

    def check(self, probes=None, s: float = 0.3, rtol: float = 1e-6) -> float:
        """Worst relative gap between each derivative and a central difference."""
        x = np.linspace(-2.0, 2.0, 16) if probes is None else np.asarray(probes, dtype=float)
        worst = 0.0
        for k in range(1, self.order + 1):
            h = 1e-5 * np.maximum(1.0, np.abs(x))
            fd = (self.d(k - 1, s, x + h) - self.d(k - 1, s, x - h)) / (2 * h)
            exact = self.d(k, s, x)
            worst = max(worst, float(np.max(np.abs(exact - fd) / np.maximum(1.0, np.abs(exact)))))
        return worst


def smooth(fn, *derivs, name: str = "") -> Smooth:
    """Build a :class:`Smooth` from x-only callables."""
    wrap = lambda g: (lambda s, x: g(np.asarray(x, dtype=float)))  # noqa: E731
    return Smooth(wrap(fn), tuple(wrap(d) for d in derivs), name)


def constant(c: float) -> Smooth:
    zero = lambda s, x: np.zeros(np.broadcast(s, x).shape)  # noqa: E731
    return Smooth(lambda s, x: np.full(np.broadcast(s, x).shape, float(c)), (zero, zero, zero),
                  name=f"const {c:g}")


@dataclass
class ItoFunction:
    """F(v, x) with v of shape (m, nodes): value, v-partials and x-partials."""

    fn: Callable
    dv: Sequence[Callable] = ()
    dx: Sequence[Callable] = ()

    def need(self, order: int) -> None:
        if len(self.dx) < order:
            raise MissingDerivativeError(f"need x-derivatives up to order {order}")


@dataclass
class ItoField:
    """X(t, x) = f(x) + sum_i int_0^t a^i(s, x) dN^i + sum_j int_0^t b^j(s, x) dV^j."""

    f: Smooth
    a_coeffs: list = field(default_factory=list)
    b_coeffs: list = field(default_factory=list)
    martingale_paths: list = field(default_factory=list)
    bv_paths: list = field(default_factory=list)
    smoothness_order: int = 3

    def __post_init__(self):
        if len(self.a_coeffs) != len(self.martingale_paths):
            raise ValueError("one martingale path per a coefficient")
        if len(self.b_coeffs) != len(self.bv_paths):
            raise ValueError("one bounded-variation path per b coefficient")
        for ev in [self.f, *self.a_coeffs, *self.b_coeffs]:
            if ev.order < self.smoothness_order:
                raise MissingDerivativeError(
                    f"evaluator {ev.name!r} supplies {ev.order} derivatives, "
                    f"{self.smoothness_order} required")
        if self.martingale_paths or self.bv_paths:
            paths_on_grid(self.martingale_paths + self.bv_paths)

    def along(self, xi: SamplePath, orders=(0, 1, 3), dx: float = 0.02, pad: float = 0.2) -> dict:
        """d^r X(t_k, xi_k) for r in ``orders``.

        The stochastic part is accumulated on an x lattice covering the range of
        xi (cumulative left-point sums over time) and read off with 4-point
        Lagrange interpolation; f and its derivatives are evaluated directly.
        """
        t = xi.grid.nodes
        out = {r: self.f.d(r, t, xi.values) for r in orders}
        if not (self.a_coeffs or self.b_coeffs):
            return out
        lo, hi = xi.values.min() - pad, xi.values.max() + pad
        n_lat = max(8, int(math.ceil((hi - lo) / dx)) + 1)
        lat = np.linspace(lo, hi, n_lat)
        step = lat[1] - lat[0]
        pos = (xi.values - lo) / step
        base = np.clip(np.floor(pos).astype(int) - 1, 0, n_lat - 4)
        frac = pos - base
        # Lagrange weights on nodes base..base+3 at offset frac
        w = np.empty((4, frac.size))
        for j in range(4):
            others = [i for i in range(4) if i != j]
            w[j] = np.prod([(frac - i) / (j - i) for i in others], axis=0)
        rows = np.arange(t.size)
        for coeffs, drivers in ((self.a_coeffs, self.martingale_paths),
                                (self.b_coeffs, self.bv_paths)):
            for coeff, path in zip(coeffs, drivers):
                dn = np.diff(path.values)
                for r in orders:
                    vals = coeff.d(r, t[:-1, None], lat[None, :]) * dn[:, None]
                    cum = np.vstack([np.zeros(n_lat), np.cumsum(vals, axis=0)])
                    out[r] = out[r] + sum(w[j] * cum[rows, base + j] for j in range(4))
        return out


# --------------------------------------------------------------------------
# reports

@dataclass
class ResidualReport:
    """Per-eps arrays of per-replication statistics (sup residual or value)."""

    per_eps: dict
    kind: str = "sup_residual"
    paths: dict | None = None

    @classmethod
    def combine(cls, reports: Sequence["ResidualReport"]) -> "ResidualReport":
        keys = list(reports[0].per_eps)
        merged = {e: np.concatenate([np.atleast_1d(r.per_eps[e]) for r in reports]) for e in keys}
        return cls(merged, reports[0].kind)

    @property
    def ladder(self) -> list:
        return sorted(self.per_eps, reverse=True)

    def median(self, eps=None):
        if eps is None:
            return [float(np.median(self.per_eps[e])) for e in self.ladder]
        return float(np.median(self.per_eps[eps]))

    def p90(self, eps):
        return float(np.quantile(self.per_eps[eps], 0.9))

    def mean(self, eps):
        return float(np.mean(self.per_eps[eps]))

    def stderr(self, eps):
        a = np.asarray(self.per_eps[eps])
        return float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else math.nan

    def finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.per_eps.values())

    def to_csv(self, dest=None, header_comment: str | None = None) -> str:
        lines = [f"# {header_comment}"] if header_comment else []
        lines.append(f"eps,replication,{self.kind}")
        for e in self.ladder:
            for i, v in enumerate(np.atleast_1d(self.per_eps[e]).tolist()):
                lines.append(f"{e!r},{i},{v!r}")
        text = "\n".join(lines) + "\n"
        if dest is not None:
            Path(dest).write_text(text)
        return text


def non_increasing(values: Sequence[float], last: int = 3, allowed: int = 1) -> bool:
    """Trend test over the last ``last`` points, tolerating ``allowed`` rises."""
    tail = list(values)[-last:]
    rises = sum(b > a for a, b in zip(tail, tail[1:]))
    return rises <= allowed


def _interior(n: int, m: int) -> slice:
    return slice(m, n - m + 1)


def _report(ladder, grid, builder, keep_paths: bool) -> ResidualReport:
    per_eps, paths = {}, {} if keep_paths else None
    for eps in ladder:
        m = grid.eps_steps(eps)
        res = builder(eps)
        per_eps[eps] = np.array([float(np.max(np.abs(res[_interior(grid.n_steps, m)])))])
        if keep_paths:
            paths[eps] = res
    return ResidualReport(per_eps, paths=paths)


_ESTIMATORS = {"J": jform_integral_eps, "I": symmetric_integral_eps}


def _sym(estimator: str):
    try:
        fn = _ESTIMATORS[estimator]
    except KeyError:
        raise ValueError(f"estimator must be 'J' or 'I', got {estimator!r}") from None
    return lambda y, x, eps: fn(y, x, eps).values


def _increment(values: np.ndarray, grid, eps: float, sym) -> np.ndarray:
    """Regularized increment of a node array (the symmetric integral of 1)."""
    return sym(np.ones(grid.n_steps + 1), SamplePath(grid, values), eps)


def _cubic(weight: np.ndarray, xi: SamplePath, eps: float) -> np.ndarray:
    return weighted_covariation_path(weight, [xi, xi, xi], eps)


# --------------------------------------------------------------------------
# checkers

def ito_residual(F: ItoFunction, v_paths: Sequence[SamplePath], xi: SamplePath,
                 ladder: EpsLadder, keep_paths: bool = False,
                 estimator: str = "J") -> ResidualReport:
    """Residual of F(V, xi) expanded with a -1/12 cubic correction."""
    F.need(3)
    sym = _sym(estimator)
    if len(F.dv) != len(v_paths):
        raise MissingDerivativeError("one v-partial per bounded-variation path")
    grid = paths_on_grid([xi, *v_paths])
    v = np.array([p.values for p in v_paths]).reshape(len(v_paths), grid.n_steps + 1)
    x = xi.values
    Fv = np.asarray(F.fn(v, x), dtype=float) + np.zeros_like(x)
    dFx = np.asarray(F.dx[0](v, x), dtype=float) + np.zeros_like(x)
    d3F = np.asarray(F.dx[2](v, x), dtype=float) + np.zeros_like(x)
    dFv = [np.asarray(g(v, x), dtype=float) + np.zeros_like(x) for g in F.dv]

    def build(eps):
        res = _increment(Fv, grid, eps, sym)
        for g, p in zip(dFv, v_paths):
            res = res - sym(g, p, eps)
        res = res - sym(dFx, xi, eps)
        return res + _cubic(d3F, xi, eps) / 12.0

    return _report(ladder, grid, build, keep_paths)


def chain_rule_residual(psi: Smooth, phi: Smooth, xi: SamplePath, ladder: EpsLadder,
                        keep_paths: bool = False, estimator: str = "J") -> ResidualReport:
    """int psi d(int phi d xi) - int psi phi d xi + 1/4 int dpsi dphi d[xi,xi,xi].

    The inner integral is the grid trapezoid sum, i.e. the J-form at eps = h,
    which telescopes exactly for constant integrands.
    """
    sym = _sym(estimator)
    grid = xi.grid
    t = grid.nodes
    ps, ph = psi(t, xi.values), phi(t, xi.values)
    inner = trapezoid_sum(ph, xi)
    dd = psi.d(1, t, xi.values) * phi.d(1, t, xi.values)

    def build(eps):
        outer = sym(ps, inner, eps)
        right = sym(ps * ph, xi, eps)
        return outer - right + 0.25 * _cubic(dd, xi, eps)

    return _report(ladder, grid, build, keep_paths)


def ito_wentzell_residual(field_: ItoField, xi, ladder: EpsLadder, keep_paths: bool = False,
                          lattice_dx: float = 0.02, estimator: str = "J") -> ResidualReport:
    """Residual of the Ito-Wentzell expansion of X(t, xi_t)."""
    sym = _sym(estimator)
    if field_.a_coeffs and not isinstance(xi, CompositePath):
        raise ValueError("xi must carry its decomposition (CompositePath) when a != 0")
    xi_path = xi.xi if isinstance(xi, CompositePath) else xi
    grid = paths_on_grid([xi_path, *field_.martingale_paths, *field_.bv_paths])
    t = grid.nodes
    x = xi_path.values
    along = field_.along(xi_path, orders=(0, 1, 3), dx=lattice_dx)
    mart = np.zeros_like(x)
    a_dx = []
    for a, n in zip(field_.a_coeffs, field_.martingale_paths):
        mart = mart + ito_sum(a(t, x), n).values
        a_dx.append((a.d(1, t, x), n))
    b_vals = [(b(t, x), v) for b, v in zip(field_.b_coeffs, field_.bv_paths)]

    def build(eps):
        res = _increment(along[0], grid, eps, sym) - mart
        for bv, v in b_vals:
            res = res - sym(bv, v, eps)
        res = res - sym(along[1], xi_path, eps)
        for da, n in a_dx:
            res = res - 0.5 * weighted_covariation_path(da, [n, xi_path], eps)
        return res + _cubic(along[3], xi_path, eps) / 12.0

    return _report(ladder, grid, build, keep_paths)


def bracket_residual(q: SamplePath, h, n: SamplePath, ladder: EpsLadder,
                     keep_paths: bool = False, weight=None) -> ResidualReport:
    """[Q, Y]_eps - int h w d[Q, N]_eps with Y = int h dN as grid Ito sums.

    ``h`` is a node array (adapted by construction: callers build it from
    path values up to the current node). ``weight`` (default 1) is the extra
    factor d_x beta(s, xi_s) of the field variant.
    """
    grid = paths_on_grid([q, n])
    hv = h.values if isinstance(h, SamplePath) else np.asarray(h, dtype=float)
    y = ito_sum(hv, n)
    w = hv if weight is None else hv * np.asarray(weight, dtype=float)

    def build(eps):
        left = weighted_covariation_path(np.ones_like(hv), [q, y], eps)
        return left - weighted_covariation_path(w, [q, n], eps)

    return _report(ladder, grid, build, keep_paths)


def bracket_values(q: SamplePath, h, n: SamplePath, ladder: EpsLadder, t: float = 1.0) -> ResidualReport:
    """[Q, int h dN]_eps(t) per eps (one replication)."""
    grid = paths_on_grid([q, n])
    hv = h.values if isinstance(h, SamplePath) else np.asarray(h, dtype=float)
    y = ito_sum(hv, n)
    k = grid.index_of(t)
    per = {}
    for eps in ladder:
        per[eps] = np.array([weighted_covariation_path(np.ones_like(hv), [q, y], eps)[k]])
    return ResidualReport(per, kind="value")


def zero_bracket_test(r: SamplePath, h, n: SamplePath, ladder: EpsLadder) -> ResidualReport:
    """[R, Y]_eps(1) with Y = int h dN; R independent of N or deterministic."""
    return bracket_values(r, h, n, ladder)


def stability_residual(f_maps: Sequence[Smooth], x_paths: Sequence[SamplePath], ladder: EpsLadder,
                       gradients: Sequence[Callable] | None = None,
                       keep_paths: bool = False) -> ResidualReport:
    """[F^1(X), F^2(X), F^3(X)]_eps - sum prod (grad F^j . Delta_eps X) weighted sum.

    For a single path, ``f_maps`` are :class:`Smooth` evaluators of x. For
    vector paths pass ``gradients[j](values) -> (n, nodes)`` alongside
    ``f_maps[j](values) -> nodes``.
    """
    grid = paths_on_grid(x_paths)
    vals = np.array([p.values for p in x_paths])
    t = grid.nodes
    if gradients is None:
        if len(x_paths) != 1:
            raise ValueError("pass gradients for vector paths")
        mapped = [SamplePath(grid, f(t, vals[0])) for f in f_maps]
        grads = [f.d(1, t, vals[0])[None, :] for f in f_maps]
    else:
        mapped = [SamplePath(grid, f(vals)) for f in f_maps]
        grads = [np.asarray(g(vals), dtype=float) for g in gradients]

    def build(eps):
        m = grid.eps_steps(eps)
        d = forward_increments(vals, m)
        prod = np.ones(grid.n_steps + 1)
        for g in grads:
            prod = prod * np.sum(g * d, axis=0)
        right = np.concatenate([[0.0], np.cumsum(prod[:-1])]) * grid.step / eps
        left = weighted_covariation_path(np.ones(grid.n_steps + 1), mapped, eps)
        return left - right

    return _report(ladder, grid, build, keep_paths)


def sides_of_stability(f_maps, x_path: SamplePath, eps: float) -> tuple[float, float]:
    """Magnitudes of the two sides at t = 1 (single path)."""
    grid = x_path.grid
    t = grid.nodes
    mapped = [SamplePath(grid, f(t, x_path.values)) for f in f_maps]
    left = weighted_covariation_path(np.ones(grid.n_steps + 1), mapped, eps)[-1]
    w = np.prod([f.d(1, t, x_path.values) for f in f_maps], axis=0)
    right = weighted_covariation_path(w, [x_path] * 3, eps)[-1]
    return float(abs(left)), float(abs(right))


def run_ensemble(checker: Callable[[int], ResidualReport], n_rep: int, workers: int = 1) -> ResidualReport:
    """Combine ``checker(replication)`` over replications, in order."""
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(checker, range(n_rep)))
    else:
        reports = [checker(k) for k in range(n_rep)]
    return ResidualReport.combine(reports)
