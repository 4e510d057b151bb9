"""One-dimensional equations d X = sigma(t, X)[d xi + beta dM + alpha dV].

The solver follows the reduction construction: with H the primitive of
1/sigma on the component holding eta and K its inverse, Y = H(., X) solves an
equation with unit coefficient in front of xi. That equation is stepped with
explicit Euler (xi enters additively, so its increments are used exactly)
and mapped back node-wise through K. If sigma(0, eta) = 0 and the
coefficients are autonomous the solution is the constant eta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ComponentExitError, NumericError
from .pathgen import CompositePath, Grid, SamplePath, paths_on_grid
from .reginteg import forward_integral_eps, symmetric_integral_eps
from .regvar import n_covariation_path
from .transform import (Coefficient, HKPair, SupportComponent, build_H, build_K,
                        check_conditions, check_H2, decompose_support, locate)

CASES = ("cubic", "quadratic", "forward", "hoelder", "fbm", "brownian_stratonovich")
_BRACKETS = ("MM", "Mxi", "xixi", "xixixi")


@dataclass
class ProblemSpec:
    coeff: Coefficient
    xi: object  # SamplePath or CompositePath
    eta: float
    case_tag: str = "hoelder"
    m_path: Optional[SamplePath] = None
    v_path: Optional[SamplePath] = None
    bracket_inputs: dict = field(default_factory=dict)
    window: tuple = (-10.0, 10.0)
    zero_tol: float = 1e-9
    eps_for_brackets: Optional[float] = None
    picard: bool = False
    use_closed_form: bool = False

    def __post_init__(self):
        if self.case_tag not in CASES:
            raise ValueError(f"case_tag must be one of {CASES}, got {self.case_tag!r}")
        if not math.isfinite(self.eta):
            raise ValueError("eta must be finite")
        unknown = set(self.bracket_inputs) - set(_BRACKETS)
        if unknown:
            raise ValueError(f"unknown bracket inputs {sorted(unknown)}")
        paths = [self.xi_path] + [p for p in (self.m_path, self.v_path) if p is not None]
        paths_on_grid(paths)

    @property
    def xi_path(self) -> SamplePath:
        return self.xi.xi if isinstance(self.xi, CompositePath) else self.xi

    @property
    def grid(self) -> Grid:
        return self.xi_path.grid

    @property
    def v_values(self) -> np.ndarray:
        return self.v_path.values if self.v_path is not None else self.grid.nodes


@dataclass
class DriftTerm:
    """Integrand g(t, x) (original coordinates) against node increments."""

    name: str
    integrand: Callable
    increments: np.ndarray
    martingale: bool = False


@dataclass
class ReducedDrift:
    case_tag: str
    terms: list
    brackets: dict

    def names(self) -> list:
        return [t.name for t in self.terms]


@dataclass
class SolutionBundle:
    x_path: SamplePath
    y_path: SamplePath
    component_used: object  # SupportComponent or "D"
    nu_sigma: float
    condition_report: dict
    residual_report: dict
    h2: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# brackets

def _law(p) -> dict:
    return (p.meta or {}) if p is not None else {}


def _analytic_bracket(name: str, problem: ProblemSpec):
    """Known bracket path for standard drivers, or None."""
    t = problem.grid.nodes
    xi = problem.xi
    xmeta = _law(problem.xi_path)
    mmeta = _law(problem.m_path)
    if name == "MM" and problem.m_path is not None and mmeta.get("law") == "brownian":
        return t.copy()
    if name == "xixixi":
        law = xmeta.get("law")
        if law in ("fbm", "brownian") and xmeta.get("hurst", 0.5) >= 1 / 3:
            return np.zeros_like(t)
        if law == "composite" and xmeta["r"].get("law") in ("fbm", "brownian", "deterministic") \
                and xmeta["r"].get("hurst", 1.0) >= 1 / 3:
            return np.zeros_like(t)
        if law == "deterministic":
            return np.zeros_like(t)
    if name == "xixi":
        law = xmeta.get("law")
        if law == "fbm":
            h = xmeta["hurst"]
            return np.zeros_like(t) if h > 0.5 else (t.copy() if h == 0.5 else None)
        if law == "brownian":
            return t.copy()
        if law == "deterministic":
            return np.zeros_like(t)
    if name == "Mxi" and isinstance(xi, CompositePath) and problem.m_path is not None:
        companion = xi.companions[0] if xi.companions else None
        if companion is not None and np.array_equal(companion.values, problem.m_path.values):
            r_law = xmeta["r"].get("law")
            r_zero_bracket = r_law in ("fbm", "bifractional", "deterministic", "brownian")
            if r_zero_bracket and xmeta.get("q") == "w":
                return t.copy()
            if r_zero_bracket and xmeta.get("q") == "zero":
                return np.zeros_like(t)
    if name == "Mxi" and xmeta.get("law") == "deterministic":
        return np.zeros_like(t)
    return None


def _default_eps(grid: Grid) -> float:
    return max(2.0**-8, 2.0 * grid.step)


def resolve_brackets(problem: ProblemSpec, needed, eps: float | None = None) -> dict:
    out = {}
    eps = eps or problem.eps_for_brackets or _default_eps(problem.grid)
    for name in needed:
        if name in problem.bracket_inputs:
            v = problem.bracket_inputs[name]
            out[name] = np.asarray(v.values if isinstance(v, SamplePath) else v, dtype=float)
            continue
        v = _analytic_bracket(name, problem)
        if v is None:
            xi, m = problem.xi_path, problem.m_path
            if name in ("MM", "Mxi") and m is None:
                raise ValueError(f"bracket {name} needs a martingale path")
            parts = {"MM": [m, m], "Mxi": [m, xi], "xixi": [xi, xi], "xixixi": [xi, xi, xi]}[name]
            v = n_covariation_path(parts, eps)
        out[name] = v
    return out


# --------------------------------------------------------------------------
# assembly

def _zero(g) -> bool:
    return g is None


def assemble_reduced(problem: ProblemSpec, hk: HKPair | None = None,
                     eps_for_brackets: float | None = None) -> ReducedDrift:
    """Drift records of the reduced equation for ``problem.case_tag``."""
    c = problem.coeff
    case = problem.case_tag
    t = problem.grid.nodes
    dt = np.diff(t)
    dv = np.diff(problem.v_values)
    terms = []
    if not c.autonomous:
        if hk is None:
            raise ValueError("time-dependent sigma needs the H/K pair for the dt H term")
        c.dt_sig(0.0, 0.0)  # raises if dt_sigma is missing
        terms.append(DriftTerm("dtH", lambda s, x: hk.dt_h(s, x), dt))
    if c.alpha is not None:
        terms.append(DriftTerm("alpha", lambda s, x: c.alpha(s, x), dv))
    if case in ("hoelder", "fbm", "brownian_stratonovich"):
        return ReducedDrift(case, terms, {})

    needed = []
    has_m = problem.m_path is not None and c.beta is not None
    if has_m:
        dm = np.diff(problem.m_path.values)
        terms.append(DriftTerm("beta_dM", lambda s, x: c.beta(s, x), dm, martingale=True))
    if case in ("cubic", "quadratic"):
        if has_m:
            c.require("dx_beta")
            needed += ["MM", "Mxi"]
        if case == "cubic":
            c.require("dx_sigma", "dx2_sigma")
            needed.append("xixixi")
    else:  # forward
        c.require("dx_sigma")
        needed.append("xixi")
        if has_m:
            needed += ["MM", "Mxi"]
    br = resolve_brackets(problem, needed, eps_for_brackets)
    inc = {k: np.diff(v) for k, v in br.items()}

    def add(name, fn, key):
        if np.any(inc[key] != 0):
            terms.append(DriftTerm(name, fn, inc[key]))

    if case in ("cubic", "quadratic") and has_m:
        add("half_dbeta_beta_sigma_dMM",
            lambda s, x: 0.5 * c.dx_beta(s, x) * c.beta(s, x) * c.sig(s, x), "MM")
        add("half_dbeta_sigma_dMxi", lambda s, x: 0.5 * c.dx_beta(s, x) * c.sig(s, x), "Mxi")
    if case == "cubic":
        add("cubic_correction",
            lambda s, x: (c.sig(s, x) * c.dx2_sigma(s, x) + c.dx_sigma(s, x) ** 2) / 12.0, "xixixi")
    if case == "forward":
        add("minus_half_dsigma_dxixi", lambda s, x: -0.5 * c.dx_sigma(s, x), "xixi")
        if has_m:
            add("minus_dsigma_beta_dMxi", lambda s, x: -c.dx_sigma(s, x) * c.beta(s, x), "Mxi")
            add("minus_half_dsigma_beta2_dMM",
                lambda s, x: -0.5 * c.dx_sigma(s, x) * c.beta(s, x) ** 2, "MM")
    return ReducedDrift(case, terms, br)


# --------------------------------------------------------------------------
# stepping

def solve_reduced(drift: ReducedDrift, xi: SamplePath, nu_sigma: float, hk: HKPair | None,
                  picard: bool = False, to_x: Callable | None = None) -> SamplePath:
    """Euler steps for Y = nu + (xi - xi_0) + sum_terms int g~(s, Y) dI.

    ``to_x(t, y, guess)`` maps reduced to original coordinates (defaults to
    ``hk.k``). With ``picard`` one trapezoidal corrector sweep is applied to
    the non-martingale terms of each step.
    """
    grid = xi.grid
    dxi = np.diff(xi.values)
    if not drift.terms:
        return SamplePath(grid, nu_sigma + (xi.values - xi.values[0]), label="y")
    if to_x is None:
        to_x = lambda s, y, guess: np.ravel(hk.k(s, y, guess=guess))[0].item()  # noqa: E731
    t = grid.nodes
    y = np.empty(grid.n_steps + 1)
    y[0] = nu_sigma
    bv = [tm for tm in drift.terms if not tm.martingale]
    mg = [tm for tm in drift.terms if tm.martingale]
    with np.errstate(over="ignore", invalid="ignore"):
        _euler(y, t, dxi, bv, mg, to_x, picard)
    return SamplePath(grid, y, label="y")


def _euler(y, t, dxi, bv, mg, to_x, picard) -> None:
    x_prev = None
    for k in range(t.size - 1):
        x_k = to_x(t[k], y[k], x_prev)
        x_prev = x_k
        step = dxi[k]
        for tm in mg:
            step += float(tm.integrand(t[k], x_k)) * tm.increments[k]
        drift_k = sum(float(tm.integrand(t[k], x_k)) * tm.increments[k] for tm in bv)
        y_next = y[k] + step + drift_k
        if picard and bv and math.isfinite(y_next):
            x_pred = to_x(t[k + 1], y_next, x_k)
            drift_p = sum(float(tm.integrand(t[k + 1], x_pred)) * tm.increments[k] for tm in bv)
            y_next = y[k] + step + 0.5 * (drift_k + drift_p)
        if not math.isfinite(y_next):
            raise NumericError(f"reduced state became non-finite at step {k}")
        y[k + 1] = y_next


def map_back(y: SamplePath, problem: ProblemSpec, hk) -> SamplePath:
    """X = K(t, Y) node-wise, or the constant eta when hk == "D"."""
    if isinstance(hk, str) and hk == "D":
        return SamplePath(y.grid, np.full(y.grid.n_steps + 1, float(problem.eta)), label="x")
    if problem.coeff.autonomous or hk.closed_k:
        if hk.closed_k:
            x = np.array([np.ravel(hk.k(tk, yk))[0].item() for tk, yk in zip(y.grid.nodes, y.values)]) \
                if not problem.coeff.autonomous else hk.k(0.0, y.values)
        else:
            x = hk.k(0.0, y.values)
    else:
        x = np.empty_like(y.values)
        guess = None
        for i, (tk, yk) in enumerate(zip(y.grid.nodes, y.values)):
            x[i] = guess = np.ravel(hk.k(tk, yk, guess=guess))[0].item()
    comp = hk.component
    if not np.all((x > comp.a) & (x < comp.b)):
        bad = int(np.argmax(~((x > comp.a) & (x < comp.b))))
        raise ComponentExitError(
            f"solution left component ({comp.a}, {comp.b}) at node {bad} (x={x[bad]!r})")
    return SamplePath(y.grid, x, label="x")


# --------------------------------------------------------------------------
# orchestration

def classify_eta(problem: ProblemSpec, components) -> object:
    """Component holding eta, or "D" when sigma(0, eta) vanishes."""
    eta = float(problem.eta)
    if abs(float(problem.coeff.sig(0.0, eta))) <= problem.zero_tol:
        if not problem.coeff.autonomous:
            raise ValueError("eta in the zero set needs autonomous coefficients")
        return "D"
    comp = locate(components, eta)
    if comp is None:
        raise ValueError(f"eta={eta} lies in no support component of the window {problem.window}")
    for end in (comp.a, comp.b):
        if math.isfinite(end) and abs(eta - end) <= problem.zero_tol:
            raise ValueError("eta is numerically on the boundary of the support; ill-posed")
    return comp


def solve_sde(problem: ProblemSpec, residual_eps: float | None = None) -> SolutionBundle:
    grid = problem.grid
    components = decompose_support(problem.coeff, problem.window, problem.zero_tol)
    where = classify_eta(problem, components)
    if where == "D":
        y = SamplePath(grid, problem.xi_path.values.copy(), label="y")
        x = map_back(y, problem, "D")
        res = residual_check(x, problem, residual_eps or _default_eps(grid))
        return SolutionBundle(x, y, "D", 0.0, {}, {"sup": res})
    hk = build_K(build_H(where, problem.coeff, use_closed_form=problem.use_closed_form))
    h2 = check_H2(where, problem.coeff)
    report = check_conditions(problem.coeff, [where], hk_pairs=[hk])
    nu = float(hk.h(0.0, problem.eta))
    drift = assemble_reduced(problem, hk, problem.eps_for_brackets)
    y = solve_reduced(drift, problem.xi_path, nu, hk, picard=problem.picard)
    x = map_back(y, problem, hk)
    res = residual_check(x, problem, residual_eps or _default_eps(grid))
    return SolutionBundle(x, y, where, nu, report, {"sup": res}, {k: v.verdict for k, v in h2.items()})


def residual_check(x: SamplePath, problem: ProblemSpec, eps: float) -> float:
    """sup over interior nodes of |X - eta - int sigma(X) d xi - int sigma beta(X) dM - int sigma alpha(X) dV|.

    The d xi and dM integrals are symmetric regularizations at ``eps``
    (forward ones for the forward case); the dV integral uses left-point sums.
    """
    c = problem.coeff
    integral = forward_integral_eps if problem.case_tag == "forward" else symmetric_integral_eps
    grid = x.grid
    t = grid.nodes
    sig = c.sig(t, x.values)
    res = x.values - problem.eta - integral(sig, problem.xi_path, eps).values
    if problem.m_path is not None and c.beta is not None:
        res = res - integral(sig * c.beta(t, x.values), problem.m_path, eps).values
    if c.alpha is not None:
        g = sig * c.alpha(t, x.values)
        res = res - np.concatenate([[0.0], np.cumsum(g[:-1] * np.diff(problem.v_values))])
    m = grid.eps_steps(eps)
    return float(np.max(np.abs(res[m: grid.n_steps - m + 1])))


# --------------------------------------------------------------------------
# non-uniqueness

@dataclass
class NonUniqueness:
    first: SolutionBundle
    second: SolutionBundle
    separation_sup: float
    separation_at_1: float
    h2_verdict: str
    residuals: tuple


def nonuniqueness_demo(a_exponent: float = 0.5, xi: SamplePath | None = None,
                       n_steps: int = 2**20, eps: float | None = None) -> NonUniqueness:
    """Two solutions from 0 of dX = |X|^a d xi for 0 < a < 1.

    X^1 is identically 0; X^2 = K(xi) with H(x) = x^(1-a)/(1-a) on (0, inf)
    and K extended by 0 below 0, which keeps K in C^1 with K' = sigma(K).
    """
    from .pathgen import make_grid
    from .transform import coefficient

    a = float(a_exponent)
    if not 0.0 < a < 1.0:
        raise ValueError("a_exponent must lie in (0, 1)")
    if xi is None:
        grid = make_grid(n_steps)
        xi = SamplePath(grid, grid.nodes, label="t", meta={"law": "deterministic"})
    grid = xi.grid
    eps = eps or max(2.0**-10, grid.step)
    coeff = coefficient(f"abs_pow:{a!r}")
    problem = ProblemSpec(coeff, xi, 0.0, case_tag="hoelder")
    y = SamplePath(grid, xi.values - xi.values[0], label="y")
    k = np.where(y.values > 0, (np.maximum(y.values, 0.0) * (1 - a)) ** (1 / (1 - a)), 0.0)
    x1 = SamplePath(grid, np.zeros(grid.n_steps + 1), label="x1")
    x2 = SamplePath(grid, k, label="x2")
    r1 = residual_check(x1, problem, eps)
    r2 = residual_check(x2, problem, eps)
    right = SupportComponent(0.0, math.inf, 1.0, 1, 1, (-10.0, 10.0))
    verdict = check_H2(right, coeff)["lower"].verdict
    b1 = SolutionBundle(x1, SamplePath(grid, y.values.copy()), "D", 0.0, {}, {"sup": r1})
    b2 = SolutionBundle(x2, y, right, 0.0, {}, {"sup": r2}, {"lower": verdict})
    sep = np.abs(x2.values - x1.values)
    return NonUniqueness(b1, b2, float(sep.max()), float(sep[-1]), verdict, (r1, r2))
