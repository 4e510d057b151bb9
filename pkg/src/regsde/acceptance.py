"""Acceptance suite: fourteen numbered checks with pass/fail verdicts.

Every check is a pure function of the master seed. Each one returns a
:class:`CriterionResult` carrying the measured numbers and the CSV tables
that back them; :func:`run_suite` writes those tables plus a summary.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .itocheck import (ItoField, ItoFunction, constant, ito_residual,
                       ito_wentzell_residual, non_increasing, run_ensemble, smooth)
from .pathgen import (SamplePath, gen_brownian, gen_composite, gen_fbm, make_grid)
from .reginteg import (identity_defect, interior_slice, shift_identity, stop_identity,
                       symmetric_integral_eps, young_integral)
from .regvar import (EpsLadder, loglog_slope, mc_mean, n_covariation_eps, squared_increment_sum,
                     strong_bounded, strong_norm_eps)
from .solver import ProblemSpec, nonuniqueness_demo, solve_sde
from .transform import coefficient, from_expressions

N_STEPS = 2**14
LADDER = EpsLadder.dyadic(4, 8)


def load_thresholds() -> dict:
    text = resources.files("regsde").joinpath("acceptance_thresholds.json").read_text()
    return json.loads(text)


def derived_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class CriterionResult:
    cid: str
    title: str
    passed: bool
    detail: dict
    tables: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.detail.items())
        return f"[{verdict}] {self.cid} {self.title}: {shown}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _table(header: str, rows) -> str:
    lines = [header]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row))
    return "\n".join(lines) + "\n"


@dataclass
class SuiteContext:
    seed: int = 20240611
    workers: int = 1
    n_steps: int = N_STEPS

    def seed_for(self, cid: str) -> int:
        return derived_seed(self.seed, cid)

    def map(self, fn: Callable, items) -> list:
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]


# --------------------------------------------------------------------------
# criteria

def c01_quadratic_variation(ctx: SuiteContext) -> CriterionResult:
    grid = make_grid(ctx.n_steps)
    seed = ctx.seed_for("c01")
    eps = 2.0**-8

    def one(r):
        w = gen_brownian(grid, seed, r)
        return n_covariation_eps([w, w], eps), squared_increment_sum(w)

    vals = np.array(ctx.map(one, range(200)))
    mean_eps, se = mc_mean(vals[:, 0])
    mean_grid, _ = mc_mean(vals[:, 1])
    rel = abs(mean_eps - 1.0)
    cross = abs(mean_eps - mean_grid) / mean_grid
    ok = rel <= 0.02 and cross <= 0.01
    rows = [(i, a, b) for i, (a, b) in enumerate(vals)]
    return CriterionResult("c01", "Brownian quadratic variation", ok,
                           {"mean_eps": mean_eps, "stderr": se, "rel_err": rel,
                            "mean_grid_sum": mean_grid, "cross_rel": cross},
                           {"qv": _table("replication,eps_estimate,grid_sum", rows)})


def c02_cubic_regime(ctx: SuiteContext) -> CriterionResult:
    grid = make_grid(ctx.n_steps)
    seed = ctx.seed_for("c02")
    n_rep = 100

    def one(args):
        hurst, r = args
        x = gen_fbm(grid, hurst, seed, r, tag=f"fbm{hurst:.4f}")
        return ([strong_norm_eps([x] * 3, e) for e in LADDER],
                [abs(n_covariation_eps([x] * 3, e)) for e in LADDER])

    third = np.array(ctx.map(one, [(1 / 3, r) for r in range(n_rep)]))
    quarter = np.array(ctx.map(one, [(0.25, r) for r in range(n_rep)]))
    strong3 = np.median(third[:, 0, :], axis=0)
    cov3 = np.median(third[:, 1, :], axis=0)
    strong4 = np.median(quarter[:, 0, :], axis=0)
    slope = loglog_slope(list(LADDER), strong4)
    bounded = strong_bounded(strong3)
    decreasing = bool(np.all(np.diff(cov3) < 0))
    slope_ok = abs(slope + 0.25) <= 0.15
    rows = [(e, a, b, c) for e, a, b, c in zip(LADDER, strong3, cov3, strong4)]
    return CriterionResult("c02", "cubic variation regime", bounded and decreasing and slope_ok,
                           {"strong_ratio_H1/3": float(strong3.max() / strong3.min()),
                            "cubic_median_decreasing": decreasing,
                            "slope_H1/4": slope},
                           {"cubic": _table("eps,strong_median_H1_3,abs_cubic_median_H1_3,"
                                            "strong_median_H1_4", rows)})


def _stratonovich_sups(ctx: SuiteContext, seed: int, n_rep: int) -> np.ndarray:
    grid = make_grid(ctx.n_steps)

    def one(r):
        w = gen_brownian(grid, seed, r)
        target = 0.5 * w.values**2
        out = []
        for e in LADDER:
            est = symmetric_integral_eps(w.values, w, e).values
            out.append(float(np.max(np.abs(est - target)[interior_slice(grid, e)])))
        return out

    return np.array(ctx.map(one, range(n_rep)))


def c03_stratonovich(ctx: SuiteContext) -> CriterionResult:
    sups = _stratonovich_sups(ctx, ctx.seed_for("c03"), 200)
    med = np.median(sups, axis=0)
    threshold = load_thresholds()["c03_stratonovich_median_at_2^-8"]["threshold"]
    ok = med[-1] < threshold and non_increasing(med, last=3, allowed=1)
    rows = [(e, v) for e, v in zip(LADDER, med)]
    return CriterionResult("c03", "Stratonovich identity", bool(ok),
                           {"median_2^-8": float(med[-1]), "threshold": threshold,
                            "medians": med.tolist()},
                           {"stratonovich": _table("eps,median_sup_residual", rows)})


def c04_exact_identity(ctx: SuiteContext) -> CriterionResult:
    rng = np.random.default_rng(ctx.seed_for("c04"))
    worst, rows = 0.0, []
    for i in range(10):
        n = int(2 ** rng.integers(6, 13))
        grid = make_grid(n)
        eps = 2.0 ** -int(rng.integers(1, int(math.log2(n))))
        hy, hx = rng.uniform(0.2, 0.8, size=2)
        y = gen_fbm(grid, float(hy), int(rng.integers(2**62)), i, tag="y")
        x = gen_fbm(grid, float(hx), int(rng.integers(2**62)), i, tag="x")
        scale = 1.0 + float(np.max(np.abs(y.values)) * np.max(np.abs(x.values)))
        d = float(np.max(np.abs(identity_defect(y.values, x, eps)))) / scale
        worst = max(worst, d)
        rows.append((i, n, eps, d))
    return CriterionResult("c04", "discrete symmetric/forward/bracket identity", worst <= 1e-12,
                           {"max_scaled_defect": worst},
                           {"identity": _table("pair,n_steps,eps,scaled_defect", rows)})


def _vx3() -> ItoFunction:
    return ItoFunction(lambda v, x: v[0] * x**3, [lambda v, x: x**3],
                       [lambda v, x: 3 * v[0] * x**2, lambda v, x: 6 * v[0] * x,
                        lambda v, x: 6 * v[0] + 0 * x])


def c05_ito_formula(ctx: SuiteContext) -> CriterionResult:
    grid = make_grid(ctx.n_steps)
    seed = ctx.seed_for("c05")
    v = SamplePath(grid, grid.nodes.copy(), label="t")
    probe = gen_fbm(grid, 1 / 3, seed, 10_000)
    const = ItoFunction(lambda v, x: 2.0 + 0 * x, [], [lambda v, x: 0 * x] * 3)
    ident = ItoFunction(lambda v, x: x, [], [lambda v, x: 1 + 0 * x, lambda v, x: 0 * x,
                                              lambda v, x: 0 * x])
    structural = max(max(ito_residual(const, [], probe, LADDER).median()),
                     max(ito_residual(ident, [], probe, LADDER).median()))

    def one(r, estimator):
        xi = gen_fbm(grid, 1 / 3, seed, r)
        return ito_residual(_vx3(), [v], xi, LADDER, estimator=estimator)

    rep_j = run_ensemble(lambda r: one(r, "J"), 20, ctx.workers)
    rep_i = run_ensemble(lambda r: one(r, "I"), 20, ctx.workers)
    med = rep_j.median()
    ok = structural <= 1e-12 and bool(np.all(np.diff(med) < 0)) and med[-1] < 0.05
    rows = [(e, a, b) for e, a, b in zip(rep_j.ladder, med, rep_i.median())]
    return CriterionResult("c05", "Ito formula residual", ok,
                           {"structural_max": structural, "median_2^-8": med[-1],
                            "medians": med, "boundary_form_median_2^-8": rep_i.median()[-1]},
                           {"ito": _table("eps,median_jform,median_iform", rows)})


def c06_bracket_formula(ctx: SuiteContext) -> CriterionResult:
    grid = make_grid(ctx.n_steps)
    seed = ctx.seed_for("c06")
    eps = 2.0**-8

    def one(r):
        w = gen_brownian(grid, seed, r)
        h = np.cos(w.values)
        y = np.concatenate([[0.0], np.cumsum(h[:-1] * np.diff(w.values))])
        br = n_covariation_eps([w, SamplePath(grid, y)], eps)
        quad = float(np.sum(h[1:] + h[:-1]) * 0.5 * grid.step)
        return br, quad

    vals = np.array(ctx.map(one, range(300)))
    diff = vals[:, 0] - vals[:, 1]
    mean, se = mc_mean(diff)
    ok = abs(mean) <= 3 * se
    rows = [(i, a, b) for i, (a, b) in enumerate(vals)]
    return CriterionResult("c06", "bracket formula", bool(ok),
                           {"mean_diff": mean, "stderr": se, "z": abs(mean) / se},
                           {"bracket": _table("replication,bracket_eps,quadrature", rows)})


def c07_zero_bracket(ctx: SuiteContext) -> CriterionResult:
    grid = make_grid(ctx.n_steps)
    seed = ctx.seed_for("c07")

    def one(r):
        comp = gen_composite(grid, "fbm:0.3333333333333333", "zero", seed, r)
        w = comp.companions[0]
        y = SamplePath(grid, w.values - w.values[0])  # int 1 dW
        return [n_covariation_eps([comp.r_part, y], e) for e in LADDER]

    vals = np.array(ctx.map(one, range(300)))
    zs, rows, ok = [], [], True
    for j, e in enumerate(LADDER):
        mean, se = mc_mean(vals[:, j])
        zs.append(abs(mean) / se)
        ok &= abs(mean) <= 3 * se
        rows.append((e, mean, se))
    return CriterionResult("c07", "zero bracket", bool(ok), {"z_scores": zs},
                           {"zero_bracket": _table("eps,mean,stderr", rows)})


def c08_ito_wentzell(ctx: SuiteContext) -> CriterionResult:
    grid = make_grid(ctx.n_steps)
    seed = ctx.seed_for("c08")
    sin_f = smooth(np.sin, np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), name="sin")
    cube = smooth(lambda x: x**3, lambda x: 3 * x**2, lambda x: 6 * x, lambda x: 6 + 0 * x,
                  name="cube")
    ident = smooth(lambda x: x, lambda x: 1 + 0 * x, lambda x: 0 * x, lambda x: 0 * x, name="id")
    probe = gen_composite(grid, "fbm:0.3333333333333333", "w", seed, 10_000)
    # a = b = 0 reduces to the Ito formula
    plain = ito_wentzell_residual(ItoField(cube), probe, LADDER, keep_paths=True)
    F = ItoFunction(lambda v, x: x**3, [], [lambda v, x: 3 * x**2, lambda v, x: 6 * x,
                                            lambda v, x: 6 + 0 * x])
    ref = ito_residual(F, [], probe.xi, LADDER)
    reduction = max(abs(a - b) for a, b in zip(plain.median(), ref.median()))
    t_path = SamplePath(grid, grid.nodes.copy())
    drifted = ItoField(ident, b_coeffs=[constant(1.0)], bv_paths=[t_path])
    shifted = max(ito_wentzell_residual(drifted, probe.xi, LADDER).median())

    a_x = smooth(lambda x: x, lambda x: 1 + 0 * x, lambda x: 0 * x, lambda x: 0 * x, name="x")

    def one(r):
        comp = gen_composite(grid, "fbm:0.3333333333333333", "w", seed, r)
        fld = ItoField(sin_f, a_coeffs=[a_x], martingale_paths=[comp.companions[0]])
        return ito_wentzell_residual(fld, comp, LADDER)

    rep = run_ensemble(one, 10, ctx.workers)
    med = rep.median()
    ok = reduction <= 1e-12 and shifted <= 1e-12 and bool(np.all(np.diff(med) < 0))
    rows = [(e, v) for e, v in zip(rep.ladder, med)]
    return CriterionResult("c08", "Ito-Wentzell residual", ok,
                           {"reduction_gap": reduction, "drift_case_max": shifted, "medians": med},
                           {"ito_wentzell": _table("eps,median_sup_residual", rows)})


def _weierstrass(t, a: float, phase: float, terms: int = 30):
    k = np.arange(terms)
    return np.sum(2.0 ** (-a * k)[:, None] * np.cos(2.0**k[:, None] * np.pi * t[None, :] + phase),
                  axis=0)


def c09_young(ctx: SuiteContext) -> CriterionResult:
    grid = make_grid(ctx.n_steps)
    t = grid.nodes
    f = SamplePath(grid, _weierstrass(t, 0.7, 0.3), meta={"holder": 0.7})
    g = SamplePath(grid, _weierstrass(t, 0.7, 1.1), meta={"holder": 0.7})
    res = young_integral(f, g, tol=0.0)
    levels = res.levels
    top = max(levels)
    ref = levels[top]
    ls = [lv for lv in sorted(levels) if 2 <= lv <= top - 4]
    errs = [abs(levels[lv] - ref) for lv in ls]
    slope = loglog_slope([2.0**-lv for lv in ls], errs)
    lin = SamplePath(grid, t.copy(), meta={"holder": 1.0})
    ss = young_integral(lin, lin)
    ss_err = abs(ss.extrapolated - 0.5)
    ok = slope >= 0.3 and ss_err <= 1e-10
    rows = [(lv, 2.0**-lv, levels[lv], e) for lv, e in zip(ls, errs)]
    return CriterionResult("c09", "Young integral order", ok,
                           {"refinement_slope": slope, "int_s_ds_err": ss_err,
                            "int_s_ds_leftpoint_err": abs(ss.value - 0.5)},
                           {"young": _table("level,mesh,sum,error_vs_finest", rows)})


def c10_solver_exactness(ctx: SuiteContext) -> CriterionResult:
    grid = make_grid(ctx.n_steps)
    xi = gen_fbm(grid, 0.7, ctx.seed_for("c10"), 0)
    dxi = xi.values - xi.values[0]
    errs = {}
    for closed in (True, False):
        tag = "analytic" if closed else "numeric"
        for eta in (1.0, 2.5):
            b = solve_sde(ProblemSpec(coefficient("linear"), xi, eta, use_closed_form=closed))
            errs[f"linear_eta{eta}_{tag}"] = float(np.max(np.abs(b.x_path.values - eta * np.exp(dxi))))
        for eta in (0.0, -0.7):
            b = solve_sde(ProblemSpec(coefficient("sqrt1px2"), xi, eta, use_closed_form=closed))
            exact = np.sinh(np.arcsinh(eta) + dxi)
            errs[f"sqrt1px2_eta{eta}_{tag}"] = float(np.max(np.abs(b.x_path.values - exact)))

    def halving_error(n):
        g = make_grid(n)
        drv = SamplePath(g, g.nodes.copy(), meta={"law": "deterministic"})
        eta = 1.5
        b = solve_sde(ProblemSpec(from_expressions("x", alpha="-log(x)"), drv, eta))
        y = 1.0 - (1.0 - math.log(eta)) * np.exp(-g.nodes)
        return float(np.max(np.abs(b.x_path.values - np.exp(y))))

    coarse, fine = halving_error(2**8), halving_error(2**9)
    ratio = coarse / fine
    ok = all(v <= (1e-6 if k.endswith("analytic") else 1e-4) for k, v in errs.items()) and ratio >= 1.5
    rows = [(k, v) for k, v in errs.items()] + [("halving_2^8", coarse), ("halving_2^9", fine)]
    return CriterionResult("c10", "transform solver exactness", ok,
                           {"max_analytic": max(v for k, v in errs.items() if k.endswith("analytic")),
                            "max_numeric": max(v for k, v in errs.items() if k.endswith("numeric")),
                            "halving_ratio": ratio},
                           {"solver_exactness": _table("case,sup_error", rows)})


def c11_confinement(ctx: SuiteContext) -> CriterionResult:
    grid = make_grid(2**8)
    rng = np.random.default_rng(ctx.seed_for("c11"))
    coeff = coefficient("sin_pi", alpha="cos(pi*x)")
    rows, exits = [], 0
    for i in range(50):
        k = int(rng.integers(-2, 2))
        eta = k + float(rng.uniform(0.02, 0.98))
        scale = float(rng.uniform(0.5, 3.0))
        xi0 = gen_fbm(grid, 0.7, int(rng.integers(2**62)), i)
        xi = xi0.with_values(scale * xi0.values)
        try:
            b = solve_sde(ProblemSpec(coeff, xi, eta, window=(-3.0, 3.0)))
            inside = bool(np.all((b.x_path.values > k) & (b.x_path.values < k + 1)))
        except Exception:  # any exit is a failure of the criterion
            inside = False
        exits += not inside
        rows.append((i, eta, scale, int(inside)))
    frozen = []
    for eta, spec in ((0.0, "sin_pi"), (1.0, "sin_pi"), (-2.0, "sin_pi"), (0.0, "linear")):
        xi = gen_fbm(grid, 0.7, int(rng.integers(2**62)), 99)
        b = solve_sde(ProblemSpec(coefficient(spec, alpha="1"), xi, eta, window=(-3.0, 3.0)))
        frozen.append(bool(b.component_used == "D" and np.all(b.x_path.values == eta)))
    ok = exits == 0 and all(frozen)
    return CriterionResult("c11", "component confinement and zero-set freezing", ok,
                           {"exits": exits, "frozen_exact": frozen},
                           {"confinement": _table("solve,eta,xi_scale,inside", rows)})


def c12_nonuniqueness(ctx: SuiteContext) -> CriterionResult:
    demo = nonuniqueness_demo(0.5)
    r1, r2 = demo.residuals
    ok = (r1 <= 1e-6 and r2 <= 1e-6 and abs(demo.separation_at_1 - 0.25) <= 1e-6
          and demo.h2_verdict == "converges")
    rows = [("zero_solution", r1), ("peano_solution", r2), ("separation_t1", demo.separation_at_1)]
    return CriterionResult("c12", "non-uniqueness", ok,
                           {"residual_zero": r1, "residual_peano": r2,
                            "separation_t1": demo.separation_at_1, "h2_at_zero": demo.h2_verdict},
                           {"nonuniqueness": _table("quantity,value", rows)})


def c13_stop_shift(ctx: SuiteContext) -> CriterionResult:
    rng = np.random.default_rng(ctx.seed_for("c13"))
    grid = make_grid(2**10)
    worst_stop = worst_shift = -math.inf
    rows = []
    for i in range(10):
        x = gen_fbm(grid, float(rng.uniform(0.3, 0.8)), int(rng.integers(2**62)), i, tag="x")
        y = gen_fbm(grid, float(rng.uniform(0.3, 0.8)), int(rng.integers(2**62)), i, tag="y")
        tau = grid.nodes[int(rng.integers(0, grid.n_steps + 1))]
        eps = 2.0 ** -int(rng.integers(4, 9))
        lhs, rhs, bound = stop_identity(x, y, tau, eps)
        a = float(np.max(np.abs(lhs - rhs) - bound))
        lhs, rhs, bound = shift_identity(x, y, tau, eps)
        b = float(np.max(np.abs(lhs - rhs) - bound))
        worst_stop, worst_shift = max(worst_stop, a), max(worst_shift, b)
        rows.append((i, tau, eps, a, b))
    ok = worst_stop <= 1e-12 and worst_shift <= 1e-12
    return CriterionResult("c13", "stop and shift identities", ok,
                           {"max_excess_stop": worst_stop, "max_excess_shift": worst_shift},
                           {"stop_shift": _table("pair,tau,eps,excess_stop,excess_shift", rows)})


CRITERIA = [c01_quadratic_variation, c02_cubic_regime, c03_stratonovich, c04_exact_identity,
            c05_ito_formula, c06_bracket_formula, c07_zero_bracket, c08_ito_wentzell, c09_young,
            c10_solver_exactness, c11_confinement, c12_nonuniqueness, c13_stop_shift]


# --------------------------------------------------------------------------
# running and writing

def header_line(config_sha: str, seed: int) -> str:
    return f"# regsde {__version__} config_sha256={config_sha} seed={seed}"


def write_tables(results, out_dir, config_sha: str, seed: int) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = header_line(config_sha, seed)
    written = []
    for res in results:
        for name, text in res.tables.items():
            p = out / f"{res.cid}_{name}.csv"
            p.write_text(head + "\n" + text)
            written.append(p)
    summary = _table("criterion,title,passed", [(r.cid, r.title.replace(",", ";"), int(r.passed))
                                                 for r in results])
    p = out / "summary.csv"
    p.write_text(head + "\n" + summary)
    written.append(p)
    return written


def digest_tables(paths) -> dict:
    return {Path(p).name: hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in paths}


def run_criteria(ctx: SuiteContext, only=None, log=None) -> list[CriterionResult]:
    results = []
    for fn in CRITERIA:
        cid = fn.__name__[:3]
        if only and cid not in only:
            continue
        start = time.perf_counter()
        res = fn(ctx)
        res.seconds = time.perf_counter() - start
        results.append(res)
        if log:
            log(res.line())
    return results


def c14_determinism(ctx: SuiteContext, first_digest: dict, out_dir, config_sha: str,
                    only=None) -> CriterionResult:
    """Rerun the suite with the same seed and compare table hashes."""
    again = run_criteria(ctx, only)
    second = digest_tables(write_tables(again, out_dir, config_sha, ctx.seed))
    same = second == first_digest
    differing = sorted(k for k in first_digest if first_digest.get(k) != second.get(k))
    return CriterionResult("c14", "determinism", same,
                           {"files": len(first_digest), "differing": differing or "none"})


def run_suite(ctx: SuiteContext, out_dir, config_sha: str = "none", only=None,
              determinism: bool = True, log=None) -> list[CriterionResult]:
    out = Path(out_dir)
    results = run_criteria(ctx, only, log)
    digest = digest_tables(write_tables(results, out / "run1", config_sha, ctx.seed))
    if determinism:
        res = c14_determinism(ctx, digest, out / "run2", config_sha, only)
        results.append(res)
        if log:
            log(res.line())
    write_tables(results, out, config_sha, ctx.seed)
    return results
