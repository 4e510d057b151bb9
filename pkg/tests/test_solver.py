import dataclasses
import math

import numpy as np
import pytest

from regsde.errors import ComponentExitError, GridAlignmentError, MissingDerivativeError, NumericError
from regsde.pathgen import SamplePath, gen_brownian, gen_composite, gen_fbm, make_grid
from regsde.solver import (DriftTerm, ProblemSpec, ReducedDrift, assemble_reduced, map_back,
                           nonuniqueness_demo, resolve_brackets, residual_check, solve_reduced,
                           solve_sde)
from regsde.transform import build_H, build_K, coefficient, decompose_support, from_expressions, locate

G = make_grid(2**10)
XI = gen_fbm(G, 0.7, 3, 0)


def _hk(coeff, x, closed=False):
    return build_K(build_H(locate(decompose_support(coeff), x), coeff, use_closed_form=closed))


# problem validation ----------------------------------------------------------

def test_problem_validation():
    c = coefficient("linear")
    with pytest.raises(ValueError):
        ProblemSpec(c, XI, 1.0, case_tag="ito")
    with pytest.raises(ValueError):
        ProblemSpec(c, XI, math.nan)
    with pytest.raises(ValueError):
        ProblemSpec(c, XI, 1.0, bracket_inputs={"WW": np.zeros(G.n_steps + 1)})
    with pytest.raises(GridAlignmentError):
        ProblemSpec(c, XI, 1.0, m_path=gen_brownian(make_grid(64), 1, 0))


# assembly ----------------------------------------------------------------------

def test_hoelder_autonomous_has_alpha_only():
    c = coefficient("linear", alpha="1")
    assert assemble_reduced(ProblemSpec(c, XI, 1.0)).names() == ["alpha"]
    assert assemble_reduced(ProblemSpec(coefficient("linear"), XI, 1.0)).names() == []


def test_cubic_without_beta_matches_hoelder():
    c = coefficient("linear", alpha="x")
    zero = np.zeros(G.n_steps + 1)
    cubic = assemble_reduced(ProblemSpec(c, XI, 1.0, case_tag="cubic",
                                         bracket_inputs={"xixixi": zero}))
    hold = assemble_reduced(ProblemSpec(c, XI, 1.0, case_tag="hoelder"))
    assert cubic.names() == hold.names() == ["alpha"]


def test_forward_linear_brownian_drift():
    w = gen_brownian(G, 4, 0)
    drift = assemble_reduced(ProblemSpec(coefficient("linear"), w, 1.0, case_tag="forward"))
    assert drift.names() == ["minus_half_dsigma_dxixi"]
    term = drift.terms[0]
    np.testing.assert_allclose(term.increments, np.diff(G.nodes))
    np.testing.assert_allclose(term.integrand(0.3, np.array([0.5, 4.0])), [-0.5, -0.5])


def test_time_dependent_sigma_adds_dt_term():
    c = from_expressions("x*(1+t)")
    hk = _hk(c, 1.0)
    assert assemble_reduced(ProblemSpec(c, XI, 1.0), hk).names() == ["dtH"]


def test_cubic_requires_second_derivative():
    c = dataclasses.replace(coefficient("linear"), dx2_sigma=None)
    with pytest.raises(MissingDerivativeError):
        assemble_reduced(ProblemSpec(c, XI, 1.0, case_tag="cubic",
                                     bracket_inputs={"xixixi": np.zeros(G.n_steps + 1)}))
    assemble_reduced(ProblemSpec(c, XI, 1.0, case_tag="quadratic"))


def test_composite_brackets_are_analytic():
    comp = gen_composite(G, "fbm:0.3333333333333333", "w", 6, 0)
    w = comp.companions[0]
    c = coefficient("linear", beta="x")
    prob = ProblemSpec(c, comp, 1.0, case_tag="cubic", m_path=w)
    br = resolve_brackets(prob, ["MM", "Mxi", "xixixi"])
    np.testing.assert_array_equal(br["MM"], G.nodes)
    np.testing.assert_array_equal(br["Mxi"], G.nodes)
    np.testing.assert_array_equal(br["xixixi"], np.zeros(G.n_steps + 1))
    names = assemble_reduced(prob).names()
    assert names == ["beta_dM", "half_dbeta_beta_sigma_dMM", "half_dbeta_sigma_dMxi"]


def test_bracket_estimated_without_known_law():
    rough = SamplePath(G, gen_fbm(G, 0.4, 7, 0).values)  # law stripped
    prob = ProblemSpec(coefficient("linear"), rough, 1.0, case_tag="forward")
    est = resolve_brackets(prob, ["xixi"], eps=2**-6)["xixi"]
    assert est.shape == (G.n_steps + 1,) and est[-1] > 0
    with pytest.raises(ValueError):
        resolve_brackets(prob, ["MM"])


# reduced stepping ----------------------------------------------------------------

def test_reduced_without_terms_is_shifted_driver():
    y = solve_reduced(ReducedDrift("hoelder", [], {}), XI, 0.7, None)
    np.testing.assert_array_equal(y.values, 0.7 + XI.values - XI.values[0])


def test_constant_drift_is_exact():
    flat = SamplePath(G, np.zeros(G.n_steps + 1))
    drift = ReducedDrift("hoelder", [DriftTerm("a", lambda s, x: 2.5, np.diff(G.nodes))], {})
    y = solve_reduced(drift, flat, 1.0, None, to_x=lambda s, y, g: y)
    np.testing.assert_allclose(y.values, 1.0 + 2.5 * G.nodes, atol=1e-12)


def test_overflow_reports_step():
    c = coefficient("linear", alpha="x^2")
    with pytest.raises(NumericError, match="step"):
        solve_sde(ProblemSpec(c, XI, 1.0, use_closed_form=True))


# solutions -----------------------------------------------------------------------

@pytest.mark.parametrize("closed,tol", [(True, 1e-6), (False, 1e-4)])
def test_linear_closed_form(closed, tol):
    b = solve_sde(ProblemSpec(coefficient("linear"), XI, 2.5, use_closed_form=closed))
    np.testing.assert_allclose(b.y_path.values, math.log(2.5) + XI.values - XI.values[0], atol=1e-12)
    assert np.max(np.abs(b.x_path.values - 2.5 * np.exp(XI.values - XI.values[0]))) <= tol
    assert abs(b.x_path.values[0] - 2.5) <= 1e-8


@pytest.mark.parametrize("closed,tol", [(True, 1e-6), (False, 1e-4)])
def test_sqrt1px2_closed_form(closed, tol):
    b = solve_sde(ProblemSpec(coefficient("sqrt1px2"), XI, 0.0, use_closed_form=closed))
    assert np.max(np.abs(b.x_path.values - np.sinh(XI.values - XI.values[0]))) <= tol


def test_transform_consistency():
    c = coefficient("sqrt1px2", alpha="cos(x)")
    b = solve_sde(ProblemSpec(c, XI, 0.3))
    hk = _hk(c, 0.3)
    np.testing.assert_allclose(hk.h(0.0, b.x_path.values), b.y_path.values, atol=1e-9)


def test_time_dependent_sigma_sign():
    g = make_grid(2**10)
    drv = SamplePath(g, g.nodes.copy(), meta={"law": "deterministic"})
    b = solve_sde(ProblemSpec(from_expressions("x*(1+t)"), drv, 1.5))
    exact = 1.5 * np.exp(g.nodes + g.nodes**2 / 2)
    assert np.max(np.abs(b.x_path.values - exact)) <= 20 * g.step


def test_map_back_round_trip_at_zero():
    c = coefficient("2 + sin(x)")
    hk = _hk(c, 0.4)
    y0 = float(hk.h(0.0, 0.4))
    y = SamplePath(G, y0 + XI.values - XI.values[0])
    x = map_back(y, ProblemSpec(c, XI, 0.4), hk)
    assert abs(x.values[0] - 0.4) <= 1e-8


def test_zero_set_freezing():
    c = coefficient("sin_pi", alpha="1")
    b = solve_sde(ProblemSpec(c, XI, 0.0, window=(-3.0, 3.0)))
    assert b.component_used == "D" and b.nu_sigma == 0.0
    assert np.all(b.x_path.values == 0.0)
    assert b.residual_report["sup"] == 0.0
    # sin(pi) is 1.2e-16 in floating point, so only round-off remains
    b = solve_sde(ProblemSpec(c, XI, 1.0, window=(-3.0, 3.0)))
    assert np.all(b.x_path.values == 1.0) and b.residual_report["sup"] <= 1e-12


def test_boundary_eta_rejected():
    c = from_expressions("1000000*x")
    with pytest.raises(ValueError, match="boundary"):
        solve_sde(ProblemSpec(c, XI, 1e-10))


def test_component_exit_raises():
    c = coefficient("linear", alpha="-1000000")
    with pytest.raises(ComponentExitError):
        solve_sde(ProblemSpec(c, XI, 1.0, use_closed_form=True))


def test_brownian_stratonovich_additive():
    w = gen_brownian(G, 8, 0)
    c = from_expressions("1", alpha="0.75")
    b = solve_sde(ProblemSpec(c, w, 0.2, case_tag="brownian_stratonovich"))
    exact = 0.2 + w.values - w.values[0] + 0.75 * G.nodes
    assert np.max(np.abs(b.x_path.values - exact)) <= 10 * G.step


def test_step_halving_rate():
    def err(n, picard=False):
        g = make_grid(n)
        drv = SamplePath(g, g.nodes.copy(), meta={"law": "deterministic"})
        b = solve_sde(ProblemSpec(from_expressions("x", alpha="-log(x)"), drv, 1.5, picard=picard))
        y = 1.0 - (1.0 - math.log(1.5)) * np.exp(-g.nodes)
        return float(np.max(np.abs(b.x_path.values - np.exp(y))))

    assert err(2**7) / err(2**8) >= 1.5
    assert err(2**8, picard=True) < err(2**8)


# residuals -------------------------------------------------------------------

def test_residual_decreases_and_detects_perturbation():
    g = make_grid(2**14)
    xi = gen_fbm(g, 0.7, 9, 0)
    prob = ProblemSpec(coefficient("linear"), xi, 1.0)
    x = SamplePath(g, np.exp(xi.values - xi.values[0]))
    res = [residual_check(x, prob, 2.0**-j) for j in range(4, 9)]
    assert all(b < a for a, b in zip(res, res[1:]))
    bumped = residual_check(SamplePath(g, x.values + 0.1), prob, 2**-8)
    assert bumped >= res[-1] + 0.05


# non-uniqueness --------------------------------------------------------------

def test_nonuniqueness_peano_pair():
    demo = nonuniqueness_demo(0.5, n_steps=2**16)
    t = demo.second.x_path.grid.nodes
    np.testing.assert_allclose(demo.second.x_path.values, t**2 / 4, atol=1e-15)
    assert demo.first.x_path.values[0] == demo.second.x_path.values[0] == 0.0
    assert demo.separation_at_1 == pytest.approx(0.25, abs=1e-12)
    assert demo.h2_verdict == "converges"
    assert max(demo.residuals) <= 1e-4


def test_nonuniqueness_clipped_fbm():
    g = make_grid(2**14)
    path = gen_fbm(g, 0.7, 10, 0)
    clipped = SamplePath(g, np.maximum(path.values, 0.0))
    demo = nonuniqueness_demo(0.5, xi=clipped)
    assert demo.residuals[0] == 0.0 and demo.residuals[1] <= 1e-2
    assert demo.separation_sup > 0


@pytest.mark.parametrize("a", [0.0, 1.0, -0.3])
def test_nonuniqueness_exponent_range(a):
    with pytest.raises(ValueError):
        nonuniqueness_demo(a, n_steps=64)
