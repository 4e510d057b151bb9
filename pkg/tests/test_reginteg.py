import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from regsde.errors import YoungRegimeError
from regsde.pathgen import SamplePath, gen_brownian, gen_fbm, make_grid
from regsde.reginteg import (bracket_half, forward_integral_eps, holder_exponent, identity_defect,
                             interior_slice, ito_sum, jform_integral_eps, shift_identity,
                             stop_identity, symmetric_boundary_term, symmetric_integral_eps,
                             trapezoid_sum, write_integrals_csv, young_integral)

G64 = make_grid(64)
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@given(arrays(float, 65, elements=finite), arrays(float, 65, elements=finite),
       st.integers(1, 5))
def test_exact_identity_on_interior(y, x, j):
    xp = SamplePath(G64, x)
    eps = 2.0**-j
    scale = 1 + np.abs(y).max() * np.abs(x).max()
    assert np.max(np.abs(identity_defect(y, xp, eps))) <= 1e-12 * scale


@given(arrays(float, 65, elements=finite), arrays(float, 65, elements=finite),
       st.integers(1, 5))
def test_jform_is_forward_plus_half_bracket(y, x, j):
    xp = SamplePath(G64, x)
    eps = 2.0**-j
    lhs = jform_integral_eps(y, xp, eps).values
    rhs = forward_integral_eps(y, xp, eps).values + bracket_half(y, xp, eps).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * (1 + np.abs(y).max() * np.abs(x).max()))


def test_boundary_term_nan_outside_range():
    x = gen_brownian(G64, 1, 0)
    b = symmetric_boundary_term(x.values, x, 1 / 8)
    m = 8
    assert np.all(np.isnan(b[:m])) and np.all(np.isfinite(b[m:64 - m + 2]))
    assert np.all(np.isnan(b[64 - m + 2:]))


def test_symmetric_with_unit_integrand_telescopes():
    x = gen_fbm(G64, 0.3, 2, 0)
    eps = 1 / 8
    sl = interior_slice(G64, eps)
    sym = symmetric_integral_eps(np.ones(65), x, eps).values
    # moving averages over [t - eps, t + eps) minus those at the start
    m = 8
    k = np.arange(65)
    avg = np.array([x.values[np.clip(np.arange(i - m, i + m), 0, 64)].mean() for i in k])
    ref = avg - avg[0]
    np.testing.assert_allclose(sym[sl], ref[sl], atol=1e-12)
    assert trapezoid_sum(np.ones(65), x).values[-1] == pytest.approx(x.values[-1] - x.values[0])


def test_ito_sum_of_constant_telescopes():
    x = gen_brownian(G64, 3, 0)
    np.testing.assert_allclose(ito_sum(np.full(65, 2.0), x).values, 2 * (x.values - x.values[0]),
                               atol=1e-13)


def test_stratonovich_square_small_residual():
    g = make_grid(2**14)
    w = gen_brownian(g, 5, 0)
    eps = 2**-8
    sl = interior_slice(g, eps)
    res = symmetric_integral_eps(w.values, w, eps).values - 0.5 * w.values**2
    assert np.max(np.abs(res[sl])) < 0.5


def test_length_mismatch():
    with pytest.raises(ValueError):
        symmetric_integral_eps(np.ones(10), gen_brownian(G64, 1, 0), 1 / 8)


def test_integrals_csv(tmp_path):
    x = gen_brownian(G64, 1, 0)
    p = write_integrals_csv(x.values, x, 0.125, tmp_path, header_comment="h")
    assert p.name == "integrals_eps_0.125.csv"
    lines = p.read_text().splitlines()
    assert lines[:2] == ["# h", "t,symmetric,forward,bracket_half"] and len(lines) == 67


@pytest.mark.parametrize("seed", range(5))
def test_stop_and_shift_within_bound(seed):
    g = make_grid(256)
    rng = np.random.default_rng(seed)
    x, y = gen_fbm(g, 0.4, seed, 0, tag="x"), gen_fbm(g, 0.6, seed, 0, tag="y")
    tau = g.nodes[rng.integers(0, 257)]
    for fn in (stop_identity, shift_identity):
        lhs, rhs, bound = fn(x, y, tau, 1 / 16)
        assert np.all(np.abs(lhs - rhs) <= bound + 1e-12)


def test_stop_at_one_is_exact():
    x, y = gen_brownian(G64, 1, 0), gen_brownian(G64, 2, 0)
    lhs, rhs, bound = stop_identity(x, y, 1.0, 1 / 8)
    np.testing.assert_array_equal(lhs, rhs)


# Young ---------------------------------------------------------------------

def test_young_linear_exact():
    g = make_grid(2**10)
    s = SamplePath(g, g.nodes.copy(), meta={"holder": 1.0})
    res = young_integral(s, s)
    assert abs(res.extrapolated - 0.5) <= 1e-10
    assert res.value == pytest.approx(0.5 - 0.5 / 2**10, abs=1e-13)


def test_young_smooth_integrand():
    g = make_grid(2**12)
    t = g.nodes
    f = SamplePath(g, np.sin(t), meta={"holder": 1.0})
    x = SamplePath(g, t**2, meta={"holder": 1.0})
    exact = 2 * (np.sin(1) - np.cos(1))  # int_0^1 sin(s) 2 s ds
    assert young_integral(f, x).extrapolated == pytest.approx(exact, abs=1e-6)


def test_young_regime_errors_and_warnings():
    g = make_grid(256)
    w = gen_brownian(g, 1, 0)
    with pytest.raises(YoungRegimeError):
        young_integral(w, w)
    rough = SamplePath(g, w.values)  # no declared exponent
    with pytest.warns(RuntimeWarning):
        young_integral(rough, rough)


def test_young_fbm_converges():
    g = make_grid(2**12)
    f, x = gen_fbm(g, 0.75, 1, 0, tag="f"), gen_fbm(g, 0.75, 1, 0, tag="x")
    res = young_integral(f, x)
    assert np.isfinite(res.value) and res.error < 0.05
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        young_integral(f, x, refine_limit=6)


def test_holder_exponent_estimates():
    g = make_grid(2**12)
    assert holder_exponent(SamplePath(g, g.nodes.copy())) == pytest.approx(1.0, abs=1e-9)
    assert holder_exponent(gen_fbm(g, 0.7, 3, 0)) == pytest.approx(0.7, abs=0.15)
