import io
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import fbm_cov
from regsde.errors import FactorizationError, GridAlignmentError
from regsde.pathgen import (FactorCache, SamplePath, bifractional_covariance, cholesky_factor,
                            fbm_covariance, gen_bifractional, gen_brownian, gen_composite,
                            gen_ensemble, gen_fbm, make_grid, read_path_csv, shift_path,
                            stop_path, stream, write_path_csv)
from regsde.regvar import n_covariation_eps

FROZEN = json.loads((Path(__file__).parent / "frozen_values.json").read_text())


# grids ---------------------------------------------------------------------

def test_grid_examples():
    np.testing.assert_array_equal(make_grid(4).nodes, [0, 0.25, 0.5, 0.75, 1])
    np.testing.assert_array_equal(make_grid(2).nodes, [0, 0.5, 1])


@pytest.mark.parametrize("n", [3, 1, 0, -4, 6, 1000])
def test_grid_rejects_non_dyadic(n):
    with pytest.raises(GridAlignmentError, match="grid must align with epsilon ladder"):
        make_grid(n)


def test_eps_alignment():
    g = make_grid(16)
    assert g.eps_steps(0.25) == 4
    with pytest.raises(GridAlignmentError):
        g.eps_steps(0.1)
    with pytest.raises(GridAlignmentError):
        g.eps_steps(1 / 32)


@given(st.floats(-5, 5, allow_nan=False))
def test_clamp_consistency(t):
    g = make_grid(8)
    x = SamplePath(g, np.arange(9.0) ** 2)
    v = x(t)
    if t <= 0:
        assert v == x.values[0]
    elif t >= 1:
        assert v == x.values[-1]
    else:
        assert x.values.min() <= v <= x.values.max()


def test_path_validation():
    g = make_grid(4)
    with pytest.raises(ValueError):
        SamplePath(g, np.zeros(4))
    with pytest.raises(ValueError):
        SamplePath(g, [0, 1, np.nan, 2, 3])
    with pytest.raises(GridAlignmentError):
        SamplePath(g, np.zeros(5)) + SamplePath(make_grid(8), np.zeros(9))


# covariances ---------------------------------------------------------------

@given(st.floats(0.05, 0.95))
def test_fbm_variance_at_one(h):
    assert fbm_covariance(1.0, 1.0, h) == pytest.approx(1.0, abs=1e-15)


@given(st.floats(0, 1), st.floats(0, 1))
def test_half_is_brownian(s, t):
    assert fbm_covariance(s, t, 0.5) == pytest.approx(min(s, t), abs=1e-15)


@given(st.floats(0.01, 1), st.floats(0.01, 1), st.floats(0.1, 0.9))
def test_bifractional_k1_is_fbm(s, t, h):
    assert bifractional_covariance(s, t, h, 1.0) == pytest.approx(fbm_covariance(s, t, h), abs=1e-14)


@given(st.floats(0.01, 1), st.floats(0.1, 0.9), st.floats(0.1, 1.0))
def test_bifractional_variance(t, h, k):
    assert bifractional_covariance(t, t, h, k) == pytest.approx(t ** (2 * h * k), rel=1e-12)


def test_fbm_monte_carlo_covariance():
    g = make_grid(4)
    vals = np.array([gen_fbm(g, 1 / 3, 123, r).values for r in range(10_000)])
    prod = vals[:, 1] * vals[:, 3]
    target = fbm_cov(0.25, 0.75, 1 / 3)
    assert abs(prod.mean() - target) <= 3 * prod.std(ddof=1) / np.sqrt(prod.size)


@pytest.mark.parametrize("make,var", [
    (lambda g, r: gen_brownian(g, 5, r), lambda t: t),
    (lambda g, r: gen_fbm(g, 0.3, 5, r), lambda t: t**0.6),
    (lambda g, r: gen_fbm(g, 0.8, 5, r, method="circulant"), lambda t: t**1.6),
    (lambda g, r: gen_bifractional(g, 0.5, 2 / 3, 5, r), lambda t: t ** (2 / 3)),
])
def test_gaussian_moments(make, var):
    g = make_grid(16)
    n = 2000
    vals = np.array([make(g, r).values for r in range(n)])
    for k in (3, 8, 16):
        col = vals[:, k]
        v = var(g.nodes[k])
        assert abs(col.mean()) <= 4 * np.sqrt(v) / np.sqrt(n)
        assert abs(col.var(ddof=1) - v) <= 5 * v * np.sqrt(2 / n)


def test_circulant_large_grid_variance():
    g = make_grid(2**13)
    ends = np.array([gen_fbm(g, 1 / 3, 9, r).values[-1] for r in range(400)])
    assert abs(ends.var(ddof=1) - 1.0) <= 5 * np.sqrt(2 / 400)


def test_parameter_errors():
    g = make_grid(4)
    for h in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            gen_fbm(g, h, 1)
    with pytest.raises(ValueError):
        gen_bifractional(g, 0.5, 1.5, 1)
    with pytest.raises(ValueError):
        gen_fbm(g, 0.3, 1, method="spectral")


# determinism ---------------------------------------------------------------

def test_frozen_samples():
    g = make_grid(8)
    np.testing.assert_array_equal(gen_brownian(g, 1, 0).values, FROZEN["brownian_seed1_rep0"])
    np.testing.assert_array_equal(gen_fbm(g, 0.3, 1, 0).values, FROZEN["fbm_h0.3_seed1_rep0"])
    np.testing.assert_array_equal(gen_bifractional(g, 0.5, 2 / 3, 1, 0).values,
                                  FROZEN["bifbm_h0.5_k0.6667_seed1_rep0"])
    np.testing.assert_array_equal(gen_fbm(g, 0.3, 1, 0, method="circulant").values,
                                  FROZEN["fbm_circulant_h0.3_seed1_rep0_n8"])


def test_ensemble_independent_of_workers():
    g = make_grid(256)
    gen = lambda r: gen_fbm(g, 0.4, 77, r)  # noqa: E731
    a = gen_ensemble(gen, 12, 77, workers=1).values()
    b = gen_ensemble(gen, 12, 77, workers=4).values()
    np.testing.assert_array_equal(a, b)


def test_streams_are_distinct():
    a = stream(1, 0, "W").standard_normal(4)
    assert not np.array_equal(a, stream(1, 0, "R").standard_normal(4))
    assert not np.array_equal(a, stream(1, 1, "W").standard_normal(4))
    np.testing.assert_array_equal(a, stream(1, 0, "W").standard_normal(4))


# composites ----------------------------------------------------------------

def test_composite_additivity_and_zero_r():
    g = make_grid(64)
    c = gen_composite(g, "fbm:0.3333333333333333", "w", 3, 0)
    np.testing.assert_allclose(c.xi.values, c.r_part.values + c.q_part.values, rtol=0, atol=1e-15)
    z = gen_composite(g, "zero", "sin_w", 3, 0)
    np.testing.assert_array_equal(z.xi.values, z.q_part.values)
    np.testing.assert_array_equal(z.q_part.values, np.sin(z.companions[0].values))


def test_composite_r_independent_of_w():
    g = make_grid(64)
    c = gen_composite(g, "brownian", "w", 3, 0)
    assert not np.array_equal(c.r_part.values, c.companions[0].values)


def test_composite_bracket_with_companion():
    g = make_grid(2**12)
    vals = [n_covariation_eps([c.xi, c.companions[0]], 2**-6)
            for c in (gen_composite(g, "fbm:0.3333333333333333", "w", 4, r) for r in range(100))]
    mean, se = np.mean(vals), np.std(vals, ddof=1) / 10
    assert abs(mean - 1.0) <= 3 * se + 2**-6  # O(eps) clamping bias at t = 1


def test_composite_unknown_descriptor():
    g = make_grid(4)
    with pytest.raises(ValueError):
        gen_composite(g, "levy:1.5", "w", 1)
    with pytest.raises(ValueError):
        gen_composite(g, "zero", "w3", 1)


# stop / shift --------------------------------------------------------------

@given(st.integers(0, 16))
def test_stop_and_shift_properties(k):
    g = make_grid(16)
    x = gen_brownian(g, 8, 0)
    tau = g.nodes[k]
    stopped = stop_path(x, tau)
    np.testing.assert_array_equal(stopped.values[:k + 1], x.values[:k + 1])
    assert np.all(stopped.values[k:] == x.values[k])
    shifted = shift_path(x, tau)
    np.testing.assert_array_equal(shifted.values[: 17 - k], x.values[k:])
    assert np.all(shifted.values[17 - k:] == x.values[-1])
    assert np.all(stop_path(shift_path(x, tau), 0.0).values == x.values[k])


def test_stop_shift_edges():
    g = make_grid(8)
    x = gen_brownian(g, 8, 0)
    np.testing.assert_array_equal(stop_path(x, 1.0).values, x.values)
    assert np.all(stop_path(x, 0.0).values == x.values[0])
    np.testing.assert_array_equal(shift_path(x, 0.0).values, x.values)


# I/O -----------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    g = make_grid(32)
    x = gen_fbm(g, 0.3, 2, 0)
    dest = tmp_path / "p.csv"
    write_path_csv(x, dest, header_comment="note")
    text = dest.read_text().splitlines()
    assert text[0] == "# note" and text[1] == "t,value"
    back = read_path_csv(dest)
    np.testing.assert_array_equal(back.values, x.values)
    buf = io.StringIO()
    write_path_csv(x, buf)
    assert buf.getvalue().startswith("t,value\n")


def test_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,x\n0,0\n0.5,1\n1,2\n")
    with pytest.raises(ValueError):
        read_path_csv(p)


def test_factor_cache_file_round_trip(tmp_path):
    cov = fbm_covariance(*np.meshgrid(np.arange(1, 9) / 8, np.arange(1, 9) / 8), 0.3)
    factor = cholesky_factor(cov)
    path = tmp_path / "f.chol"
    FactorCache.save(path, factor, (0.3,))
    np.testing.assert_array_equal(FactorCache.load(path, 8, (0.3,)), factor)
    assert FactorCache.load(path, 8, (0.4,)) is None
    assert FactorCache.load(path, 16, (0.3,)) is None
    raw = bytearray(path.read_bytes())
    raw[8] = 99  # version field
    path.write_bytes(bytes(raw))
    assert FactorCache.load(path, 8, (0.3,)) is None
    assert FactorCache.load(tmp_path / "missing.chol", 8, (0.3,)) is None


def test_factor_cache_uses_directory(tmp_path):
    calls = []
    build = lambda: calls.append(1) or np.eye(3)  # noqa: E731
    FactorCache(tmp_path).get("x", 3, (0.5,), build)
    assert len(list(tmp_path.iterdir())) == 1
    np.testing.assert_array_equal(FactorCache(tmp_path).get("x", 3, (0.5,), build), np.eye(3))
    assert len(calls) == 1


def test_cholesky_jitter_and_failure():
    v = np.ones((3, 1))
    singular = v @ v.T  # rank one, positive semidefinite
    L = cholesky_factor(singular)
    np.testing.assert_allclose(L @ L.T, singular, atol=1e-10)
    with pytest.raises(FactorizationError):
        cholesky_factor(np.diag([1.0, -1.0, 1.0]))
