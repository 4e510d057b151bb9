import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import linear_path_qv, linear_path_qv_bruteforce
from regsde.errors import GridAlignmentError
from regsde.pathgen import SamplePath, gen_brownian, gen_fbm, make_grid
from regsde.regvar import (EpsLadder, estimate_limit, loglog_slope, mc_report,
                           n_covariation_eps, n_covariation_path, squared_increment_sum,
                           strong_bounded, strong_norm_eps, ucp_proxy, weighted_covariation_path)

FROZEN = json.loads((Path(__file__).parent / "frozen_values.json").read_text())


def _linear(n):
    g = make_grid(n)
    return SamplePath(g, g.nodes.copy())


@pytest.mark.parametrize("n,j", [(64, 2), (256, 4), (1024, 3), (1024, 10)])
def test_linear_path_closed_form(n, j):
    x = _linear(n)
    eps = 2.0**-j
    got = n_covariation_eps([x, x], eps)
    assert got == pytest.approx(linear_path_qv(eps, 1 / n), rel=1e-12)
    assert got == pytest.approx(linear_path_qv_bruteforce(eps, 1 / n), rel=1e-12)


def test_constant_path_is_zero():
    g = make_grid(32)
    c = SamplePath(g, np.full(33, 3.0))
    assert n_covariation_eps([c, c, c], 0.25) == 0.0
    assert strong_norm_eps([c, c], 0.125) == 0.0


@given(st.integers(0, 2**31), st.floats(-3, 3))
def test_symmetry_and_homogeneity(seed, a):
    g = make_grid(64)
    x, y = gen_fbm(g, 0.4, seed, 0, tag="x"), gen_fbm(g, 0.6, seed, 0, tag="y")
    eps = 1 / 16
    xy = n_covariation_path([x, y], eps)
    np.testing.assert_allclose(xy, n_covariation_path([y, x], eps), atol=1e-13)
    np.testing.assert_allclose(n_covariation_path([a * x, y], eps), a * xy, atol=1e-12)
    assert strong_norm_eps([x, y], eps) >= abs(xy[-1]) - 1e-14


def test_weighted_with_unit_weight_matches():
    g = make_grid(128)
    x = gen_brownian(g, 1, 0)
    np.testing.assert_array_equal(weighted_covariation_path(np.ones(129), [x, x], 1 / 8),
                                  n_covariation_path([x, x], 1 / 8))


def test_frozen_qv():
    w = gen_brownian(make_grid(1024), 2, 0)
    assert n_covariation_eps([w, w], 1 / 16) == FROZEN["qv_brownian_1024_seed2_eps1/16"]


def test_node_and_grid_errors():
    x = _linear(16)
    with pytest.raises(GridAlignmentError):
        n_covariation_eps([x, x], 0.25, t=0.3)
    with pytest.raises(GridAlignmentError):
        n_covariation_eps([x, x], 0.3)
    with pytest.raises(GridAlignmentError):
        n_covariation_eps([x, _linear(32)], 0.25)
    with pytest.raises(ValueError):
        n_covariation_path([], 0.25)


def test_ladder_validation():
    assert list(EpsLadder.dyadic(2, 4)) == [0.25, 0.125, 0.0625]
    with pytest.raises(GridAlignmentError):
        EpsLadder((0.3, 0.1))
    with pytest.raises(GridAlignmentError):
        EpsLadder((1.0, 0.5))
    with pytest.raises(ValueError):
        EpsLadder((0.125, 0.25))
    with pytest.raises(GridAlignmentError):
        EpsLadder.dyadic(2, 6).check(make_grid(32))


def test_brownian_qv_and_grid_sum():
    w = gen_brownian(make_grid(2**14), 3, 0)
    assert squared_increment_sum(w) == pytest.approx(1.0, abs=0.05)
    assert n_covariation_eps([w, w], 2**-8) == pytest.approx(1.0, abs=0.3)


# limit extrapolation --------------------------------------------------------

@given(st.floats(-2, 2), st.floats(0.2, 2), st.floats(0.3, 1.5))
def test_estimate_recovers_power_law(limit, amp, p):
    eps = [2.0**-j for j in range(3, 9)]
    rep = estimate_limit({e: limit + amp * e**p for e in eps})
    assert rep.slope == pytest.approx(p, rel=1e-6)
    assert rep.extrapolated_limit == pytest.approx(limit, abs=1e-8)


def test_estimate_flat_and_errors():
    rep = estimate_limit({0.25: 1.0, 0.125: 1.0, 0.0625: 1.0})
    assert rep.flat and rep.slope_label == "flat" and rep.extrapolated_limit == 1.0
    with pytest.raises(ValueError):
        estimate_limit({0.25: 1.0, 0.125: 2.0})
    with pytest.raises(ValueError):
        estimate_limit({0.25: 1.0, 0.125: np.nan, 0.0625: 1.0})


def test_estimate_noise_dominated():
    data = {0.25: (1.01, 0.02), 0.125: (0.99, 0.02), 0.0625: (1.005, 0.02)}
    rep = estimate_limit(data)
    assert rep.extra.get("noise_dominated") and rep.extrapolated_limit == 1.005


def test_estimate_diverging():
    rep = estimate_limit({e: e**-0.25 for e in (0.25, 0.125, 0.0625, 0.03125)})
    assert rep.extra.get("diverging")
    assert rep.slope == pytest.approx(-0.25, abs=1e-9)


def test_report_csv(tmp_path):
    rep = estimate_limit({e: 2 + e for e in (0.25, 0.125, 0.0625)})
    text = rep.to_csv(tmp_path / "r.csv", header_comment="hdr")
    lines = text.splitlines()
    assert lines[0] == "# hdr" and lines[1] == "eps,t,value,stderr"
    assert lines[-1].startswith("#limit=")
    assert (tmp_path / "r.csv").read_text() == text


def test_mc_report_and_helpers():
    g = make_grid(1024)
    ens = [gen_brownian(g, 4, r) for r in range(30)]
    rep, samples = mc_report(ens, EpsLadder.dyadic(3, 6))
    assert set(samples) == set(rep.per_eps)
    assert all(abs(v - 1) < 0.3 for v, _ in rep.per_eps.values())
    with pytest.raises(ValueError):
        mc_report(ens, EpsLadder.dyadic(3, 6), statistic="median")
    assert loglog_slope([0.5, 0.25, 0.125], [1, 0.5, 0.25]) == pytest.approx(1.0)
    assert strong_bounded([1.0, 1.5, 1.9]) and not strong_bounded([1.0, 2.5])
    out = ucp_proxy(np.ones((4, 5)), np.zeros((4, 5)))
    assert out[0.5] == 1.0 and out[0.9] == 1.0
