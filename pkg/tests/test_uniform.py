import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from riskcal.losses import LossTensor, ParameterGrid
from riskcal.uniform import (
    C1,
    C2,
    Growth,
    SampleSizeError,
    UniformBoundConfig,
    VacuousBoundError,
    calibrate_uniform,
    g1,
    g_tilde,
    kappa_plus,
    optimal_eta,
    solve_t,
    tail_bound_upper,
    upper_confidence_bound,
    x_of_eta,
)

FDR1 = UniformBoundConfig(growth=Growth("fdr", m=1))


def test_constants_closed_form():
    # printed values are truncated to three decimals
    assert abs(C1 - 3.178) < 1e-3
    assert abs(C2 - 5.628) < 1e-3
    assert C1 == pytest.approx(1 / (4 * norm.sf(math.sqrt(2))), rel=1e-12)
    assert C2 == pytest.approx(5 * math.sqrt(math.e) * (2 * norm.cdf(1) - 1), rel=1e-12)


def test_g_tilde_is_min_of_three():
    for x in (0.0, 0.5, 2.0, 6.0):
        tail = norm.sf(x)
        expected = min(C1 * tail, tail + C2 / (9 + x * x) * math.exp(-x * x / 2), math.exp(-x * x / 2))
        assert g_tilde(x) == pytest.approx(expected, rel=1e-12)


def test_g1_zero_kappa_branch():
    # with kappa = 0 only the logarithmic term survives
    assert g1(0.1, 1000, 0.5, 0.0) == pytest.approx(math.log(1000 * 0.01 * 0.25))
    assert g1(0.1, 100, 0.5, 0.0) == 0.0


def test_kappa_plus():
    assert kappa_plus(0.2, 0.0) == pytest.approx(0.02 + 0.2 * 0.1)


def test_large_t_bound_is_tiny():
    assert tail_bound_upper(10.0, 10_000, 0.0, FDR1) < 1e-6


def test_bound_nonincreasing_in_t():
    ts = np.linspace(0.01, 5, 60)
    b = [tail_bound_upper(t, 2000, 0.01, FDR1) for t in ts]
    assert all(0.0 <= x <= 1.0 for x in b)
    assert np.all(np.diff(b) <= 1e-15)


def test_bound_nondecreasing_in_growth():
    for t in (0.05, 0.08, 0.12):
        small = tail_bound_upper(t, 3000, 0.01, UniformBoundConfig(growth=Growth("finite", grid_size=10)))
        big = tail_bound_upper(t, 3000, 0.01, UniformBoundConfig(growth=Growth("finite", grid_size=10_000)))
        assert small <= big


def test_vacuous_bound_raises():
    with pytest.raises(VacuousBoundError):
        tail_bound_upper(1e-4, 5, 0.0, FDR1)
    with pytest.raises(ValueError):
        tail_bound_upper(-1.0, 5, 0.0, FDR1)


def test_solve_t_self_consistent():
    t = solve_t(0.01, 0.1, 5000, FDR1)
    assert abs(tail_bound_upper(t, 5000, 0.01, FDR1) - 0.1) <= 1e-6
    assert tail_bound_upper(t, 5000, 0.01, FDR1) <= 0.1


def test_solve_t_monotone_in_delta():
    ts = [solve_t(0.01, d, 3000, FDR1) for d in (0.02, 0.04, 0.08, 0.16, 0.32)]
    assert np.all(np.diff(ts) <= 1e-9)


def test_solve_t_small_n():
    with pytest.raises(SampleSizeError, match="sample size too small"):
        solve_t(0.01, 0.1, 5, FDR1)


def test_ucb_examples():
    assert upper_confidence_bound(0.3, 0.0, 0.1) == 0.3
    assert upper_confidence_bound(0.0, 0.1, 0.0) == pytest.approx(0.01)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_ucb_dominates_rhat(r, t, eta):
    assert upper_confidence_bound(r, t, eta) >= r


def test_x_solves_the_defining_equation():
    alpha, eta = 0.2, 0.01
    t = solve_t(eta, 0.1, 10_000, FDR1)
    x = x_of_eta(eta, alpha, 0.1, 10_000, FDR1)
    assert upper_confidence_bound(x, t, eta) == pytest.approx(alpha, abs=1e-12)


def test_optimal_eta_is_best_on_grid():
    cfg = UniformBoundConfig(growth=Growth("fdr", m=1), eta_grid=tuple(np.logspace(-4, 0, 9)))
    eta, x = optimal_eta(0.2, 0.1, 10_000, cfg)
    assert 0 < x < 0.2
    for e in cfg.eta_grid:
        assert x >= x_of_eta(e, 0.2, 0.1, 10_000, cfg) - 1e-12


def test_optimal_eta_unreachable():
    with pytest.raises(SampleSizeError, match="unreachable"):
        optimal_eta(0.01, 0.1, 200, FDR1)


def test_growth_kinds():
    assert Growth("fdr", m=3)(10) == 31
    assert Growth("fdr", m=3, grid_size=20)(10) == 20
    assert Growth("finite", grid_size=7)(10 ** 6) == 7
    table = Growth("table", table={10: 5.0, 100: 50.0})
    assert table(10) == 5.0 and table(11) == 50.0
    with pytest.raises(ValueError):
        table(101)
    assert Growth.from_json(table.to_json()) == table
    cfg = UniformBoundConfig.from_json(FDR1.to_json())
    assert cfg.growth == FDR1.growth and cfg.gammas == FDR1.gammas


def test_calibrate_uniform_trivial_cases():
    grid = ParameterGrid.linspace(0.1, 1.0, 10)
    zeros = LossTensor(np.zeros((20_000, 10)), True)
    res = calibrate_uniform(zeros, grid, 0.1, 0.1, FDR1)
    assert res.selected == 0
    assert res.certified == tuple(range(9, -1, -1))
    ones = LossTensor(np.ones((20_000, 10)), True)
    assert calibrate_uniform(ones, grid, 0.1, 0.1, FDR1).selected is None


def test_calibrate_uniform_stops_at_first_failure():
    r = np.array([0.0, 0.5, 0.0, 0.0])
    loss = np.broadcast_to(r, (40_000, 4)).copy()
    res = calibrate_uniform(loss, None, 0.1, 0.1, FDR1)
    assert res.certified == (3, 2)
    assert res.selected == 2


def test_calibrate_uniform_small_sample_abstains():
    res = calibrate_uniform(np.zeros((5, 3)), None, 0.1, 0.1, FDR1)
    assert res.selected is None and res.t_star is None


@pytest.mark.slow
def test_uniform_coverage_small():
    rng = np.random.default_rng(8)
    N, n, delta, trials = 20, 500, 0.2, 300
    cfg = UniformBoundConfig(growth=Growth("finite", grid_size=N))
    eta = 0.05
    t = solve_t(eta, delta, n, cfg)
    true = np.linspace(0.05, 0.6, N)
    misses = 0
    for _ in range(trials):
        u = rng.uniform(size=(n, 1))
        r_hat = (u < true).mean(axis=0)
        misses += np.any(upper_confidence_bound(r_hat, t, eta) < true)
    assert misses / trials <= delta + 3 * math.sqrt(delta * (1 - delta) / trials)
