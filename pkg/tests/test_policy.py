import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qaoi.delays import atomic, build_grids, parse_distribution, quantize
from qaoi.penalty import exponential, identity, table
from qaoi.policy import (
    DecisionContext,
    PolicyError,
    golden_section,
    next_request,
    pow_grid,
    uow_mean_cycle,
    uow_optimal_policy,
    uow_threshold,
    uow_time_average,
    zero_wait,
)
from qaoi.solver import solve_pair, value_tables

TEST_DISTS = ["exp:lambda=1", "beta:a=1,b=1", "lognorm:sigma=1", "pareto:xm=1,alpha=3", "disc:1@0.5,2@0.5",
              "det:d=1.5", "uniform:lo=0.5,hi=2"]


@pytest.fixture(scope="module")
def example_policy():
    qd = quantize(atomic([1.5]), 0.5, "upper")
    sol = value_tables(qd, identity(), build_grids(4, 8, 4, qd))
    return pow_grid(sol, 4.0)


def test_pow_example_request(example_policy):
    assert next_request(example_policy, DecisionContext(4.0, 1.5, 8.0, 12.0)) == 6.5


def test_pow_startup_targets_first_border(example_policy):
    t = next_request(example_policy, DecisionContext(0.0, 0.0, 4.0, 8.0))
    assert t == 2.5
    times = [t]
    for _ in range(2):
        t = next_request(example_policy, DecisionContext(t + 1.5, 1.5))
        times.append(t)
    assert times == [2.5, 6.5, 10.5]


def test_trivial_policies():
    assert next_request(zero_wait(), DecisionContext(3.0, 1.2)) == 3.0
    assert next_request(uow_threshold(2.0), DecisionContext(3.0, 1.5)) == 3.5
    assert next_request(uow_threshold(2.0), DecisionContext(3.0, 2.5)) == 3.0


def test_pow_rejects_bad_period():
    d = parse_distribution("exp:lambda=1")
    Q = 4 * d.b_hi
    su, sl = solve_pair(d, identity(), Q, 60)
    with pytest.raises(PolicyError):
        pow_grid(su, Q + 0.01)
    with pytest.raises(PolicyError):
        pow_grid(su, su.step * (su.grids.y_hi + su.border_index - 2))
    with pytest.raises(PolicyError):
        pow_grid(sl, Q)
    with pytest.raises(PolicyError):
        uow_threshold(-1.0)


@pytest.mark.parametrize("spec", ["exp:lambda=1", "lognorm:sigma=1", "pareto:xm=1,alpha=3"])
def test_pow_never_requests_before_delivery(spec):
    d = parse_distribution(spec)
    Q = 4 * d.b_hi
    su, _ = solve_pair(d, identity(), Q, 80)
    pol = pow_grid(su, Q)
    rng = np.random.default_rng(5)
    for _ in range(3000):
        r = rng.uniform(0, 20 * Q)
        y = float(d.sample(rng))
        dlv = r + y
        t = next_request(pol, DecisionContext(dlv, y))
        assert t >= dlv
        # mirrored request equals the upper-quantized twin's, so it is on the query grid
        k = round(t / su.step)
        assert t == dlv or abs(t - k * su.step) < 1e-6


def test_time_average_examples():
    det = atomic([1.5])
    assert uow_time_average(det, identity(), 0.0) == pytest.approx(2.25, abs=1e-12)
    assert uow_time_average(det, identity(), 2.5) == pytest.approx(2.75, abs=1e-12)
    two = parse_distribution("disc:1@0.5,2@0.5")
    assert uow_time_average(two, identity(), 0.0) == pytest.approx(2.5 / 3 + 1.5, abs=1e-12)


@pytest.mark.parametrize("spec", TEST_DISTS)
@pytest.mark.parametrize("beta", [0.0, 0.3, 1.0, 2.2])
def test_moment_formula_agreement(spec, beta):
    d = parse_distribution(spec)
    ex = d.expect(lambda y: np.maximum(y, beta), (beta,))
    ex2 = d.expect(lambda y: np.maximum(y, beta) ** 2, (beta,))
    ey = d.mean()
    assert uow_time_average(d, identity(), beta) == pytest.approx(ex2 / (2 * ex) + ey, abs=1e-9)


@pytest.mark.parametrize("spec", ["exp:lambda=1", "pareto:xm=1,alpha=3", "det:d=1.5"])
def test_flat_below_min_delay_and_continuous(spec):
    d = parse_distribution(spec)
    g = exponential(0.5)
    v0 = uow_time_average(d, g, 0.0)
    for b in np.linspace(0, d.b_lo, 5):
        assert uow_time_average(d, g, float(b)) == pytest.approx(v0, rel=1e-12)
    bs = np.linspace(0, 3 * d.b_hi, 301)
    vals = np.array([uow_time_average(d, g, float(b)) for b in bs])
    assert np.max(np.abs(np.diff(vals))) < 0.05 * np.max(np.abs(vals))


def test_time_average_overflow_reported():
    with pytest.raises(PolicyError):
        uow_time_average(parse_distribution("exp:lambda=0.01"), exponential(10.0), 1.0)


@pytest.mark.parametrize("alpha", range(3, 11))
def test_pareto_optimum_is_zero_wait(alpha):
    d = parse_distribution(f"pareto:xm=1,alpha={alpha}")
    pol, val = uow_optimal_policy(d, identity())
    assert pol.threshold <= d.b_lo
    assert val == pytest.approx(uow_time_average(d, identity(), 0.0), rel=1e-12)


def test_deterministic_optimum_is_zero_wait():
    pol, val = uow_optimal_policy(atomic([1.5]), identity())
    assert pol.threshold == 0.0 and val == pytest.approx(2.25)


def test_unconstrained_optimum_beats_scan():
    d = parse_distribution("lognorm:sigma=1")
    g = identity()
    pol, val = uow_optimal_policy(d, g)
    scan = [uow_time_average(d, g, b) for b in np.linspace(0, 4 * d.b_hi, 400)]
    assert val <= min(scan) + 1e-9


def test_constrained_optimum_hits_cycle():
    d = parse_distribution("exp:lambda=1")
    T = 4 * d.b_hi
    g = identity()
    pol, val = uow_optimal_policy(d, g, min_mean_cycle=T)
    assert uow_mean_cycle(d, pol.threshold) == pytest.approx(T, rel=1e-6)
    feasible = [b for b in np.linspace(0, d.b_lo + 4 * d.b_hi, 400) if uow_mean_cycle(d, b) >= T]
    assert val <= min(uow_time_average(d, g, b) for b in feasible) + 1e-9
    _, free = uow_optimal_policy(d, g)
    assert val > free


def test_constraint_infeasible():
    d = parse_distribution("exp:lambda=1")
    with pytest.raises(PolicyError):
        uow_optimal_policy(d, identity(), min_mean_cycle=100.0)


def test_golden_section_quadratic():
    x, fx = golden_section(lambda t: (t - 1.234567) ** 2, 0.0, 5.0)
    assert abs(x - 1.234567) < 1e-6
    assert fx < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 100.0), st.floats(0.01, 5.0), st.floats(0.0, 5.0))
def test_threshold_requests_never_early(d, y, beta):
    t = next_request(uow_threshold(beta), DecisionContext(d, y))
    assert t >= d
    assert t - d == pytest.approx(max(0.0, beta - y))


def test_table_penalty_time_average_matches_quadrature():
    d = parse_distribution("beta:a=2,b=2")
    g = table([0, 0.5, 1.5, 4], [0, 0.1, 2, 2.5])
    beta = 0.6
    # brute-force renewal-reward with a fine midpoint rule
    u = (np.arange(4000) + 0.5) / 4000
    y = d.ppf(u)
    x = np.maximum(y, beta)
    y2 = d.ppf((np.arange(1000) + 0.5) / 1000)
    num = np.mean(g.antiderivative(x[:, None] + y2[None, :])) - np.mean(g.antiderivative(y))
    assert uow_time_average(d, g, beta) == pytest.approx(num / x.mean(), rel=1e-4)
    assert math.isfinite(num)
