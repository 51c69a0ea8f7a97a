import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ExhaustiveOracle, identity_exact, table_exact
from qaoi import kernels
from qaoi.delays import QuantizedDelay, atomic, build_grids, parse_distribution, quantize
from qaoi.penalty import affine, exponential, identity, table
from qaoi.solver import (
    RefinedSolution,
    SolverError,
    SolverSolution,
    border_offset,
    g_r,
    load_solution,
    save_solution,
    solve_pair,
    solve_refined,
    value_tables,
)


def solve_atoms(values, probs, Q, N, M, g=None, backend=None):
    d = atomic(values, probs)
    qd = quantize(d, Q / N, "upper")
    return value_tables(qd, g or identity(), build_grids(Q, N, M, qd), backend)


def test_example_deterministic():
    sol = solve_atoms([1.5], [1.0], 4, 8, 4)
    assert sol.h_one == 1.5
    assert border_offset(sol) == 1.5


def test_two_point_example():
    sol = solve_atoms([1, 2], [0.5, 0.5], 8, 8, 8)
    assert sol.h_one == 1.75
    assert sol.border_offset == 2
    for delta in (0.0, 0.5, 3.0, 7.0):
        assert g_r(sol, 2, delta) == 1.75
    assert g_r(sol, 1, 1) == 1.5
    assert g_r(sol, 0, 3) == 3.0
    with pytest.raises(ValueError):
        g_r(sol, 1.5, 0.0)


@pytest.mark.parametrize("c", [0.0, 2.5])
@pytest.mark.parametrize("spec", ["disc:1@0.5,2@0.5", "exp:lambda=1", "det:d=1.5"])
def test_constant_penalty(spec, c):
    d = parse_distribution(spec)
    Q = 4 * d.b_hi
    su, sl = solve_pair(d, affine(0.0, c), Q, 40)
    assert su.h_one == c and sl.h_one == c
    assert su.grids.y_hi <= su.border_index <= 3 * su.grids.y_hi


@pytest.mark.parametrize("d", [1.0, 1.5, 2.0])
def test_on_grid_deterministic_border_equals_delay(d):
    sol = solve_atoms([d], [1.0], 4 * d, 16, 4 * d)
    assert sol.border_offset == pytest.approx(d)
    assert sol.h_one == pytest.approx(d)


def test_step_mismatch_rejected():
    qd = quantize(atomic([1.5]), 0.5, "upper")
    grids = build_grids(4, 8, 4, qd)
    bad = quantize(atomic([1.5]), 0.25, "upper")
    with pytest.raises(SolverError):
        value_tables(bad, identity(), grids)


def test_horizon_shorter_than_delay_rejected():
    with pytest.raises(SolverError):
        solve_atoms([3.0], [1.0], 2, 4, 2)
    with pytest.raises(SolverError):
        solve_refined(parse_distribution("exp:lambda=1"), identity(), 2.0, eps=0.1)


# ---- exhaustive oracle -----------------------------------------------------

DYADIC = {
    1: [(Fraction(1),)],
    2: [(Fraction(1, 2), Fraction(1, 2)), (Fraction(1, 4), Fraction(3, 4))],
    3: [(Fraction(1, 4), Fraction(1, 4), Fraction(1, 2)), (Fraction(1, 2), Fraction(1, 8), Fraction(3, 8))],
}
PENALTIES = {
    "identity": (identity(), identity_exact),
    "convex-table": (table([0, 2, 4, 6, 20], [0, 1, 4, 12, 40]), table_exact([0, 2, 4, 6, 20], [0, 1, 4, 12, 40])),
    "step-table": (table([0, 3, 4, 20], [0, 0, 4, 4]), table_exact([0, 3, 4, 20], [0, 0, 4, 4])),
}


def oracle_cases():
    for k in (1, 2, 3):
        for atoms in itertools.combinations([1, 2, 3, 4], k):
            for probs in DYADIC[k]:
                for Q in (6, 9, 12):
                    if Q < max(atoms):
                        continue
                    yield atoms, probs, Q


@pytest.mark.parametrize("pen", list(PENALTIES))
@pytest.mark.parametrize("M", ["Q", 3])
def test_oracle_equivalence(pen, M):
    g, g_exact = PENALTIES[pen]
    n = 0
    for atoms, probs, Q in oracle_cases():
        m = Q if M == "Q" else M
        sol = solve_atoms(list(atoms), [float(p) for p in probs], Q, Q, m, g)
        orc = ExhaustiveOracle(dict(zip(atoms, probs)), g_exact, Q, m)
        ylo, yhi = sol.grids.y_lo, sol.grids.y_hi
        for a in range(Q + 1):
            for y in range(ylo, yhi + 1):
                assert sol.gd_table[a, y - ylo] == orc.delivery_value(a, y), (atoms, probs, Q, a, y)
                assert sol.wait_index(y, a) == orc.delivery_wait(a, y), (atoms, probs, Q, a, y)
            for delta in range(0, 5):
                assert sol.g_r_index(a, delta) == orc.request_value(a, delta)
        lo = max(yhi, sol.anchor_index - sol.grids.z_max)
        window = [orc.request_value(r, 0) for r in range(lo, sol.anchor_index + 1)]
        assert sol.h_one == min(window)
        assert sol.border_index == lo + window.index(min(window))
        r = sol.anchor_index - orc.delivery_wait(sol.anchor_index, ylo)
        if Q >= 3 * yhi:
            assert sol.h_one == orc.delivery_value(sol.anchor_index, ylo)
        if yhi <= r:
            assert sol.border_index == r
        n += 1
    assert n > 50


def test_oracle_two_point_worked_case():
    orc = ExhaustiveOracle({1: Fraction(1, 2), 2: Fraction(1, 2)}, identity_exact, 8, 8)
    assert orc.delivery_value(6, 1) == Fraction(7, 4)
    assert 6 - orc.delivery_wait(6, 1) == 2


# ---- backends ----------------------------------------------------------------

@pytest.mark.skipif("compiled" not in kernels.available_backends(), reason="extension not built")
@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(0.05, 1.0), min_size=1, max_size=6),
    st.integers(0, 4),
    st.integers(8, 60),
    st.sampled_from(["identity", "exp", "table"]),
    st.booleans(),
    st.floats(0.2, 1.0),
)
def test_compiled_matches_fallback(weights, ymin, n, pen, with_zero, mfrac):
    ymin = max(ymin, 0 if with_zero else 1)
    idx = np.arange(ymin, ymin + len(weights))
    if idx[-1] > n:
        return
    w = np.asarray(weights)
    qd = QuantizedDelay(0.1, idx, w / w.sum(), "lower")
    g = {"identity": identity(), "exp": exponential(0.7), "table": table([0, 1, 2.5, 9], [0, 0.2, 3, 3.5])}[pen]
    Q = n * 0.1
    grids = build_grids(Q, n, max(0.1, mfrac * Q), qd)
    if grids.y_hi < 1:
        return
    a = value_tables(qd, g, grids, "compiled")
    b = value_tables(qd, g, grids, "python")
    np.testing.assert_allclose(a.gd_table, b.gd_table, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(a.decision, b.decision)
    np.testing.assert_allclose(a.gr_sum, b.gr_sum, rtol=1e-12, atol=1e-12)
    assert a.evaluations == b.evaluations
    assert a.border_index == b.border_index


# ---- structural invariants ---------------------------------------------------

STRUCT = ["exp:lambda=1", "beta:a=1,b=1", "lognorm:sigma=1", "pareto:xm=1,alpha=3", "disc:0.7@0.3,1.9@0.7"]


@pytest.fixture(scope="module", params=[(s, p) for s in STRUCT for p in ("identity", "exp")])
def solved(request):
    spec, pen = request.param
    d = parse_distribution(spec)
    g = identity() if pen == "identity" else exponential(2.0)
    Q = 4 * d.b_hi
    return solve_pair(d, g, Q, 60)


def test_border_within_bounds(solved):
    for sol in solved:
        yhi = sol.grids.y_hi
        assert yhi <= sol.border_index <= 3 * yhi
        assert sol.h_one == sol.gr_sum[sol.border_index]
        assert sol.h_one == sol.gr_tail[sol.border_index - yhi]


def test_tail_flatness(solved):
    for sol in solved:
        yhi = sol.grids.y_hi
        for a in range(yhi, sol.grids.n_intervals + 1):
            vals = {sol.g_r_index(a, d) for d in (0.0, 0.37, 1.0, 5.0)}
            assert len(vals) == 1


def test_age_monotone(solved):
    for sol in solved:
        g = sol.penalty
        eps = 0.05
        top = sol.grids.wait_cap + sol.grids.y_hi * sol.step
        xs = np.linspace(0, top, 400)
        h = float(np.max(g(xs + eps) - g(xs)))
        for a in range(sol.grids.n_intervals + 1):
            deltas = np.linspace(0, 3, 13)
            v = np.array([sol.g_r_index(a, d) for d in deltas])
            w = np.array([sol.g_r_index(a, d + eps) for d in deltas])
            assert np.all(w >= v)
            assert np.all(w - v <= h * (1 + 1e-9) + 1e-12)


def test_far_states_request_at_border(solved):
    for sol in solved:
        yhi, ylo = sol.grids.y_hi, sol.grids.y_lo
        for a in range(min(3 * yhi, sol.grids.n_intervals), sol.grids.n_intervals + 1):
            for y in range(max(ylo, 1), yhi + 1):
                assert a - sol.wait_index(y, a) == sol.border_index


def test_sandwich_order(solved):
    su, sl = solved
    assert sl.h_one <= su.h_one


# ---- refinement ---------------------------------------------------------------

def test_refined_exponential_bounds():
    d = parse_distribution("exp:lambda=1")
    res = solve_refined(d, identity(), 4 * d.b_hi, eps=0.05, n0=75)
    assert res.converged
    assert res.lower_bound <= res.upper_bound
    assert res.upper_bound - res.lower_bound < 0.05
    lows = [h["lower"] for h in res.history]
    ups = [h["upper"] for h in res.history]
    assert lows == sorted(lows) and ups == sorted(ups, reverse=True)


def test_refined_deterministic_converges_immediately():
    d = parse_distribution("det:d=1.5")
    res = solve_refined(d, identity(), 6.0, eps=1e-9, n0=8)
    assert res.lower_bound == res.upper_bound == 1.5
    assert len(res.history) == 1


def test_refined_cap_is_flagged():
    d = parse_distribution("exp:lambda=1")
    res = solve_refined(d, identity(), 4 * d.b_hi, eps=1e-6, n0=16, max_doublings=1)
    assert not res.converged
    assert res.n_final == 32
    assert res.upper_bound - res.lower_bound >= 1e-6


def test_evaluations_grow_eightfold():
    d = parse_distribution("exp:lambda=1.4")
    Q = 4 * d.b_hi
    counts = [solve_pair(d, identity(), Q, n)[0].evaluations for n in (40, 80, 160)]
    ratios = np.diff(np.log(counts))
    assert np.all((np.exp(ratios) > 6) & (np.exp(ratios) < 10))


def test_json_roundtrip(tmp_path):
    d = parse_distribution("exp:lambda=2")
    res = solve_refined(d, table([0, 1, 3], [0, 1, 5]), 4 * d.b_hi, eps=0.5, n0=20)
    path = tmp_path / "sol.json"
    save_solution(res, path)
    doc = json.loads(path.read_text())
    assert doc["version"] == 1 and doc["kind"] == "refined"
    assert doc["effective_step"] == res.effective_step
    back = load_solution(path)
    assert isinstance(back, RefinedSolution)
    assert back.upper_bound == res.upper_bound and back.lower_bound == res.lower_bound
    np.testing.assert_array_equal(back.upper_solution.decision, res.upper_solution.decision)
    np.testing.assert_array_equal(back.lower_solution.gd_table, res.lower_solution.gd_table)
    assert back.upper_solution.penalty(2.0) == 3.0

    single = res.upper_solution
    save_solution(single, tmp_path / "one.json")
    again = load_solution(tmp_path / "one.json")
    assert isinstance(again, SolverSolution)
    assert again.h_one == single.h_one and again.border_index == single.border_index


def test_json_version_checked(tmp_path):
    p = tmp_path / "x.json"
    p.write_text(json.dumps({"format": "qaoi-solution", "version": 99, "kind": "refined"}))
    with pytest.raises(ValueError):
        load_solution(p)
