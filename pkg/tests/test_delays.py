import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qaoi.delays import (
    DistributionError,
    QuantizedDelay,
    atomic,
    build_grids,
    cdf,
    grid_index,
    intervals_for_step,
    parse_distribution,
    quantize,
    sample,
    truncated_distribution,
)

CONTINUOUS = [
    "exp:lambda=1",
    "exp:lambda=2",
    "pareto:xm=1,alpha=3",
    "lognorm:sigma=1",
    "beta:a=1,b=1",
    "beta:a=2,b=5",
    "uniform:lo=0.5,hi=1.0",
]


def test_exponential_truncation_upper_bound():
    d = truncated_distribution("exponential", {"lambda": 1.0}, 0.01, 0.95)
    assert d.b_lo == 0.01
    assert d.b_hi == pytest.approx(math.log(20), abs=1e-12)
    assert stats.expon.cdf(d.b_hi) == pytest.approx(0.95, abs=1e-12)


def test_pareto_truncation_upper_bound():
    d = truncated_distribution("pareto", {"xm": 1.0, "alpha": 3.0}, 0.01, 0.95)
    assert d.b_hi == pytest.approx(20 ** (1 / 3), abs=1e-12)
    assert d.b_lo == 1.0


def test_deterministic_truncation_is_identity():
    d = truncated_distribution("deterministic", {"d": 1.5}, 0.01, 0.95)
    assert d.b_lo == d.b_hi == 1.5


@pytest.mark.parametrize("bad", [
    ("exponential", {"lambda": 1.0}, 0.0, 0.95),
    ("exponential", {"lambda": 1.0}, 0.01, 1.0),
    ("exponential", {"lambda": -1.0}, 0.01, 0.95),
    ("exponential", {"lambda": 100.0}, 0.5, 0.95),
])
def test_truncation_errors(bad):
    with pytest.raises(DistributionError):
        truncated_distribution(*bad)


def test_cdf_deterministic():
    d = parse_distribution("det:d=1.5")
    assert cdf(d, 1.4) == 0.0
    assert cdf(d, 1.5) == 1.0


@pytest.mark.parametrize("spec", CONTINUOUS)
def test_cdf_support_edges(spec):
    d = parse_distribution(spec)
    assert d.cdf(d.b_hi) == 1.0
    assert d.cdf(np.nextafter(d.b_lo, 0)) == 0.0
    xs = np.linspace(d.b_lo - 0.1, d.b_hi + 0.1, 500)
    assert np.all(np.diff(d.cdf(xs)) >= 0)


def test_sample_deterministic_and_reproducible():
    d = parse_distribution("det:d=1.5")
    assert np.all(sample(d, np.random.default_rng(7), 10) == 1.5)
    e = parse_distribution("exp:lambda=1")
    a = sample(e, np.random.default_rng(3), 100)
    b = sample(e, np.random.default_rng(3), 100)
    assert np.array_equal(a, b)


def test_sample_discrete_mean():
    d = parse_distribution("disc:1@0.5,2@0.5")
    x = d.sample(np.random.default_rng(0), 1_000_000)
    assert abs(x.mean() - 1.5) < 0.005


@pytest.mark.parametrize("spec", CONTINUOUS)
def test_sampling_ks(spec):
    d = parse_distribution(spec)
    x = d.sample(np.random.default_rng(11), 100_000)
    assert x.min() >= d.b_lo and x.max() <= d.b_hi
    assert stats.kstest(x, d.cdf).statistic < 0.01


def test_quantize_uniform_example():
    q = quantize(parse_distribution("uniform:lo=0.5,hi=1.0"), 0.25, "upper")
    assert q.values.tolist() == [0.75, 1.0]
    assert q.probs == pytest.approx([0.5, 0.5], abs=1e-12)


@pytest.mark.parametrize("direction", ["upper", "lower"])
def test_quantize_on_grid_atoms(direction):
    q = quantize(parse_distribution("det:d=1.5"), 0.5, direction)
    assert q.values.tolist() == [1.5] and q.probs.tolist() == [1.0]
    q = quantize(parse_distribution("disc:1@0.5,2@0.5"), 1.0, direction)
    assert q.indices.tolist() == [1, 2] and q.probs.tolist() == [0.5, 0.5]


@pytest.mark.parametrize("spec", CONTINUOUS)
@pytest.mark.parametrize("step", [0.02, 0.05, 0.16, 0.3])
def test_quantize_mass_and_ordering(spec, step):
    d = parse_distribution(spec)
    up, lo = quantize(d, step, "upper"), quantize(d, step, "lower")
    assert up.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert lo.probs.sum() == pytest.approx(1.0, abs=1e-12)
    lo_edge = math.floor(d.b_lo / step) * step - 1e-12
    hi_edge = math.ceil(d.b_hi / step) * step + 1e-12
    for q in (up, lo):
        assert q.values.min() >= lo_edge and q.values.max() <= hi_edge
    xs = np.linspace(0, d.b_hi + 1, 2001)
    assert np.all(up.cdf(xs) <= d.cdf(xs) + 1e-12)
    assert np.all(d.cdf(xs) <= lo.cdf(xs) + 1e-12)


@pytest.mark.parametrize("spec", CONTINUOUS)
@pytest.mark.parametrize("direction", ["upper", "lower"])
def test_refinement_consistency(spec, direction):
    d = parse_distribution(spec)
    s = 0.04
    fine = quantize(d, s, direction)
    # re-bin the fine PMF onto the coarse grid: ceil(m/2) up, floor(m/2) down
    coarse = (fine.indices + 1) // 2 if direction == "upper" else fine.indices // 2
    acc = {}
    for k, p in zip(coarse.tolist(), fine.probs):
        acc[k] = acc.get(k, 0.0) + p
    direct = quantize(d, 2 * s, direction)
    assert sorted(acc) == direct.indices.tolist()
    assert [acc[k] for k in sorted(acc)] == pytest.approx(direct.probs, abs=1e-12)


def test_clamped_merges_low_mass():
    q = QuantizedDelay(0.1, np.array([0, 1, 3]), np.array([0.2, 0.3, 0.5]), "lower")
    c = q.clamped(1)
    assert c.indices.tolist() == [1, 3]
    assert c.probs.tolist() == pytest.approx([0.5, 0.5])
    assert q.clamped(0) is q


def test_grid_index_snaps():
    assert grid_index(0.3, 0.1, "upper") == 3
    assert grid_index(0.3, 0.1, "lower") == 3
    assert grid_index(0.31, 0.1, "upper") == 4
    assert grid_index(0.31, 0.1, "lower") == 3


def test_build_grids_examples():
    qd = quantize(parse_distribution("disc:1@0.5,2@0.5"), 1.0, "upper")
    g = build_grids(8, 8, 8, qd)
    assert g.a_grid.tolist() == list(range(9))
    assert g.y_grid.tolist() == [1, 2]
    assert g.z_grid.tolist() == list(range(9))
    det = quantize(parse_distribution("det:d=1.5"), 0.5, "upper")
    g = build_grids(4, 8, 4, det)
    assert g.step == 0.5 and g.y_grid.tolist() == [1.5]
    g = build_grids(8, 8, 3.5, qd)
    assert g.z_grid.tolist() == [0, 1, 2, 3]
    assert g.z_grid.max() <= 3.5 < g.z_grid.max() + g.step


def test_build_grids_step_mismatch():
    qd = quantize(parse_distribution("det:d=1.5"), 0.5, "upper")
    with pytest.raises(ValueError):
        build_grids(4, 10, 4, qd)


def test_intervals_for_step():
    assert intervals_for_step(4 * math.log(20), 0.16) == 75
    assert intervals_for_step(4.0, 0.05) == 80


@pytest.mark.parametrize("text,family", [
    ("exp:lambda=1", "truncated-exponential"),
    ("pareto:xm=1,alpha=3", "truncated-pareto"),
    ("det:d=1.5", "deterministic"),
    ("disc:1@0.5,2@0.5", "discrete"),
    ("lognorm:sigma=1", "truncated-log-normal"),
    ("beta:a=2,b=2", "beta-scaled"),
    ("uniform:lo=1,hi=2", "uniform"),
])
def test_parse_grammar(text, family):
    assert parse_distribution(text).family == family


@pytest.mark.parametrize("text", ["", "foo:x=1", "exp", "exp:lambda", "disc:1@0.3,2@0.3", "exp:lambda=abc"])
def test_parse_errors(text):
    with pytest.raises(DistributionError):
        parse_distribution(text)


def test_parse_truncation_overrides():
    d = parse_distribution("exp:lambda=1,start=0.1,mass=0.9")
    assert d.b_lo == 0.1
    assert d.b_hi == pytest.approx(-math.log(0.1))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.05, 5.0), min_size=1, max_size=4, unique=True),
    st.floats(0.01, 0.7),
)
def test_quantized_means_bracket(values, step):
    d = atomic(values, [1 / len(values)] * len(values))
    up, lo = quantize(d, step, "upper"), quantize(d, step, "lower")
    assert up.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert lo.mean() - 1e-9 <= d.mean() <= up.mean() + 1e-9
    assert up.mean() - lo.mean() <= step + 1e-9
