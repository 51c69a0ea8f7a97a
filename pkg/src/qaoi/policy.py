"""Update policies: the grid-optimal query-aware policy, zero-wait, and
age-threshold policies with an exact renewal-reward evaluator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .delays import DelayDistribution, grid_index
from .penalty import PenaltyFunction
from .solver import SolverSolution

KINDS = ("pow-grid", "zero-wait", "uow-threshold")
_SNAP = 1e-9
GOLDEN_TOL = 1e-6


class PolicyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Policy:
    """Immutable update policy.

    ``pow-grid`` carries an upper-quantized :class:`SolverSolution` and the
    query period; ``uow-threshold`` waits ``max(0, threshold - Y)`` after a
    delivery with delay ``Y``.
    """

    kind: str
    solution: SolverSolution | None = None
    period: float | None = None
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PolicyError(f"unknown policy kind {self.kind!r}")
        if self.kind == "pow-grid":
            _check_pow(self.solution, self.period)
        if self.kind == "uow-threshold" and not self.threshold >= 0:
            raise PolicyError("threshold must be nonnegative")

    @property
    def periods_per_grid(self) -> int:
        return int(round(self.period / self.solution.step))

    def describe(self) -> str:
        if self.kind == "pow-grid":
            return f"pow-grid(T={self.period:g}, step={self.solution.step:g}, border={self.solution.border_offset:g})"
        if self.kind == "uow-threshold":
            return f"uow-threshold(beta={self.threshold:.6g})"
        return "zero-wait"


def _check_pow(sol: SolverSolution | None, T: float | None) -> None:
    if sol is None or T is None:
        raise PolicyError("pow-grid policy needs a solution and a query period")
    if sol.direction != "upper":
        raise PolicyError("pow-grid policies must be built from the upper-quantized solution")
    s = sol.step
    k = T / s
    if abs(k - round(k)) > _SNAP * max(1.0, k):
        raise PolicyError(f"query period {T} is not a multiple of the grid step {s}")
    b_u = sol.grids.y_hi * s
    # every query's border request must come after the previous query's last delivery
    if T < b_u + sol.border_offset - _SNAP * T:
        raise PolicyError(
            f"query period {T} is shorter than max delay + border offset = {b_u + sol.border_offset}"
        )


def pow_grid(solution: SolverSolution, period: float) -> Policy:
    return Policy("pow-grid", solution=solution, period=float(period))


def zero_wait() -> Policy:
    return Policy("zero-wait")


def uow_threshold(beta: float) -> Policy:
    return Policy("uow-threshold", threshold=float(beta))


@dataclass(frozen=True)
class DecisionContext:
    delivery_time: float
    realized_delay: float
    next_query: float = math.inf
    following_query: float = math.inf


def next_request(policy: Policy, ctx: DecisionContext) -> float:
    """Absolute time of the next request after the delivery in ``ctx``."""
    d = ctx.delivery_time
    if policy.kind == "zero-wait":
        return d
    if policy.kind == "uow-threshold":
        return d + max(0.0, policy.threshold - ctx.realized_delay)
    return _pow_next(policy, d, ctx.realized_delay)


def _first_query_at_or_after(t: float, T: float) -> int:
    k = math.ceil(t / T - _SNAP)
    return max(k, 0)


def _pow_next(policy: Policy, d: float, y: float) -> float:
    sol = policy.solution
    T = policy.period
    s = sol.step
    n = sol.grids.n_intervals
    border = sol.border_offset
    yq = grid_index(y, s, "upper") if y > 0 else 0
    if not sol.grids.y_lo <= yq <= sol.grids.y_hi:
        # start-up (virtual delivery) or a delay the grid does not cover
        k = _first_query_at_or_after(d + border, T)
        return max(d, k * T - border)

    # the upper-quantized twin of this delivery: same request, delay rounded up
    du = (d - y) + yq * s
    k = _first_query_at_or_after(du, T)
    a = int(round((k * T - du) / s))
    per = policy.periods_per_grid
    while True:
        if a > n:
            return max(d, k * T - border)
        z = sol.wait_index(yq, a)
        if z < a:
            return max(d, k * T - (a - z) * s)
        # no further request for query k; plan for the next one
        k += 1
        a += per


def wait_time(policy: Policy, ctx: DecisionContext) -> float:
    return next_request(policy, ctx) - ctx.delivery_time


def _finite_on(g: PenaltyFunction, hi: float) -> None:
    try:
        with np.errstate(over="ignore"):
            v = g(hi)
    except (OverflowError, FloatingPointError) as exc:
        raise PolicyError(f"penalty overflows on [0, {hi}]") from exc
    if not math.isfinite(v):
        raise PolicyError(f"penalty is not finite on [0, {hi}]")


def uow_mean_cycle(dist: DelayDistribution, beta: float) -> float:
    """Mean time between consecutive deliveries, ``E[max(Y, beta)]``."""
    return dist.expect(lambda y: np.maximum(y, beta), (beta,))


def uow_time_average(dist: DelayDistribution, g: PenaltyFunction, beta: float) -> float:
    """Long-run time-average penalty of the threshold policy ``Z = (beta - Y)+``.

    Each delivery-to-delivery cycle starts at age ``Y``, lasts
    ``max(Y, beta) - Y + Y'`` and ends at age ``max(Y, beta) + Y'``, so the
    renewal-reward ratio is ``E[G(X + Y') - G(Y)] / E[X]`` with
    ``X = max(Y, beta)`` and ``G`` the antiderivative of ``g``.
    """
    if not beta >= 0:
        raise PolicyError("beta must be nonnegative")
    _finite_on(g, beta + 2 * dist.b_hi)
    y, w = dist.quadrature((beta,))
    x = np.maximum(y, beta)
    G = g.antiderivative
    reward = float(np.dot(w, G(x[:, None] + y[None, :]) @ w)) - float(np.dot(w, G(y)))
    cycle = float(np.dot(w, x))
    val = reward / cycle
    if not math.isfinite(val):
        raise PolicyError("time-average integration produced a non-finite value")
    return val


def golden_section(f, lo: float, hi: float, tol: float = GOLDEN_TOL) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    cands = [(fa, xa) for xa, fa in ((a, f(a)), (c, fc), (d, fd), (b, f(b)))]
    fbest, xbest = min(cands)
    return xbest, fbest


def uow_optimal_policy(
    dist: DelayDistribution,
    g: PenaltyFunction,
    min_mean_cycle: float | None = None,
    wait_cap: float | None = None,
    scan_points: int = 200,
) -> tuple[Policy, float]:
    """Best threshold policy, optionally with mean cycle at least ``min_mean_cycle``.

    The search covers ``beta`` in ``[beta_lo, b_lo + M]`` so every wait stays
    within ``M`` (default ``4 * b_hi``): a coarse scan locates the basin,
    then golden-section refines it to ``1e-6``. Thresholds at or below the
    minimum delay all behave like zero-wait and are reported as ``beta = 0``.
    """
    M = 4.0 * dist.b_hi if wait_cap is None else float(wait_cap)
    beta_hi = dist.b_lo + M
    beta_lo = 0.0
    if min_mean_cycle is not None:
        top = uow_mean_cycle(dist, beta_hi)
        if min_mean_cycle > top * (1 + 1e-12):
            raise PolicyError(
                f"no threshold reaches mean cycle {min_mean_cycle:g}; the maximum is {top:g}"
            )
        if min_mean_cycle > uow_mean_cycle(dist, 0.0):
            beta_lo = brentq(lambda b: uow_mean_cycle(dist, b) - min_mean_cycle, 0.0, beta_hi, xtol=1e-12)
            beta_lo = min(beta_lo * (1 + 1e-12) + 1e-15, beta_hi)

    f = lambda b: uow_time_average(dist, g, b)  # noqa: E731
    grid = np.linspace(beta_lo, beta_hi, scan_points)
    vals = np.array([f(b) for b in grid])
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    beta, val = golden_section(f, lo, hi)
    if vals[i] < val:
        beta, val = float(grid[i]), float(vals[i])
    # zero-wait is the canonical representative of every beta <= b_lo
    if beta_lo == 0.0:
        v0 = f(0.0)
        if beta <= dist.b_lo or v0 <= val + 1e-12 * max(1.0, abs(val)):
            beta, val = 0.0, v0
    return uow_threshold(beta), float(val)


def zero_wait_time_average(dist: DelayDistribution, g: PenaltyFunction) -> float:
    return uow_time_average(dist, g, 0.0)
