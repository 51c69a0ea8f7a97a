"""Discrete-event simulation of the request / delay / delivery / wait loop."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .delays import DelayDistribution
from .penalty import PenaltyFunction, identity
from .policy import DecisionContext, Policy, next_request

log = logging.getLogger(__name__)

CHUNK = 4096
_EPS = 1e-9


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class QuerySchedule:
    kind: str
    param: float
    horizon: float
    instants: np.ndarray = field(repr=False)

    @property
    def period(self) -> float:
        """Mean inter-query time (exact period for periodic schedules)."""
        return self.param if self.kind == "periodic" else 1.0 / self.param

    @property
    def empty(self) -> bool:
        return self.instants.size == 0


def make_schedule(kind: str, param: float, horizon: float, rng: np.random.Generator | None = None) -> QuerySchedule:
    """Periodic (``param`` = period) or Poisson (``param`` = rate) query instants in ``(0, horizon]``."""
    if not param > 0 or not horizon > 0:
        raise ValueError("schedule parameter and horizon must be positive")
    if kind == "periodic":
        n = int(math.floor(horizon / param + _EPS))
        inst = param * np.arange(1, n + 1, dtype=float)
    elif kind == "poisson":
        if rng is None:
            raise ValueError("a Poisson schedule needs an rng")
        parts = []
        t = 0.0
        expected = max(16, int(horizon * param * 1.1) + 16)
        while t <= horizon:
            gaps = rng.exponential(1.0 / param, size=expected)
            pts = t + np.cumsum(gaps)
            parts.append(pts)
            t = pts[-1]
        inst = np.concatenate(parts)
        inst = inst[inst <= horizon]
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    if inst.size == 0:
        log.warning("schedule %s(%g) has no queries before horizon %g", kind, param, horizon)
    inst.flags.writeable = False
    return QuerySchedule(kind, float(param), float(horizon), inst)


def schedule_seed(seed: int) -> np.random.Generator:
    """Query-arrival stream, kept separate from the delay stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Requests ``R``, delays ``Y`` and deliveries ``D = R + Y``.

    Index 0 is the virtual delivery at time 0 with age 0. The age is
    ``t - R[j]`` for ``D[j] <= t < D[j+1]``.
    """

    R: np.ndarray
    Y: np.ndarray
    D: np.ndarray

    def age(self, t):
        t = np.asarray(t, dtype=float)
        j = np.searchsorted(self.D, t, side="right") - 1
        if np.any(j < 0):
            raise ValueError("age requested before time 0")
        return t - self.R[j]

    def dump_csv(self, path: str | Path, queries: np.ndarray = ()) -> None:
        """Events as ``event_time,event_kind,age_after_event``, time-ordered."""
        rows = []
        for j in range(1, len(self.D)):
            rows.append((self.R[j], 0, "request", float(self.age(self.R[j]))))
            rows.append((self.D[j], 1, "delivery", float(self.Y[j])))
        for q in queries:
            if q <= self.D[-1]:
                rows.append((q, 2, "query", float(self.age(q))))
        rows.sort(key=lambda r: (r[0], r[1]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["event_time", "event_kind", "age_after_event"])
            for t, _, kind, a in rows:
                w.writerow([repr(float(t)), kind, repr(a)])


class _DelayStream:
    def __init__(self, dist: DelayDistribution, rng: np.random.Generator):
        self.dist, self.rng = dist, rng
        self.buf = np.empty(0)
        self.pos = 0

    def next(self) -> float:
        if self.pos == self.buf.size:
            self.buf = np.atleast_1d(self.dist.sample(self.rng, CHUNK))
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return float(v)


def _threshold_path(beta: float, dist: DelayDistribution, horizon: float, rng) -> Trajectory:
    # D_j = D_{j-1} + (beta - Y_{j-1})+ + Y_j, starting from the virtual delivery (Y_0 = 0)
    ys = [np.zeros(1)]
    last_y, last_d = 0.0, 0.0
    while last_d <= horizon:
        y = np.atleast_1d(dist.sample(rng, CHUNK)).astype(float)
        prev = np.concatenate([[last_y], y[:-1]])
        d = last_d + np.cumsum(np.maximum(beta - prev, 0.0) + y)
        ys.append(y)
        last_y, last_d = y[-1], d[-1]
    Y = np.concatenate(ys)
    prev = np.concatenate([[0.0], Y[:-1]])
    inc = np.maximum(beta - prev, 0.0) + Y
    inc[0] = 0.0
    D = np.cumsum(inc)
    # cut one past the horizon so every query up to it sees its true age
    stop = int(np.searchsorted(D, horizon, side="right")) + 1
    D, Y = D[:stop], Y[:stop]
    return Trajectory(D - Y, Y, D)


def simulate(
    policy: Policy, dist: DelayDistribution, schedule: QuerySchedule, seed: int, fast_path: bool = True
) -> Trajectory:
    """Run the channel until the first delivery after ``schedule.horizon``.

    Threshold policies use a vectorized recursion that consumes the delay
    stream exactly like the event loop; the two agree up to summation rounding.
    """
    if policy.kind == "pow-grid":
        if schedule.kind != "periodic":
            raise SimulationError("pow-grid policies need a periodic query schedule")
        if abs(schedule.param - policy.period) > _EPS * policy.period:
            raise SimulationError(f"schedule period {schedule.param} differs from policy period {policy.period}")
    rng = np.random.default_rng(seed)
    horizon = schedule.horizon
    if fast_path and policy.kind in ("zero-wait", "uow-threshold"):
        return _threshold_path(policy.threshold, dist, horizon, rng)

    delays = _DelayStream(dist, rng)
    q = schedule.instants
    R, Y, D = [0.0], [0.0], [0.0]
    d, y = 0.0, 0.0
    while d <= horizon:
        k = int(np.searchsorted(q, d, side="left"))
        nq = q[k] if k < q.size else math.inf
        fq = q[k + 1] if k + 1 < q.size else math.inf
        r = next_request(policy, DecisionContext(d, y, nq, fq))
        if r < d - _EPS * max(1.0, d):
            raise SimulationError(
                f"{policy.describe()} requested at {r!r} before the pending delivery at {d!r}"
            )
        r = max(r, d)
        y = delays.next()
        d = r + y
        R.append(r)
        Y.append(y)
        D.append(d)
    return Trajectory(np.array(R), np.array(Y), np.array(D))


@dataclass(frozen=True)
class TrajectoryMetrics:
    qaoi_mean: float
    time_avg: float
    tx_count: int
    tx_rate: float
    n_queries: int
    warmup_queries_dropped: int
    qaoi_se: float = math.nan

    @property
    def mean_cycle(self) -> float:
        return 1.0 / self.tx_rate if self.tx_rate > 0 else math.inf


def default_warmup(policy: Policy, dist: DelayDistribution, schedule: QuerySchedule) -> float:
    if policy.kind == "pow-grid":
        m = policy.solution.grids.wait_cap
    elif policy.kind == "uow-threshold":
        m = policy.threshold
    else:
        m = 0.0
    return max(3.0 * dist.b_hi, m) + schedule.period


def measure(traj: Trajectory, schedule: QuerySchedule, g: PenaltyFunction, warmup: float) -> TrajectoryMetrics:
    q = schedule.instants
    keep = q > warmup
    qk = q[keep]
    if qk.size == 0:
        raise SimulationError("no queries after the warm-up period; increase the horizon")
    pen = np.asarray(g(traj.age(qk)), dtype=float)
    D, R = traj.D, traj.R
    i0 = int(np.searchsorted(D, warmup, side="left"))
    i1 = int(np.searchsorted(D, schedule.horizon, side="right")) - 1
    if i1 <= i0:
        raise SimulationError("fewer than two deliveries after the warm-up period")
    G = g.antiderivative
    seg = G(D[i0 + 1 : i1 + 1] - R[i0:i1]) - G(D[i0:i1] - R[i0:i1])
    span = D[i1] - D[i0]
    se = float(pen.std(ddof=1) / math.sqrt(pen.size)) if pen.size > 1 else math.nan
    return TrajectoryMetrics(
        qaoi_mean=float(pen.mean()),
        time_avg=float(np.sum(seg) / span),
        tx_count=i1 - i0,
        tx_rate=float((i1 - i0) / span),
        n_queries=int(qk.size),
        warmup_queries_dropped=int(q.size - qk.size),
        qaoi_se=se,
    )


def run(
    policy: Policy,
    dist: DelayDistribution,
    schedule: QuerySchedule,
    seed: int,
    g: PenaltyFunction | None = None,
    warmup: float | None = None,
) -> TrajectoryMetrics:
    g = identity() if g is None else g
    if warmup is None:
        warmup = default_warmup(policy, dist, schedule)
    traj = simulate(policy, dist, schedule, seed)
    return measure(traj, schedule, g, warmup)


@dataclass(frozen=True)
class Summary:
    mean: float
    se: float
    ci: float

    @property
    def low(self) -> float:
        return self.mean - self.ci

    @property
    def high(self) -> float:
        return self.mean + self.ci


def summarize(xs, level: float = 0.95) -> Summary:
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    m = float(xs.mean())
    if n < 2:
        return Summary(m, math.nan, math.nan)
    se = float(xs.std(ddof=1) / math.sqrt(n))
    return Summary(m, se, float(stats.t.ppf(0.5 + level / 2, n - 1) * se))


@dataclass(frozen=True, eq=False)
class AggregateMetrics:
    reps: tuple[TrajectoryMetrics, ...]

    def _field(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reps])

    @property
    def qaoi(self) -> Summary:
        return summarize(self._field("qaoi_mean"))

    @property
    def time_avg(self) -> Summary:
        return summarize(self._field("time_avg"))

    @property
    def tx_rate(self) -> Summary:
        return summarize(self._field("tx_rate"))

    @property
    def mean_cycle(self) -> float:
        """Pooled mean time between transmissions."""
        return 1.0 / float(self._field("tx_rate").mean())

    def paired_gap(self) -> Summary:
        """``qaoi_mean - time_avg`` across replications."""
        return summarize(self._field("qaoi_mean") - self._field("time_avg"))

    def __eq__(self, other):
        return isinstance(other, AggregateMetrics) and self.reps == other.reps

    def as_row(self) -> dict:
        q, t, x = self.qaoi, self.time_avg, self.tx_rate
        return {
            "qaoi_mean": q.mean, "qaoi_se": q.se, "qaoi_ci": q.ci,
            "time_avg": t.mean, "time_avg_se": t.se, "time_avg_ci": t.ci,
            "tx_rate": x.mean, "tx_rate_ci": x.ci,
        }


def _one_rep(args) -> TrajectoryMetrics:
    policy, dist, kind, param, horizon, seed, g, warmup = args
    rng = schedule_seed(seed) if kind == "poisson" else None
    sched = make_schedule(kind, param, horizon, rng)
    return run(policy, dist, sched, seed, g, warmup)


def replicate(
    policy: Policy,
    dist: DelayDistribution,
    schedule_spec: tuple[str, float],
    horizon: float,
    n_reps: int,
    base_seed: int = 0,
    g: PenaltyFunction | None = None,
    warmup: float | None = None,
    workers: int | None = None,
) -> AggregateMetrics:
    """``n_reps`` independent runs with seeds ``base_seed + i``.

    Poisson query instants of replication ``i`` come from a stream derived
    from its seed, so results do not depend on ``workers``.
    """
    if n_reps < 2:
        raise ValueError("need at least two replications")
    kind, param = schedule_spec
    jobs = [(policy, dist, kind, float(param), float(horizon), base_seed + i, g, warmup) for i in range(n_reps)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reps = list(ex.map(_one_rep, jobs))
    else:
        reps = [_one_rep(j) for j in jobs]
    return AggregateMetrics(tuple(reps))
