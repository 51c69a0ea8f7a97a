"""Single-query optimal request planning on a quantized delay grid.

Given a quantized delay law and a penalty ``g``, :func:`value_tables`
computes, for every remaining time ``a`` until the query and every age
``y`` at a delivery, the optimal expected penalty at the query and the
optimal wait. :func:`solve_refined` brackets the optimum for a
continuous delay law between an upper-quantized and a lower-quantized
solve, doubling the grid until the bracket is narrow enough.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .delays import (
    DelayDistribution,
    GridSets,
    QuantizedDelay,
    build_grids,
    grid_index,
    quantize,
)
from .penalty import PenaltyFunction

log = logging.getLogger(__name__)

FORMAT = "qaoi-solution"
FORMAT_VERSION = 1
TIE_RTOL = 1e-12


class SolverError(RuntimeError):
    """Numerical or precondition failure while solving."""


@dataclass(frozen=True, eq=False)
class SolverSolution:
    """Value tables and decision grid for one quantization direction.

    ``gd_table[a, y - y_lo]`` is the optimal expected penalty at the query
    after a delivery with remaining time ``a`` (grid index) and age ``y``;
    ``decision`` holds the matching wait (grid index; ``z_max`` also
    stands for "no further request"). ``gr_sum[a] + g(a*step + delta) *
    tail[a]`` is the expected penalty after a request at remaining time
    ``a`` with age ``delta``.
    """

    grids: GridSets
    direction: str
    qd: QuantizedDelay
    penalty: PenaltyFunction
    gr_sum: np.ndarray
    tail: np.ndarray
    gd_table: np.ndarray
    decision: np.ndarray
    anchor_index: int
    border_index: int
    h_one: float
    evaluations: int
    backend: str = "python"

    @property
    def step(self) -> float:
        return self.grids.step

    @property
    def border_offset(self) -> float:
        return self.border_index * self.step

    @property
    def gr_tail(self) -> np.ndarray:
        """Request-point values for ``a >= max(y_grid)``, where age no longer matters."""
        return self.gr_sum[self.grids.y_hi:]

    def g_r_index(self, a: int, delta: float) -> float:
        if not 0 <= a <= self.grids.n_intervals:
            raise IndexError(f"remaining-time index {a} outside the grid")
        t = self.tail[a]
        if t == 0.0:
            return float(self.gr_sum[a])
        return float(self.gr_sum[a] + self.penalty(a * self.step + delta) * t)

    def g_r(self, a: float, delta: float) -> float:
        """Expected query penalty after a request with remaining time ``a`` and age ``delta``."""
        return self.g_r_index(self._on_grid(a), delta)

    def g_d(self, a: float, y: float) -> float:
        return float(self.gd_table[self._on_grid(a), self._y_col(y)])

    def wait_index(self, y_index: int, a_index: int) -> int:
        """Optimal wait (grid index) at the delivery state ``(y, a)``."""
        return int(self.decision[a_index, y_index - self.grids.y_lo])

    def wait(self, y: float, a: float) -> float:
        return self.wait_index(self._y_index(y), self._on_grid(a)) * self.step

    def _on_grid(self, t: float) -> int:
        k = grid_index(t, self.step, "upper")
        if abs(k * self.step - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t!r} is not on the grid of step {self.step!r}")
        return k

    def _y_index(self, y: float) -> int:
        k = self._on_grid(y)
        if not self.grids.y_lo <= k <= self.grids.y_hi:
            raise ValueError(f"age {y!r} outside the delay grid")
        return k

    def _y_col(self, y: float) -> int:
        return self._y_index(y) - self.grids.y_lo

    def to_dict(self) -> dict:
        g = self.grids
        return {
            "direction": self.direction,
            "grids": {
                "q_horizon": g.q_horizon,
                "n_intervals": g.n_intervals,
                "wait_cap": g.wait_cap,
                "y_lo": g.y_lo,
                "y_hi": g.y_hi,
                "step": g.step,
            },
            "quantized": {
                "step": self.qd.step,
                "indices": self.qd.indices.tolist(),
                "probs": self.qd.probs.tolist(),
            },
            "penalty": penalty_to_dict(self.penalty),
            "gr_sum": self.gr_sum.tolist(),
            "tail": self.tail.tolist(),
            "gd_table": self.gd_table.tolist(),
            "decision": self.decision.tolist(),
            "anchor_index": self.anchor_index,
            "border_index": self.border_index,
            "border_offset": self.border_offset,
            "h_one": self.h_one,
            "evaluations": self.evaluations,
            "backend": self.backend,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverSolution":
        gd = d["grids"]
        q = d["quantized"]
        qd = QuantizedDelay(
            float(q["step"]),
            np.asarray(q["indices"], dtype=np.int64),
            np.asarray(q["probs"], dtype=float),
            d["direction"],
        )
        grids = GridSets(float(gd["q_horizon"]), int(gd["n_intervals"]), float(gd["wait_cap"]),
                         int(gd["y_lo"]), int(gd["y_hi"]))
        return cls(
            grids=grids,
            direction=d["direction"],
            qd=qd,
            penalty=penalty_from_dict(d["penalty"]),
            gr_sum=np.asarray(d["gr_sum"], dtype=float),
            tail=np.asarray(d["tail"], dtype=float),
            gd_table=np.asarray(d["gd_table"], dtype=float),
            decision=np.asarray(d["decision"], dtype=np.int64),
            anchor_index=int(d["anchor_index"]),
            border_index=int(d["border_index"]),
            h_one=float(d["h_one"]),
            evaluations=int(d["evaluations"]),
            backend=d.get("backend", "python"),
        )


def penalty_to_dict(g: PenaltyFunction) -> dict:
    out = {"kind": g.kind, "params": list(g.params)}
    if g.kind == "table":
        out["knots_x"] = g.knots_x.tolist()
        out["knots_g"] = g.knots_g.tolist()
    return out


def penalty_from_dict(d: dict) -> PenaltyFunction:
    if d["kind"] == "table":
        return PenaltyFunction("table", knots_x=np.asarray(d["knots_x"]), knots_g=np.asarray(d["knots_g"]))
    return PenaltyFunction(d["kind"], tuple(float(p) for p in d["params"]))


def value_tables(
    qd: QuantizedDelay,
    g: PenaltyFunction,
    grids: GridSets,
    backend: str | None = None,
) -> SolverSolution:
    """Backward recursion over remaining time, ascending from the query.

    The border point is read off the decision at the delivery state with
    remaining time ``min(3 * y_max, N)`` and the smallest positive age on
    the grid. If that decision is not a request in ``[y_max, anchor]``
    (e.g. a constant penalty, where every plan ties), the border falls
    back to the smallest minimizer of the request-point value over the
    part of that window reachable from the anchor within one wait.
    """
    step = grids.step
    if abs(qd.step - step) > 1e-12 * max(1.0, step):
        raise SolverError(f"quantized step {qd.step!r} does not match grid step {step!r}")
    if qd.min_index != grids.y_lo or qd.max_index != grids.y_hi:
        raise SolverError("delay grid does not span the quantized atoms")
    n, ymin, ymax = grids.n_intervals, grids.y_lo, grids.y_hi
    if ymax < 1:
        raise SolverError("all delay mass sits at zero; the grid is too coarse")
    if n < ymax:
        raise SolverError(f"query horizon {grids.q_horizon} is shorter than the maximum delay {ymax * step}")

    prob = qd.dense()
    tail = np.zeros(n + 1)
    top = min(n, ymax - 1)
    # tail[a] = Pr(Y > a), summed from the top so it is exactly 0 for a >= ymax
    rev = np.cumsum(prob[::-1])[::-1]
    tail[: top + 1] = rev[1 : top + 2]
    with np.errstate(over="ignore"):
        cost = np.asarray(g(np.arange(n + ymax + 1) * step), dtype=float)
    if not np.all(np.isfinite(cost)):
        raise SolverError("penalty is not finite on the age range of the grid")

    which = backend or kernels.BACKEND
    S, gd, dec, evals = kernels.solve_tables(prob, tail, ymin, ymax, n, grids.z_max, cost, TIE_RTOL, which)

    anchor = min(3 * ymax, n)
    y_anchor = max(ymin, 1)
    z = int(dec[anchor, y_anchor - ymin])
    r = anchor - z
    if z <= anchor and ymax <= r:
        border = r
    else:
        lo = max(ymax, anchor - grids.z_max)
        window = S[lo : anchor + 1]
        m = window.min()
        border = lo + int(np.nonzero(window <= m + TIE_RTOL * max(1.0, abs(m)))[0][0])
    h_one = float(S[border])
    return SolverSolution(
        grids=grids,
        direction=qd.direction,
        qd=qd,
        penalty=g,
        gr_sum=S,
        tail=tail,
        gd_table=gd,
        decision=dec,
        anchor_index=anchor,
        border_index=border,
        h_one=h_one,
        evaluations=evals,
        backend=which,
    )


def g_r(sol: SolverSolution, a: float, delta: float) -> float:
    return sol.g_r(a, delta)


def border_offset(sol: SolverSolution) -> float:
    return sol.border_offset


def quantized_pair(dist: DelayDistribution, Q: float, N: int, lower_mode: str = "clamp"):
    """Upper and lower quantizations on the grid of step ``Q/N``.

    ``lower_mode="clamp"`` lifts lower-quantized mass sitting at zero delay
    onto the first positive grid point; ``"keep"`` leaves it at zero.
    """
    step = Q / N
    up = quantize(dist, step, "upper")
    lo = quantize(dist, step, "lower")
    if lower_mode == "clamp":
        lo = lo.clamped(1)
    elif lower_mode != "keep":
        raise ValueError(f"lower_mode must be 'clamp' or 'keep', got {lower_mode!r}")
    return up, lo


def solve_pair(
    dist: DelayDistribution,
    g: PenaltyFunction,
    Q: float,
    N: int,
    M: float | None = None,
    lower_mode: str = "clamp",
    backend: str | None = None,
) -> tuple[SolverSolution, SolverSolution]:
    """Upper- and lower-quantized solutions on one grid."""
    M = Q if M is None else M
    up, lo = quantized_pair(dist, Q, N, lower_mode)
    su = value_tables(up, g, build_grids(Q, N, M, up), backend)
    sl = value_tables(lo, g, build_grids(Q, N, M, lo), backend)
    return su, sl


@dataclass(frozen=True, eq=False)
class RefinedSolution:
    upper_solution: SolverSolution
    lower_solution: SolverSolution
    lower_bound: float
    upper_bound: float
    n_final: int
    tolerance: float
    evaluations: int
    converged: bool
    history: tuple[dict, ...] = ()
    metadata: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.upper_bound - self.lower_bound

    @property
    def effective_step(self) -> float:
        return self.upper_solution.step

    @property
    def border_offset(self) -> float:
        return self.upper_solution.border_offset

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "kind": "refined",
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "n_final": self.n_final,
            "effective_step": self.effective_step,
            "tolerance": self.tolerance,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "border_offset": self.border_offset,
            "history": list(self.history),
            "metadata": dict(self.metadata),
            "upper": self.upper_solution.to_dict(),
            "lower": self.lower_solution.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RefinedSolution":
        _check_header(d, "refined")
        return cls(
            upper_solution=SolverSolution.from_dict(d["upper"]),
            lower_solution=SolverSolution.from_dict(d["lower"]),
            lower_bound=float(d["lower_bound"]),
            upper_bound=float(d["upper_bound"]),
            n_final=int(d["n_final"]),
            tolerance=float(d["tolerance"]),
            evaluations=int(d["evaluations"]),
            converged=bool(d["converged"]),
            history=tuple(d.get("history", ())),
            metadata=dict(d.get("metadata", {})),
        )


def _check_header(d: dict, kind: str) -> None:
    if d.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    if int(d.get("version", -1)) != FORMAT_VERSION:
        raise ValueError(f"unsupported solution format version {d.get('version')!r}")
    if d.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} solution, got {d.get('kind')!r}")


def solve_refined(
    dist: DelayDistribution,
    g: PenaltyFunction,
    Q: float,
    M: float | None = None,
    eps: float = 0.01,
    n0: int = 16,
    max_doublings: int = 8,
    lower_mode: str = "clamp",
    backend: str | None = None,
) -> RefinedSolution:
    """Double the grid from ``n0`` until ``upper - lower < eps``.

    Hitting the doubling cap returns the last bracket with
    ``converged=False``.
    """
    if not eps > 0:
        raise SolverError("eps must be positive")
    if n0 < 4:
        raise SolverError("n0 must be at least 4")
    if not Q > dist.b_hi:
        raise SolverError(f"query horizon Q={Q} must exceed the maximum delay {dist.b_hi}")
    M = Q if M is None else M
    history = []
    total = 0
    su = sl = None
    N = n0
    converged = False
    for _ in range(max_doublings + 1):
        su, sl = solve_pair(dist, g, Q, N, M, lower_mode, backend)
        total += su.evaluations
        history.append({
            "n": N,
            "step": Q / N,
            "lower": sl.h_one,
            "upper": su.h_one,
            "evaluations": su.evaluations,
        })
        log.debug("N=%d lower=%.6f upper=%.6f", N, sl.h_one, su.h_one)
        if su.h_one - sl.h_one < eps:
            converged = True
            break
        N *= 2
    if not converged:
        log.warning("refinement stopped at N=%d with gap %.3g >= eps=%.3g", su.grids.n_intervals,
                    su.h_one - sl.h_one, eps)
    return RefinedSolution(
        upper_solution=su,
        lower_solution=sl,
        lower_bound=sl.h_one,
        upper_bound=su.h_one,
        n_final=su.grids.n_intervals,
        tolerance=eps,
        evaluations=su.evaluations,
        converged=converged,
        history=tuple(history),
        metadata={
            "distribution": dist.describe(),
            "penalty": g.describe(),
            "q_horizon": Q,
            "wait_cap": M,
            "lower_mode": lower_mode,
            "total_evaluations": total,
        },
    )


def save_solution(sol: RefinedSolution | SolverSolution, path: str | Path) -> None:
    if isinstance(sol, RefinedSolution):
        doc = sol.to_dict()
    else:
        doc = {"format": FORMAT, "version": FORMAT_VERSION, "kind": "single", **sol.to_dict()}
    Path(path).write_text(json.dumps(doc))


def load_solution(path: str | Path) -> RefinedSolution | SolverSolution:
    doc = json.loads(Path(path).read_text())
    kind = doc.get("kind")
    if kind == "refined":
        return RefinedSolution.from_dict(doc)
    _check_header(doc, "single")
    return SolverSolution.from_dict(doc)


def check_horizon(dist: DelayDistribution, Q: float) -> None:
    if not math.isfinite(Q) or Q <= dist.b_hi:
        raise SolverError(f"query horizon {Q} must exceed the maximum delay {dist.b_hi}")
