"""Bounded transmission-delay laws, truncation, and grid quantization.

A :class:`DelayDistribution` is either a finite set of atoms (``det``,
``disc``) or a continuous base law conditioned on ``[b_lo, b_hi]``.
Quantizing it onto a uniform grid of step ``Q/N`` gives a
:class:`QuantizedDelay`, the input of the dynamic program.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

DEFAULT_START = 0.01
DEFAULT_MASS = 0.95
BETA_LOWER_CUT = 0.01

# tolerance (in grid units) for treating a value as lying on a grid point
GRID_SNAP = 1e-9

FAMILIES = (
    "deterministic",
    "discrete",
    "truncated-exponential",
    "truncated-log-normal",
    "truncated-pareto",
    "beta-scaled",
    "uniform",
)

_ALIASES = {
    "det": "deterministic",
    "deterministic": "deterministic",
    "disc": "discrete",
    "discrete": "discrete",
    "exp": "truncated-exponential",
    "exponential": "truncated-exponential",
    "truncated-exponential": "truncated-exponential",
    "lognorm": "truncated-log-normal",
    "lognormal": "truncated-log-normal",
    "truncated-log-normal": "truncated-log-normal",
    "pareto": "truncated-pareto",
    "truncated-pareto": "truncated-pareto",
    "beta": "beta-scaled",
    "beta-scaled": "beta-scaled",
    "uniform": "uniform",
    "unif": "uniform",
}


class DistributionError(ValueError):
    """Invalid family, parameters, or truncation request."""


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def grid_index(x: float, step: float, direction: str) -> int:
    """Grid index of ``x``: ceil for ``upper``, floor for ``lower``.

    Values within ``GRID_SNAP`` grid units of a grid point map to that
    point in both directions.
    """
    r = x / step
    k = round(r)
    if abs(r - k) <= GRID_SNAP:
        return int(k)
    return int(math.ceil(r)) if direction == "upper" else int(math.floor(r))


@dataclass(frozen=True)
class DelayDistribution:
    """Transmission-delay law with support inside ``[b_lo, b_hi]``.

    Continuous families hold a frozen scipy base law ``base`` and are
    conditioned on ``[b_lo, b_hi]``; atomic families hold ``values`` and
    ``probs``.
    """

    family: str
    params: tuple[tuple[str, float], ...]
    b_lo: float
    b_hi: float
    values: np.ndarray | None = field(default=None, repr=False, compare=False)
    probs: np.ndarray | None = field(default=None, repr=False, compare=False)
    base: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.b_lo > 0:
            raise DistributionError(f"lower support bound must be positive, got {self.b_lo}")
        if self.b_hi < self.b_lo:
            raise DistributionError(f"empty support [{self.b_lo}, {self.b_hi}]")
        if self.is_atomic:
            if self.values is None or self.probs is None or len(self.values) != len(self.probs):
                raise DistributionError("atomic law needs matching values and probs")
        elif self.base is None:
            raise DistributionError("continuous law needs a base distribution")

    @property
    def is_atomic(self) -> bool:
        return self.family in ("deterministic", "discrete")

    @property
    def param_dict(self) -> dict[str, float]:
        return dict(self.params)

    @property
    def _mass_window(self) -> tuple[float, float]:
        lo = float(self.base.cdf(self.b_lo))
        hi = float(self.base.cdf(self.b_hi))
        return lo, hi

    def cdf(self, x):
        """``Pr(Y <= x)``; exactly 0 below ``b_lo`` and 1 from ``b_hi`` on."""
        xa = np.asarray(x, dtype=float)
        if self.is_atomic:
            out = np.searchsorted(self.values, xa, side="right")
            cum = np.concatenate([[0.0], np.cumsum(self.probs)])
            res = np.where(out >= len(self.values), 1.0, cum[out])
        else:
            lo, hi = self._mass_window
            inner = (self.base.cdf(np.clip(xa, self.b_lo, self.b_hi)) - lo) / (hi - lo)
            res = np.clip(inner, 0.0, 1.0)
            res = np.where(xa < self.b_lo, 0.0, res)
            res = np.where(xa >= self.b_hi, 1.0, res)
        return float(res) if np.ndim(res) == 0 else res

    def ppf(self, u):
        """Inverse CDF (left-continuous generalized inverse)."""
        ua = np.asarray(u, dtype=float)
        if self.is_atomic:
            cum = np.cumsum(self.probs)
            idx = np.minimum(np.searchsorted(cum, ua, side="left"), len(cum) - 1)
            res = self.values[idx]
        else:
            lo, hi = self._mass_window
            res = np.clip(self.base.ppf(lo + ua * (hi - lo)), self.b_lo, self.b_hi)
        return float(res) if np.ndim(res) == 0 else res

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Inverse-CDF draws; one uniform per draw, so streams are reproducible."""
        u = rng.random(size)
        return self.ppf(u)

    def expect(self, f: Callable[[np.ndarray], np.ndarray], breakpoints: Sequence[float] = ()) -> float:
        """``E[f(Y)]`` by exact summation (atoms) or Gauss-Legendre in probability space.

        ``breakpoints`` are delay values where ``f`` has a kink; the
        quadrature panels are split there.
        """
        nodes, weights = self.quadrature(breakpoints)
        return float(np.dot(weights, f(nodes)))

    def quadrature(self, breakpoints: Sequence[float] = (), panels: int = 16, order: int = 32):
        """Nodes and weights with ``sum(w * f(nodes)) ~= E[f(Y)]``."""
        if self.is_atomic:
            return self.values.copy(), self.probs.copy()
        cuts = {0.0, 1.0}
        for b in breakpoints:
            c = self.cdf(b)
            if 0.0 < c < 1.0:
                cuts.add(float(c))
        edges = np.unique(np.concatenate([np.linspace(0.0, 1.0, panels + 1), sorted(cuts)]))
        gx, gw = np.polynomial.legendre.leggauss(order)
        us, ws = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            us.append(0.5 * (b - a) * gx + 0.5 * (a + b))
            ws.append(0.5 * (b - a) * gw)
        u = np.concatenate(us)
        return self.ppf(u), np.concatenate(ws)

    def mean(self) -> float:
        return self.expect(lambda y: y)

    def describe(self) -> str:
        if self.family == "discrete":
            body = ",".join(f"{v:g}@{p:g}" for v, p in zip(self.values, self.probs))
            return f"disc:{body}"
        return f"{self.family}:" + ",".join(f"{k}={v:g}" for k, v in self.params)


def _base_law(family: str, p: dict[str, float]):
    try:
        if family == "truncated-exponential":
            lam = p["lambda"]
            if lam <= 0:
                raise DistributionError("exponential rate must be positive")
            return stats.expon(scale=1.0 / lam), 0.0, math.inf
        if family == "truncated-log-normal":
            sigma, mu = p["sigma"], p.get("mu", 0.0)
            if sigma <= 0:
                raise DistributionError("log-normal sigma must be positive")
            return stats.lognorm(s=sigma, scale=math.exp(mu)), 0.0, math.inf
        if family == "truncated-pareto":
            xm, alpha = p["xm"], p["alpha"]
            if xm <= 0 or alpha <= 0:
                raise DistributionError("pareto xm and alpha must be positive")
            return stats.pareto(b=alpha, scale=xm), xm, math.inf
        if family == "beta-scaled":
            a, b = p["alpha"], p["beta"]
            if a <= 0 or b <= 0:
                raise DistributionError("beta shape parameters must be positive")
            return stats.beta(a, b), 0.0, 1.0
        if family == "uniform":
            lo, hi = p["lo"], p["hi"]
            if not 0 < lo < hi:
                raise DistributionError("uniform needs 0 < lo < hi")
            return stats.uniform(loc=lo, scale=hi - lo), lo, hi
    except KeyError as exc:
        raise DistributionError(f"missing parameter {exc.args[0]!r} for {family}") from None
    raise DistributionError(f"unknown continuous family {family!r}")


def atomic(values: Sequence[float], probs: Sequence[float] | None = None) -> DelayDistribution:
    """Finite delay law; ``deterministic`` when there is a single atom."""
    vals = np.asarray(values, dtype=float)
    pr = np.full(len(vals), 1.0 / len(vals)) if probs is None else np.asarray(probs, dtype=float)
    if len(vals) == 0 or np.any(pr < 0) or abs(pr.sum() - 1.0) > 1e-9:
        raise DistributionError("atom probabilities must be nonnegative and sum to 1")
    keep = pr > 0
    vals, pr = vals[keep], pr[keep]
    order = np.argsort(vals)
    vals, pr = vals[order], pr[order]
    uniq, inv = np.unique(vals, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv, pr)
    if uniq[0] <= 0:
        raise DistributionError("delays must be positive")
    if len(uniq) == 1:
        return DelayDistribution(
            "deterministic", (("d", float(uniq[0])),), float(uniq[0]), float(uniq[0]),
            values=_readonly(uniq), probs=_readonly([1.0]),
        )
    params = tuple((f"{v:g}", float(p)) for v, p in zip(uniq, merged))
    return DelayDistribution(
        "discrete", params, float(uniq[0]), float(uniq[-1]),
        values=_readonly(uniq), probs=_readonly(merged / merged.sum()),
    )


def truncated_distribution(
    family: str,
    params: dict[str, float] | None = None,
    lower_start: float = DEFAULT_START,
    upper_mass: float = DEFAULT_MASS,
) -> DelayDistribution:
    """Base law conditioned on ``[lower_start, F^-1(upper_mass)]``.

    The lower end is raised to the base law's own support start when that
    is larger (Pareto). Families with bounded support (``uniform``,
    ``beta-scaled``) keep their natural upper end and only get the lower
    cut; atomic families are returned unchanged.
    """
    family = _ALIASES.get(family, family)
    params = dict(params or {})
    if family == "deterministic":
        return atomic([params["d"]])
    if family == "discrete":
        raise DistributionError("build discrete laws with atomic(values, probs)")
    if family not in FAMILIES:
        raise DistributionError(f"unknown family {family!r}")
    if not lower_start > 0:
        raise DistributionError("lower_start must be positive")
    if not 0 < upper_mass < 1:
        raise DistributionError("upper_mass must lie in (0, 1)")
    base, sup_lo, sup_hi = _base_law(family, params)
    if family == "beta-scaled":
        lower_start = max(lower_start, BETA_LOWER_CUT)
    b_lo = max(lower_start, sup_lo)
    if math.isfinite(sup_hi):
        b_hi = sup_hi
    else:
        b_hi = float(base.ppf(upper_mass))
        if not math.isfinite(b_hi):
            raise DistributionError("requested upper quantile is unbounded")
    if b_lo >= b_hi:
        raise DistributionError(f"lower start {b_lo} is not below the upper bound {b_hi}")
    return DelayDistribution(family, tuple(sorted(params.items())), float(b_lo), float(b_hi), base=base)


def parse_distribution(text: str) -> DelayDistribution:
    """Parse ``family:k=v,k=v`` (or ``disc:1@0.5,2@0.5``).

    ``start=`` and ``mass=`` override the truncation defaults.
    """
    text = text.strip()
    name, _, body = text.partition(":")
    family = _ALIASES.get(name.strip().lower())
    if family is None:
        raise DistributionError(f"unknown distribution family {name!r}")
    if family == "discrete":
        vals, probs = [], []
        for item in filter(None, (s.strip() for s in body.split(","))):
            v, at, p = item.partition("@")
            if not at:
                raise DistributionError(f"discrete atom {item!r} must look like value@prob")
            try:
                vals.append(float(v))
                probs.append(float(p))
            except ValueError:
                raise DistributionError(f"bad discrete atom {item!r}") from None
        return atomic(vals, probs)
    kv: dict[str, float] = {}
    for item in filter(None, (s.strip() for s in body.split(","))):
        k, eq, v = item.partition("=")
        if not eq:
            raise DistributionError(f"parameter {item!r} must look like key=value")
        try:
            kv[k.strip().lower()] = float(v)
        except ValueError:
            raise DistributionError(f"non-numeric value in {item!r}") from None
    renames = {"a": "alpha", "b": "beta", "rate": "lambda", "lam": "lambda", "x_m": "xm", "s": "sigma"}
    if family == "uniform":
        renames = {}
    kv = {renames.get(k, k): v for k, v in kv.items()}
    start = kv.pop("start", DEFAULT_START)
    mass = kv.pop("mass", DEFAULT_MASS)
    if family == "deterministic":
        if "d" not in kv:
            raise DistributionError("det needs d=")
        return atomic([kv["d"]])
    return truncated_distribution(family, kv, start, mass)


def cdf(dist: DelayDistribution, x):
    return dist.cdf(x)


def sample(dist: DelayDistribution, rng: np.random.Generator, size: int | None = None):
    return dist.sample(rng, size)


@dataclass(frozen=True)
class QuantizedDelay:
    """Probability mass on grid points ``index * step``."""

    step: float
    indices: np.ndarray
    probs: np.ndarray
    direction: str

    def __post_init__(self):
        if self.direction not in ("upper", "lower"):
            raise ValueError(f"direction must be 'upper' or 'lower', got {self.direction!r}")
        if len(self.indices) == 0 or len(self.indices) != len(self.probs):
            raise ValueError("quantized delay needs matching, nonempty indices and probs")
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {np.sum(self.probs)!r}, not 1")

    @property
    def values(self) -> np.ndarray:
        return self.indices * self.step

    @property
    def min_index(self) -> int:
        return int(self.indices[0])

    @property
    def max_index(self) -> int:
        return int(self.indices[-1])

    def dense(self) -> np.ndarray:
        """Probabilities indexed by grid index ``0..max_index``."""
        out = np.zeros(self.max_index + 1)
        out[self.indices] = self.probs
        return out

    def cdf(self, x):
        xa = np.asarray(x, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.probs)])
        pos = np.searchsorted(self.values, xa, side="right")
        res = np.minimum(cum[pos], 1.0)
        return float(res) if np.ndim(res) == 0 else res

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def as_distribution(self) -> DelayDistribution:
        return atomic(self.values, self.probs)

    def clamped(self, min_index: int) -> "QuantizedDelay":
        """Move all mass below ``min_index`` onto ``min_index``."""
        if self.min_index >= min_index:
            return self
        low = self.indices < min_index
        idx = np.concatenate([[min_index], self.indices[~low]])
        pr = np.concatenate([[self.probs[low].sum()], self.probs[~low]])
        if len(idx) > 1 and idx[1] == min_index:
            pr[1] += pr[0]
            idx, pr = idx[1:], pr[1:]
        return QuantizedDelay(self.step, _ro_int(idx), _readonly(pr), self.direction)


def _ro_int(a) -> np.ndarray:
    a = np.array(a, dtype=np.int64)
    a.flags.writeable = False
    return a


def quantize(dist: DelayDistribution, step: float, direction: str) -> QuantizedDelay:
    """Round delays up (``upper``) or down (``lower``) to multiples of ``step``.

    Upper: index ``m`` carries the mass of ``((m-1)*step, m*step]``.
    Lower: index ``m`` carries the mass of ``[m*step, (m+1)*step)``.
    Atoms sitting on a grid point keep their index in both directions.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if direction not in ("upper", "lower"):
        raise ValueError(f"direction must be 'upper' or 'lower', got {direction!r}")
    if dist.is_atomic:
        idx = np.array([grid_index(v, step, direction) for v in dist.values], dtype=np.int64)
        acc: dict[int, float] = {}
        for i, p in zip(idx, dist.probs):
            acc[int(i)] = acc.get(int(i), 0.0) + float(p)
        keys = sorted(acc)
        return QuantizedDelay(step, _ro_int(keys), _readonly([acc[k] for k in keys]), direction)
    lo = int(math.floor(dist.b_lo / step)) - 1
    hi = int(math.ceil(dist.b_hi / step)) + 1
    ms = np.arange(max(lo, 0), hi + 1, dtype=np.int64)
    if direction == "upper":
        mass = dist.cdf(ms * step) - dist.cdf((ms - 1) * step)
    else:
        mass = dist.cdf((ms + 1) * step) - dist.cdf(ms * step)
    keep = mass > 0
    return QuantizedDelay(step, _ro_int(ms[keep]), _readonly(mass[keep]), direction)


@dataclass(frozen=True)
class GridSets:
    """Remaining-time, delay, and wait grids sharing step ``q_horizon / n_intervals``."""

    q_horizon: float
    n_intervals: int
    wait_cap: float
    y_lo: int
    y_hi: int

    @property
    def step(self) -> float:
        return self.q_horizon / self.n_intervals

    @property
    def z_max(self) -> int:
        return int(math.floor(self.wait_cap / self.step + GRID_SNAP))

    @property
    def a_grid(self) -> np.ndarray:
        return np.arange(self.n_intervals + 1) * self.step

    @property
    def y_grid(self) -> np.ndarray:
        return np.arange(self.y_lo, self.y_hi + 1) * self.step

    @property
    def z_grid(self) -> np.ndarray:
        return np.arange(self.z_max + 1) * self.step


def build_grids(Q: float, N: int, M: float, qd: QuantizedDelay) -> GridSets:
    if N < 1 or not Q > 0 or not M > 0:
        raise ValueError("need N >= 1, Q > 0, M > 0")
    step = Q / N
    if abs(qd.step - step) > 1e-12 * max(1.0, step):
        raise ValueError(f"quantized step {qd.step!r} does not match Q/N = {step!r}")
    return GridSets(float(Q), int(N), float(M), qd.min_index, qd.max_index)


def intervals_for_step(Q: float, step: float) -> int:
    """Grid size ``N = round(Q / step)`` so that the grid ends exactly at ``Q``."""
    return max(1, int(round(Q / step)))
