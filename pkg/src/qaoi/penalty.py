"""Age penalty functions g(age) and their antiderivatives."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("identity", "affine", "exponential", "table")


class PenaltyError(ValueError):
    pass


@dataclass(frozen=True)
class PenaltyFunction:
    kind: str
    params: tuple[float, ...] = ()
    knots_x: np.ndarray | None = field(default=None, repr=False, compare=False)
    knots_g: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PenaltyError(f"unknown penalty kind {self.kind!r}")
        if self.kind == "table":
            x, g = self.knots_x, self.knots_g
            if x is None or g is None or len(x) < 2 or len(x) != len(g):
                raise PenaltyError("table penalty needs at least two (x, g) knots")
            if np.any(np.diff(x) <= 0):
                raise PenaltyError("table x values must be strictly increasing")

    def __call__(self, x):
        xa = np.asarray(x, dtype=float)
        if np.any(xa < 0):
            raise PenaltyError("age must be nonnegative")
        if self.kind == "identity":
            out = xa
        elif self.kind == "affine":
            a, b = self.params
            out = a * xa + b
        elif self.kind == "exponential":
            (alpha,) = self.params
            out = np.expm1(alpha * xa)
        else:
            out = np.interp(xa, self.knots_x, self.knots_g)
        return float(out) if np.ndim(out) == 0 else out

    def integral(self, lo, hi):
        """Exact ``int_lo^hi g(u) du`` (vectorized over ``lo``/``hi``)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return self.antiderivative(hi) - self.antiderivative(lo)

    def antiderivative(self, x):
        xa = np.asarray(x, dtype=float)
        if self.kind == "identity":
            out = 0.5 * xa * xa
        elif self.kind == "affine":
            a, b = self.params
            out = 0.5 * a * xa * xa + b * xa
        elif self.kind == "exponential":
            (alpha,) = self.params
            out = np.expm1(alpha * xa) / alpha - xa if alpha != 0 else np.zeros_like(xa)
        else:
            out = _piecewise_linear_antiderivative(self.knots_x, self.knots_g, xa)
        return float(out) if np.ndim(out) == 0 else out

    def describe(self) -> str:
        if self.kind == "identity":
            return "identity"
        if self.kind == "affine":
            return "affine:a={:g},b={:g}".format(*self.params)
        if self.kind == "exponential":
            return "exp:alpha={:g}".format(*self.params)
        return "table:" + ";".join(f"{x:g}/{g:g}" for x, g in zip(self.knots_x, self.knots_g))


def _piecewise_linear_antiderivative(xs: np.ndarray, gs: np.ndarray, x: np.ndarray) -> np.ndarray:
    # np.interp holds the end values constant outside [xs[0], xs[-1]]
    seg = np.diff(xs) * 0.5 * (gs[:-1] + gs[1:])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    xc = np.clip(x, xs[0], xs[-1])
    k = np.clip(np.searchsorted(xs, xc, side="right") - 1, 0, len(xs) - 2)
    dx = xc - xs[k]
    slope = (gs[k + 1] - gs[k]) / (xs[k + 1] - xs[k])
    inside = cum[k] + gs[k] * dx + 0.5 * slope * dx * dx
    below = np.minimum(x - xs[0], 0.0) * gs[0]
    above = np.maximum(x - xs[-1], 0.0) * gs[-1]
    return inside + below + above


def identity() -> PenaltyFunction:
    return PenaltyFunction("identity")


def affine(a: float, b: float) -> PenaltyFunction:
    return PenaltyFunction("affine", (float(a), float(b)))


def exponential(alpha: float) -> PenaltyFunction:
    """``g(x) = exp(alpha * x) - 1``."""
    return PenaltyFunction("exponential", (float(alpha),))


def table(xs, gs) -> PenaltyFunction:
    return PenaltyFunction(
        "table",
        knots_x=np.asarray(xs, dtype=float),
        knots_g=np.asarray(gs, dtype=float),
    )


def load_table(path: str | Path) -> PenaltyFunction:
    xs, gs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                xs.append(float(row[0]))
                gs.append(float(row[1]))
            except (ValueError, IndexError):
                if xs:
                    raise PenaltyError(f"bad row in {path}: {row!r}") from None
                # header line
    return table(xs, gs)


def parse_penalty(text: str) -> PenaltyFunction:
    """``identity``, ``exp:alpha=2``, ``affine:a=1,b=0`` or ``table:file.csv``."""
    name, _, body = text.strip().partition(":")
    name = name.strip().lower()
    if name in ("identity", "id", "linear"):
        return identity()
    if name == "table":
        if not body:
            raise PenaltyError("table penalty needs a CSV path")
        return load_table(body)
    kv = {}
    for item in filter(None, (s.strip() for s in body.split(","))):
        k, eq, v = item.partition("=")
        if not eq:
            raise PenaltyError(f"parameter {item!r} must look like key=value")
        try:
            kv[k.strip().lower()] = float(v)
        except ValueError:
            raise PenaltyError(f"non-numeric value in {item!r}") from None
    if name in ("exp", "exponential"):
        if "alpha" not in kv:
            raise PenaltyError("exp penalty needs alpha=")
        return exponential(kv["alpha"])
    if name == "affine":
        return affine(kv.get("a", 1.0), kv.get("b", 0.0))
    raise PenaltyError(f"unknown penalty {text!r}")


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    problem: str | None = None
    x: float | None = None

    def __bool__(self) -> bool:
        return self.ok


def validate(g: PenaltyFunction, domain_hi: float, n_points: int = 10_000) -> ValidationReport:
    """First negativity or monotonicity violation on ``[0, domain_hi]``.

    Tables are checked at their knots, which determine the interpolant;
    other kinds on an ``n_points`` grid.
    """
    if not domain_hi > 0:
        raise PenaltyError("domain_hi must be positive")
    if g.kind == "table":
        xs = np.concatenate([[0.0], g.knots_x[(g.knots_x > 0) & (g.knots_x < domain_hi)], [domain_hi]])
        xs = np.unique(xs)
    else:
        xs = np.linspace(0.0, domain_hi, n_points)
    with np.errstate(over="ignore"):
        vals = np.asarray(g(xs))
    if not np.all(np.isfinite(vals)):
        i = int(np.argmin(np.isfinite(vals)))
        return ValidationReport(False, "non-finite", float(xs[i]))
    for i in range(len(xs)):
        if vals[i] < 0:
            return ValidationReport(False, "negative", float(xs[i]))
        if i and vals[i] < vals[i - 1]:
            return ValidationReport(False, "decreasing", float(xs[i]))
    return ValidationReport(True)


def eval_penalty(g: PenaltyFunction, x):
    return g(x)
