"""Selects the compiled DP kernel, falling back to numpy.

Set ``QAOI_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _dp_fallback

if os.environ.get("QAOI_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _dpcore as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def solve_tables(prob, tail, ymin, ymax, n, zmax, cost, rtol, backend: str | None = None):
    """Run the backward recursion; returns ``(S, gd, dec, evaluations)``."""
    backend = backend or BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled.solve_tables(prob, tail, int(ymin), int(ymax), int(n), int(zmax), cost, float(rtol))
    if backend == "python":
        return _dp_fallback.solve_tables(prob, tail, ymin, ymax, n, zmax, cost, rtol)
    raise ValueError(f"unknown backend {backend!r}")


def available_backends() -> list[str]:
    return ["compiled", "python"] if _compiled is not None else ["python"]
