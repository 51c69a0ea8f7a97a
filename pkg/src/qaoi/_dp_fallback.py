"""Pure-Python (numpy) backward recursion; reference twin of ``_dpcore``.

``solve_tables`` walks remaining time ``a = 0..n`` upward. With ``S[a]``
the expected penalty collected through deliveries after a request at
remaining time ``a`` and ``tail[a] = Pr(Y > a)``, the delivery-state
value for remaining time ``a`` and age ``y`` is

    min over z in 0..min(a, zmax) of  S[a - z] + cost[a + y] * tail[a - z]

plus the option of never requesting again (``cost[a + y]``) when
``zmax > a``. Ties go to the largest wait; "never" counts as ``zmax``.
"""
from __future__ import annotations

import numpy as np


def solve_tables(prob, tail, ymin, ymax, n, zmax, cost, rtol):
    prob = np.asarray(prob, dtype=float)
    tail = np.asarray(tail, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if cost.shape[0] < n + ymax + 1:
        raise ValueError("cost table too short")
    ny = ymax - ymin + 1
    S = np.zeros(n + 1)
    gd = np.full((n + 1, ny), np.nan)
    dec = np.zeros((n + 1, ny), dtype=np.int64)
    ylo_pos = max(ymin, 1)
    ys = np.arange(ylo_pos, ymax + 1)
    cols = ys - ymin
    p0 = float(prob[0]) if ymin == 0 else 0.0
    evals = 0

    for a in range(n + 1):
        k = ys[ys <= a]
        spos = float(np.dot(prob[k], gd[a - k, k - ymin])) if k.size else 0.0
        zhi = min(a, zmax)
        skip = zmax > a
        r = a - np.arange(zhi + 1)

        if ymin == 0:
            # zero-delay atom: waiting 0 re-enters this state, solved as a fixed point
            ca = cost[a]
            v = S[r[1:]] + ca * tail[r[1:]]
            fp = (spos + ca * tail[a]) / (1.0 - p0) if p0 < 1.0 else np.inf
            m = min(float(v.min()) if v.size else np.inf, ca if skip else np.inf, fp)
            lim = m + rtol * max(1.0, abs(m))
            if skip and ca <= lim:
                z = zmax
            else:
                hits = np.nonzero(v <= lim)[0]
                z = int(hits[-1]) + 1 if hits.size else 0
            gd[a, 0] = m
            dec[a, 0] = z
            S[a] = spos + p0 * m
            evals += zhi + 1
        else:
            S[a] = spos

        if ys.size:
            c = cost[a + ys]
            V = S[r][None, :] + c[:, None] * tail[r][None, :]
            m = V.min(axis=1)
            if skip:
                m = np.minimum(m, c)
            lim = m + rtol * np.maximum(1.0, np.abs(m))
            hit = V <= lim[:, None]
            last = zhi - np.argmax(hit[:, ::-1], axis=1)
            if skip:
                last = np.where(c <= lim, zmax, last)
            gd[a, cols] = m
            dec[a, cols] = last
            evals += ys.size * (zhi + 1)

    return S, gd, dec, int(evals)
