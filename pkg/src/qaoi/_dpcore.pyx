# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backward recursion over the remaining-time grid.

Same contract as ``qaoi._dp_fallback.solve_tables``.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs

cnp.import_array()


cdef inline double _tol(double m, double rtol) noexcept nogil:
    cdef double a = fabs(m)
    return rtol * (a if a > 1.0 else 1.0)


def solve_tables(double[::1] prob, double[::1] tail, Py_ssize_t ymin, Py_ssize_t ymax,
                 Py_ssize_t n, Py_ssize_t zmax, double[::1] cost, double rtol):
    cdef Py_ssize_t ny = ymax - ymin + 1
    cdef Py_ssize_t a, y, z, r, zhi, ylo_pos, best_z
    cdef double spos, m, v, cy, p0, fp, lim
    cdef bint skip
    cdef long long evals = 0

    S_arr = np.zeros(n + 1, dtype=np.float64)
    gd_arr = np.full((n + 1, ny), np.nan, dtype=np.float64)
    dec_arr = np.zeros((n + 1, ny), dtype=np.int64)
    buf_arr = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] S = S_arr
    cdef double[:, ::1] gd = gd_arr
    cdef cnp.int64_t[:, ::1] dec = dec_arr
    cdef double[::1] buf = buf_arr

    if cost.shape[0] < n + ymax + 1:
        raise ValueError("cost table too short")
    p0 = prob[0] if ymin == 0 else 0.0
    ylo_pos = ymin if ymin > 0 else 1

    with nogil:
        for a in range(n + 1):
            spos = 0.0
            y = ylo_pos
            while y <= ymax and y <= a:
                spos += prob[y] * gd[a - y, y - ymin]
                y += 1
            zhi = a if a < zmax else zmax
            skip = zmax > a

            if ymin == 0:
                # zero-delay atom: waiting 0 re-enters this state, solved as a fixed point
                cy = cost[a]
                m = INFINITY
                for z in range(1, zhi + 1):
                    r = a - z
                    v = S[r] + cy * tail[r]
                    buf[z] = v
                    if v < m:
                        m = v
                if skip and cy < m:
                    m = cy
                if p0 < 1.0:
                    fp = (spos + cy * tail[a]) / (1.0 - p0)
                else:
                    fp = INFINITY
                if fp < m:
                    m = fp
                lim = m + _tol(m, rtol)
                if skip and cy <= lim:
                    best_z = zmax
                else:
                    best_z = 0
                    z = zhi
                    while z >= 1:
                        if buf[z] <= lim:
                            best_z = z
                            break
                        z -= 1
                gd[a, 0] = m
                dec[a, 0] = best_z
                evals += zhi + 1
                S[a] = spos + p0 * m
            else:
                S[a] = spos

            for y in range(ylo_pos, ymax + 1):
                cy = cost[a + y]
                m = INFINITY
                for z in range(zhi + 1):
                    r = a - z
                    v = S[r] + cy * tail[r]
                    buf[z] = v
                    if v < m:
                        m = v
                if skip and cy < m:
                    m = cy
                lim = m + _tol(m, rtol)
                if skip and cy <= lim:
                    best_z = zmax
                else:
                    best_z = 0
                    z = zhi
                    while z >= 0:
                        if buf[z] <= lim:
                            best_z = z
                            break
                        z -= 1
                gd[a, y - ymin] = m
                dec[a, y - ymin] = best_z
                evals += zhi + 1

    return S_arr, gd_arr, dec_arr, int(evals)
