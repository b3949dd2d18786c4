# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a numpy twin in :mod:`contactfield._fallback` with
the same signature and semantics; :mod:`contactfield._backend` picks one.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

cdef double SQRT3 = 1.7320508075688772


cdef inline void _cone_project(const double* v, const double* n, double* out) noexcept nogil:
    cdef double a = v[0] * n[0] + v[1] * n[1] + v[2] * n[2]
    cdef double t0 = v[0] - a * n[0]
    cdef double t1 = v[1] - a * n[1]
    cdef double t2 = v[2] - a * n[2]
    cdef double b = sqrt(t0 * t0 + t1 * t1 + t2 * t2)
    cdef double astar, s
    if b <= SQRT3 * a:
        out[0] = v[0]
        out[1] = v[1]
        out[2] = v[2]
    elif b <= -a / SQRT3:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
    else:
        astar = (a + SQRT3 * b) / 4.0
        s = SQRT3 * astar / b
        out[0] = astar * n[0] + s * t0
        out[1] = astar * n[1] + s * t1
        out[2] = astar * n[2] + s * t2


def cone_project_batch(const double[:, ::1] v, const double[:, ::1] normals):
    """Project each row of ``v`` onto the 60 degree cone around the matching normal."""
    cdef Py_ssize_t n = v.shape[0], i
    out = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            _cone_project(&v[i, 0], &normals[i, 0], &o[i, 0])
    return out


def admm_run(const double[:, ::1] minv, const double[::1] q, const double[:, ::1] normals,
             double[::1] x, double[::1] z, double[::1] u,
             double rho, double alpha, int max_iter, double tol_primal, double tol_dual):
    """Run up to ``max_iter`` ADMM sweeps in place on ``x``, ``z``, ``u``.

    ``minv`` is the inverse of the f-update system matrix for the current
    ``rho``. Returns ``(iterations, primal_residual, dual_residual)``.
    """
    cdef Py_ssize_t m = q.shape[0], nc = normals.shape[0]
    cdef Py_ssize_t i, j, k
    cdef int it = 0
    cdef double acc, rp = INFINITY, rd = INFINITY, d
    cdef double[::1] rhs = np.empty(m)
    cdef double[::1] zold = np.empty(m)
    cdef double[::1] w = np.empty(m)
    cdef double[3] tmp
    with nogil:
        while it < max_iter:
            for i in range(m):
                rhs[i] = q[i] + rho * (z[i] - u[i])
                zold[i] = z[i]
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc = acc + minv[i, j] * rhs[j]
                x[i] = acc
            for i in range(m):
                # over-relaxed point, then shifted by the scaled dual
                w[i] = alpha * x[i] + (1.0 - alpha) * zold[i] + u[i]
            for k in range(nc):
                _cone_project(&w[3 * k], &normals[k, 0], tmp)
                z[3 * k] = tmp[0]
                z[3 * k + 1] = tmp[1]
                z[3 * k + 2] = tmp[2]
            rp = 0.0
            rd = 0.0
            for i in range(m):
                u[i] = w[i] - z[i]
                d = x[i] - z[i]
                rp = rp + d * d
                d = z[i] - zold[i]
                rd = rd + d * d
            rp = sqrt(rp)
            rd = rho * sqrt(rd)
            it += 1
            if rp < tol_primal and rd < tol_dual:
                break
    return it, rp, rd


def farthest_point_sample(const double[:, ::1] points, Py_ssize_t k, Py_ssize_t start):
    """Greedy farthest-point ordering of ``k`` indices beginning at ``start``."""
    cdef Py_ssize_t n = points.shape[0], i, s, best
    cdef double dx, dy, dz, d, bestd
    idx = np.empty(k, dtype=np.intp)
    cdef Py_ssize_t[::1] out = idx
    cdef double[::1] mind = np.full(n, INFINITY)
    if k == 0:
        return idx
    with nogil:
        best = start
        for s in range(k):
            out[s] = best
            bestd = -1.0
            for i in range(n):
                dx = points[i, 0] - points[out[s], 0]
                dy = points[i, 1] - points[out[s], 1]
                dz = points[i, 2] - points[out[s], 2]
                d = dx * dx + dy * dy + dz * dz
                if d < mind[i]:
                    mind[i] = d
            best = 0
            for i in range(n):
                if mind[i] > bestd:
                    bestd = mind[i]
                    best = i
    return idx


def kernel_weighted_mean(const double[:, ::1] points, const double[:, ::1] cpos,
                         const double[:, ::1] cvec, double lam):
    """Inverse-square kernel mean of ``cvec`` at every point.

    Returns ``(mean, weight_sum)``; rows whose weight sum underflows get zero.
    """
    cdef Py_ssize_t n = points.shape[0], nj = cpos.shape[0], i, j
    cdef double dx, dy, dz, r2, wgt, sw, s0, s1, s2
    mean = np.zeros((n, 3), dtype=np.float64)
    wsum = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] mo = mean
    cdef double[::1] wo = wsum
    with nogil:
        for i in range(n):
            sw = 0.0
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            for j in range(nj):
                dx = cpos[j, 0] - points[i, 0]
                dy = cpos[j, 1] - points[i, 1]
                dz = cpos[j, 2] - points[i, 2]
                r2 = dx * dx + dy * dy + dz * dz
                wgt = 1.0 / (1.0 + lam * lam * r2)
                sw = sw + wgt
                s0 = s0 + wgt * cvec[j, 0]
                s1 = s1 + wgt * cvec[j, 1]
                s2 = s2 + wgt * cvec[j, 2]
            wo[i] = sw
            if sw >= 1e-12:
                mo[i, 0] = s0 / sw
                mo[i, 1] = s1 / sw
                mo[i, 2] = s2 / sw
    return mean, wsum
