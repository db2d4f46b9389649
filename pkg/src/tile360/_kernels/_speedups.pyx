# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled speedup kernels; see _pure.py for the reference semantics."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

BACKEND = "compiled"


def grid_sin_lat_extremes(center, ex, ey, double half_a, double half_b, Py_ssize_t n):
    cdef double cx = center[0], cy = center[1], cz = center[2]
    cdef double rx = ex[0], ry = ex[1], rz = ex[2]
    cdef double ux = ey[0], uy = ey[1], uz = ey[2]
    cdef double step_a = 2.0 * half_a / (n - 1) if n > 1 else 0.0
    cdef double step_b = 2.0 * half_b / (n - 1) if n > 1 else 0.0
    cdef double lo = 2.0, hi = -2.0
    cdef double a, b, x, y, z, bx, by, bz, ratio
    cdef Py_ssize_t i, j
    for i in range(n):
        a = -half_a + step_a * i
        bx = cx + a * rx
        by = cy + a * ry
        bz = cz + a * rz
        for j in range(n):
            b = -half_b + step_b * j
            x = bx + b * ux
            y = by + b * uy
            z = bz + b * uz
            ratio = y / sqrt(x * x + y * y + z * z)
            if ratio < lo:
                lo = ratio
            if ratio > hi:
                hi = ratio
    return lo, hi


def conv1d_forward(cnp.ndarray[cnp.float64_t, ndim=3] x,
                   cnp.ndarray[cnp.float64_t, ndim=3] w,
                   cnp.ndarray[cnp.float64_t, ndim=1] b):
    cdef Py_ssize_t nb = x.shape[0], ci = x.shape[1], lin = x.shape[2]
    cdef Py_ssize_t co = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t lout = lin - k + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((nb, co, lout))
    cdef double acc
    cdef Py_ssize_t ib, io, ii, t, dk
    for ib in range(nb):
        for io in range(co):
            for t in range(lout):
                acc = b[io]
                for ii in range(ci):
                    for dk in range(k):
                        acc += w[io, ii, dk] * x[ib, ii, t + dk]
                out[ib, io, t] = acc
    return out


def conv1d_backward(cnp.ndarray[cnp.float64_t, ndim=3] x,
                    cnp.ndarray[cnp.float64_t, ndim=3] w,
                    cnp.ndarray[cnp.float64_t, ndim=3] grad_out):
    cdef Py_ssize_t nb = x.shape[0], ci = x.shape[1], lin = x.shape[2]
    cdef Py_ssize_t co = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t lout = lin - k + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] gx = np.zeros((nb, ci, lin))
    cdef cnp.ndarray[cnp.float64_t, ndim=3] gw = np.zeros((co, ci, k))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gb = np.zeros(co)
    cdef double g
    cdef Py_ssize_t ib, io, ii, t, dk
    for ib in range(nb):
        for io in range(co):
            for t in range(lout):
                g = grad_out[ib, io, t]
                gb[io] += g
                for ii in range(ci):
                    for dk in range(k):
                        gw[io, ii, dk] += g * x[ib, ii, t + dk]
                        gx[ib, ii, t + dk] += g * w[io, ii, dk]
    return gx, gw, gb
