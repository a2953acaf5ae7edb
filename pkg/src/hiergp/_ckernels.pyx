# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Matern-3/2 kernel routines (see :mod:`hiergp._kernels_py`)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

cdef double SQRT3 = 1.7320508075688772


def pairwise_distance(x1, x2):
    cdef double[:, ::1] a = np.ascontiguousarray(x1, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(x2, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, t
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = a[i, k] - b[j, k]
                s += t * t
            o[i, j] = sqrt(s)
    return out


def matern32_from_distance(dist, double amplitude, double lengthscale):
    arr = np.asarray(dist, dtype=np.float64)
    shape = arr.shape
    cdef double[::1] dv = np.ascontiguousarray(arr).ravel()
    cdef Py_ssize_t n = dv.shape[0], i
    cdef double a2 = amplitude * amplitude, scale = SQRT3 / lengthscale, u
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        u = scale * dv[i]
        o[i] = a2 * (1.0 + u) * exp(-u)
    return out.reshape(shape)


def matern32_cross(x1, x2, double amplitude, double lengthscale):
    cdef double[:, ::1] a = np.ascontiguousarray(x1, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(x2, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, t, u
    cdef double a2 = amplitude * amplitude, scale = SQRT3 / lengthscale
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = a[i, k] - b[j, k]
                s += t * t
            u = scale * sqrt(s)
            o[i, j] = a2 * (1.0 + u) * exp(-u)
    return out


def matern32_sym_with_grad(x, double amplitude, double lengthscale):
    cdef double[:, ::1] a = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, t, u, e
    cdef double a2 = amplitude * amplitude, scale = SQRT3 / lengthscale
    K = np.empty((n, n), dtype=np.float64)
    dK = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] kv = K
    cdef double[:, ::1] dv = dK
    for i in range(n):
        kv[i, i] = a2
        dv[i, i] = 0.0
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                t = a[i, k] - a[j, k]
                s += t * t
            u = scale * sqrt(s)
            e = exp(-u)
            kv[i, j] = a2 * (1.0 + u) * e
            kv[j, i] = kv[i, j]
            dv[i, j] = a2 * u * u * e
            dv[j, i] = dv[i, j]
    return K, dK
