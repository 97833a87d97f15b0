# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: cyclic Jacobi eigensolver and Cholesky filter."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

BACKEND = "compiled"

MAX_SWEEPS = 100
OFFDIAG_TOL = 1e-12


cdef int _jacobi_inplace(double[:, ::1] a, double[:, ::1] v, int n) nogil:
    cdef int p, q, i, sweep
    cdef double apq, theta, t, c, s, scale, tol, off
    cdef double tp, tq

    scale = 1.0
    for p in range(n):
        for q in range(n):
            if fabs(a[p, q]) > scale:
                scale = fabs(a[p, q])
    tol = 1e-12 * scale

    for i in range(n):
        for p in range(n):
            v[i, p] = 0.0
        v[i, i] = 1.0

    for sweep in range(100):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if fabs(apq) <= tol:
                    continue
                if fabs(apq) > off:
                    off = fabs(apq)
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                if theta == 0.0:
                    t = 1.0
                elif theta > 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for i in range(n):
                    tp = a[p, i]
                    tq = a[q, i]
                    a[p, i] = c * tp - s * tq
                    a[q, i] = s * tp + c * tq
                for i in range(n):
                    tp = a[i, p]
                    tq = a[i, q]
                    a[i, p] = c * tp - s * tq
                    a[i, q] = s * tp + c * tq
                for i in range(n):
                    tp = v[i, p]
                    tq = v[i, q]
                    v[i, p] = c * tp - s * tq
                    v[i, q] = s * tp + c * tq
        if off <= tol:
            return 0
    off = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            if fabs(a[p, q]) > off:
                off = fabs(a[p, q])
    return 0 if off <= tol else 1


def jacobi_eigh(a):
    """Batched symmetric eigendecomposition, eigenvalues descending.

    Returns ``(w, q)``; ``(None, None)`` if any matrix fails to converge.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    cdef int n = a.shape[a.ndim - 1]
    squeeze = a.ndim == 2
    flat = a.reshape(-1, n, n).copy()
    cdef Py_ssize_t nbatch = flat.shape[0]
    vs = np.empty_like(flat)
    ws = np.empty((nbatch, n))
    cdef double[:, :, ::1] am = flat
    cdef double[:, :, ::1] vm = vs
    cdef Py_ssize_t b
    cdef int fail = 0
    for b in range(nbatch):
        fail = _jacobi_inplace(am[b], vm[b], n)
        if fail:
            return None, None
        for i in range(n):
            ws[b, i] = flat[b, i, i]
    order = np.argsort(-ws, axis=-1, kind="stable")
    ws = np.take_along_axis(ws, order, axis=-1)
    vs = np.take_along_axis(vs, order[:, None, :], axis=-1)
    if squeeze:
        return ws[0], vs[0]
    return ws.reshape(a.shape[:-1]), vs.reshape(a.shape)


def cholesky_lower(x):
    """Lower-triangular Cholesky factor, or ``None`` when a pivot is <= 0."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef int n = x.shape[0]
    low = np.zeros((n, n))
    cdef double[:, ::1] xm = x
    cdef double[:, ::1] lm = low
    cdef int i, j, k
    cdef double acc
    for j in range(n):
        acc = xm[j, j]
        for k in range(j):
            acc -= lm[j, k] * lm[j, k]
        if acc <= 0.0:
            return None
        lm[j, j] = sqrt(acc)
        for i in range(j + 1, n):
            acc = xm[i, j]
            for k in range(j):
                acc -= lm[i, k] * lm[j, k]
            lm[i, j] = acc / lm[j, j]
    return low
