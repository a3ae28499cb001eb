# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the streaming posterior.

Every function here has a numpy twin in ``_pykernels`` with the same
signature and semantics; ``_backend`` picks one at import time.
"""
import numpy as np

from libc.math cimport exp, sqrt


def rbf_cross(const double[::1] a, const double[::1] b, double length_scale):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    cdef double scale = -0.5 / (length_scale * length_scale)
    cdef double d
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            d = a[i] - b[j]
            o[i, j] = exp(scale * d * d)
    return out


def rbf_gram(const double[::1] a, double length_scale):
    cdef Py_ssize_t n = a.shape[0], i, j
    cdef double scale = -0.5 / (length_scale * length_scale)
    cdef double d, v
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        o[i, i] = 1.0
        for j in range(i):
            d = a[i] - a[j]
            v = exp(scale * d * d)
            o[i, j] = v
            o[j, i] = v
    return out


def chol_append(double[:, ::1] L, Py_ssize_t n, const double[::1] k, double diag):
    """Write row ``n`` of a lower Cholesky factor in place.

    Solves ``L[:n, :n] @ l = k[:n]``, stores ``l`` in ``L[n, :n]`` and
    ``sqrt(diag - l @ l)`` in ``L[n, n]``. Returns the pivot ``diag - l @ l``;
    the diagonal entry is left untouched when the pivot is not positive.
    """
    cdef Py_ssize_t i, j
    cdef double s, acc = 0.0, piv
    for i in range(n):
        s = k[i]
        for j in range(i):
            s -= L[i, j] * L[n, j]
        s /= L[i, i]
        L[n, i] = s
        acc += s * s
    piv = diag - acc
    if piv > 0.0:
        L[n, n] = sqrt(piv)
    return piv


def probe_append(const double[:, ::1] L, Py_ssize_t n, double[:, ::1] V, const double[::1] kp):
    """Write row ``n`` of ``V = L^{-1} K(X, probes)`` in place and return it."""
    cdef Py_ssize_t p = V.shape[1], i, j
    cdef double lij, inv = 1.0 / L[n, n]
    for j in range(p):
        V[n, j] = kp[j]
    for i in range(n):
        lij = L[n, i]
        if lij != 0.0:
            for j in range(p):
                V[n, j] -= lij * V[i, j]
    for j in range(p):
        V[n, j] *= inv
    return np.asarray(V[n])
