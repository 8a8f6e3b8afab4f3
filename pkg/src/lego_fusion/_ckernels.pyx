# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Must agree with ``_pykernels`` (see tests/test_kernels.py)."""

import numpy as np
from libc.math cimport exp, sqrt


def fuse(const double[:, :, ::1] powers_a, const double[:, :, ::1] powers_b,
         const double[:, ::1] weights):
    cdef Py_ssize_t n_p = powers_a.shape[0], n_q = powers_b.shape[0]
    cdef Py_ssize_t rows = powers_a.shape[1], cols = powers_a.shape[2]
    cdef Py_ssize_t p, q, i, j
    cdef double w
    out = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] g = out
    # p-outer, q-inner per element, same association as the numpy path
    for p in range(n_p):
        for q in range(n_q):
            w = weights[p, q]
            for i in range(rows):
                for j in range(cols):
                    g[i, j] = g[i, j] + w * (powers_a[p, i, j] * powers_b[q, i, j])
    return out


def fuse_grad(const double[:, :, ::1] powers_a, const double[:, :, ::1] powers_b,
              const double[:, ::1] upstream):
    cdef Py_ssize_t n_p = powers_a.shape[0], n_q = powers_b.shape[0]
    cdef Py_ssize_t rows = powers_a.shape[1], cols = powers_a.shape[2]
    cdef Py_ssize_t p, q, i, j
    cdef double acc
    out = np.empty((n_p, n_q), dtype=np.float64)
    cdef double[:, ::1] dw = out
    for p in range(n_p):
        for q in range(n_q):
            acc = 0.0
            for i in range(rows):
                for j in range(cols):
                    acc += upstream[i, j] * powers_a[p, i, j] * powers_b[q, i, j]
            dw[p, q] = acc
    return out


def pairwise(const double[:, ::1] x, int kind, double gamma):
    """kind: 0 cosine, 1 clamped cosine, 2 gaussian."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, t
    cdef double acc, diff, s
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] r = out
    norms_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] norms = norms_arr
    for i in range(n):
        acc = 0.0
        for t in range(d):
            acc += x[i, t] * x[i, t]
        norms[i] = sqrt(acc)
    for i in range(n):
        r[i, i] = 1.0
        for j in range(i + 1, n):
            acc = 0.0
            if kind == 2:
                for t in range(d):
                    diff = x[i, t] - x[j, t]
                    acc += diff * diff
                s = exp(-gamma * acc)
            else:
                for t in range(d):
                    acc += x[i, t] * x[j, t]
                s = acc / (norms[i] * norms[j])
                # rounding can push |cos| just past 1
                if s > 1.0:
                    s = 1.0
                elif s < -1.0:
                    s = -1.0
                if kind == 1 and s < 0.0:
                    s = 0.0
            r[i, j] = s
            r[j, i] = s
    return out
