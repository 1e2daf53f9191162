# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment/scatter kernels.

Semantics mirror shgt.kernels._fallback exactly; see that module for the
segment conventions. Typed memoryviews only — no numpy C API — so the
build needs nothing beyond a C compiler.
"""

import numpy as np

name = "compiled"


def incidence_matmul(indptr, indices, x):
    cdef const long long[::1] ip = indptr
    cdef const long long[::1] ix = indices
    cdef const double[:, ::1] xv = x
    cdef Py_ssize_t nseg = ip.shape[0] - 1
    cdef Py_ssize_t d = xv.shape[1]
    out_arr = np.zeros((nseg, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t s, k, j, r
    for s in range(nseg):
        for k in range(ip[s], ip[s + 1]):
            r = ix[k]
            for j in range(d):
                out[s, j] += xv[r, j]
    return out_arr


def segment_mean(indptr, indices, x):
    cdef const long long[::1] ip = indptr
    cdef const long long[::1] ix = indices
    cdef const double[:, ::1] xv = x
    cdef Py_ssize_t nseg = ip.shape[0] - 1
    cdef Py_ssize_t d = xv.shape[1]
    out_arr = np.zeros((nseg, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t s, k, j, r
    cdef long long cnt
    cdef double inv
    for s in range(nseg):
        cnt = ip[s + 1] - ip[s]
        if cnt == 0:
            raise ValueError("segment_mean: empty segment")
        for k in range(ip[s], ip[s + 1]):
            r = ix[k]
            for j in range(d):
                out[s, j] += xv[r, j]
        inv = 1.0 / cnt
        for j in range(d):
            out[s, j] *= inv
    return out_arr


def mean_scatter_adjoint(indptr, indices, grad_out, accum):
    cdef const long long[::1] ip = indptr
    cdef const long long[::1] ix = indices
    cdef const double[:, ::1] g = grad_out
    cdef double[:, ::1] acc = accum
    cdef Py_ssize_t nseg = ip.shape[0] - 1
    cdef Py_ssize_t d = g.shape[1]
    cdef Py_ssize_t s, k, j, r
    cdef long long cnt
    cdef double inv
    for s in range(nseg):
        cnt = ip[s + 1] - ip[s]
        if cnt == 0:
            raise ValueError("mean_scatter_adjoint: empty segment")
        inv = 1.0 / cnt
        for k in range(ip[s], ip[s + 1]):
            r = ix[k]
            for j in range(d):
                acc[r, j] += g[s, j] * inv


def pair_dots(a, b, rows, cols):
    cdef const double[:, ::1] av = a
    cdef const double[:, ::1] bv = b
    cdef const long long[::1] rw = rows
    cdef const long long[::1] cl = cols
    cdef Py_ssize_t npair = rw.shape[0]
    cdef Py_ssize_t d = av.shape[1]
    out_arr = np.empty(npair, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, j, i, c
    cdef double acc
    for p in range(npair):
        i = rw[p]
        c = cl[p]
        acc = 0.0
        for j in range(d):
            acc += av[i, j] * bv[c, j]
        out[p] = acc
    return out_arr


def pair_rank1_update(grad_a, grad_b, a, b, rows, cols, w):
    cdef double[:, ::1] ga = grad_a
    cdef double[:, ::1] gb = grad_b
    cdef const double[:, ::1] av = a
    cdef const double[:, ::1] bv = b
    cdef const long long[::1] rw = rows
    cdef const long long[::1] cl = cols
    cdef const double[::1] wv = w
    cdef Py_ssize_t npair = rw.shape[0]
    cdef Py_ssize_t d = av.shape[1]
    cdef Py_ssize_t p, j, i, c
    cdef double wp
    for p in range(npair):
        i = rw[p]
        c = cl[p]
        wp = wv[p]
        for j in range(d):
            ga[i, j] += wp * bv[c, j]
            gb[c, j] += wp * av[i, j]
