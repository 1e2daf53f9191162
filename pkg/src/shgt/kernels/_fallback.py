"""Pure-numpy kernel implementations.

Reference semantics for the compiled extension: every function here must
agree with its Cython twin to floating-point noise. The scatter-style
ops lean on `np.add.at`, which is correct but slow — that gap is the
reason the compiled backend exists (see benchmarks/bench_kernels.py).

Segment conventions: `indptr` is a (S+1,) int64 array and `indices` a
(nnz,) int64 array; segment s owns `indices[indptr[s]:indptr[s+1]]`,
each entry a row index into the dense operand.
"""

import numpy as np

name = "fallback"


def incidence_matmul(indptr, indices, x):
    """out[s] = sum of x[i] over the rows i listed in segment s.

    With segments = incidence rows this is H @ x; with segments =
    incidence columns it is H.T @ x.
    """
    nseg = indptr.shape[0] - 1
    out = np.zeros((nseg, x.shape[1]), dtype=np.float64)
    counts = np.diff(indptr)
    seg = np.repeat(np.arange(nseg), counts)
    np.add.at(out, seg, x[indices])
    return out


def segment_mean(indptr, indices, x):
    """out[s] = mean of x[i] over segment s. Segments must be non-empty."""
    counts = np.diff(indptr)
    if np.any(counts == 0):
        raise ValueError("segment_mean: empty segment")
    return incidence_matmul(indptr, indices, x) / counts[:, None]


def mean_scatter_adjoint(indptr, indices, grad_out, accum):
    """Adjoint of segment_mean: accum[i] += grad_out[s] / |segment s| for i in s."""
    counts = np.diff(indptr)
    if np.any(counts == 0):
        raise ValueError("mean_scatter_adjoint: empty segment")
    scaled = grad_out / counts[:, None]
    seg = np.repeat(np.arange(indptr.shape[0] - 1), counts)
    np.add.at(accum, indices, scaled[seg])


def pair_dots(a, b, rows, cols):
    """r[p] = <a[rows[p]], b[cols[p]]>."""
    return np.einsum("pd,pd->p", a[rows], b[cols])


def pair_rank1_update(grad_a, grad_b, a, b, rows, cols, w):
    """grad_a[rows[p]] += w[p] * b[cols[p]]; grad_b[cols[p]] += w[p] * a[rows[p]].

    Duplicate indices accumulate (hence ufunc.at rather than fancy
    assignment).
    """
    np.add.at(grad_a, rows, w[:, None] * b[cols])
    np.add.at(grad_b, cols, w[:, None] * a[rows])
