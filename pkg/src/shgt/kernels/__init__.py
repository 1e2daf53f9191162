"""Kernel backend dispatch.

Two interchangeable backends implement the hot segment/scatter/pair
operations: a Cython extension (`shgt.kernels._compiled`) and a
pure-numpy fallback (`shgt.kernels._fallback`). The compiled backend is
selected at import when present; `SHGT_KERNELS=fallback|compiled|auto`
overrides, and `use_backend()` switches at runtime (mainly for tests and
benchmarks).

All public kernels take C-contiguous float64 matrices and int64 index
arrays; `as_index_array` is the canonical coercion for the latter.
"""

import os

import numpy as np

from . import _fallback

try:
    from . import _compiled
except ImportError:
    _compiled = None

HAVE_COMPILED = _compiled is not None


def _choose_initial():
    requested = os.environ.get("SHGT_KERNELS", "auto")
    if requested not in ("auto", "fallback", "compiled"):
        raise ValueError(f"SHGT_KERNELS must be auto|fallback|compiled, got {requested!r}")
    if requested == "fallback":
        return _fallback
    if requested == "compiled":
        if not HAVE_COMPILED:
            raise ImportError("SHGT_KERNELS=compiled but shgt.kernels._compiled is not built")
        return _compiled
    return _compiled if HAVE_COMPILED else _fallback


_impl = _choose_initial()


def backend_name():
    return _impl.name


def available_backends():
    return ("fallback", "compiled") if HAVE_COMPILED else ("fallback",)


def use_backend(name):
    """Switch the active backend; returns the previously active name."""
    global _impl
    previous = _impl.name
    if name == "fallback":
        _impl = _fallback
    elif name == "compiled":
        if not HAVE_COMPILED:
            raise ValueError("compiled kernel backend is not built")
        _impl = _compiled
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return previous


def as_index_array(values):
    """Coerce to the int64 contiguous layout the kernels expect."""
    return np.ascontiguousarray(values, dtype=np.int64)


def incidence_matmul(indptr, indices, x):
    return _impl.incidence_matmul(indptr, indices, x)


def segment_mean(indptr, indices, x):
    return _impl.segment_mean(indptr, indices, x)


def mean_scatter_adjoint(indptr, indices, grad_out, accum):
    _impl.mean_scatter_adjoint(indptr, indices, grad_out, accum)


def pair_dots(a, b, rows, cols):
    return _impl.pair_dots(a, b, rows, cols)


def pair_rank1_update(grad_a, grad_b, a, b, rows, cols, w):
    _impl.pair_rank1_update(grad_a, grad_b, a, b, rows, cols, w)
