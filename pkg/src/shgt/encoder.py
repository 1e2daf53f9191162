"""Structure-aware embeddings for codes and visits.

Each code starts from a learned embedding row; each visit embedding is
the mean of its member codes. On top of that, both sides receive a
structural term read off the incidence matrix: codes aggregate a
per-visit weight table over the visits containing them, visits
aggregate a per-code weight table over their members. The fused
embedding is the sum of the content term and the structural term.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError


def xavier_uniform(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass(frozen=True)
class FusedEmbeddings:
    z_v: np.ndarray  # (m, d) code embeddings, content + structural
    z_e: np.ndarray  # (n, d) visit embeddings, content + structural
    x_e: np.ndarray  # (n, d) mean-pooled content term, kept for the backward pass


def _check_shapes(h, x_v, w_v, w_e, structural):
    if x_v.shape[0] != h.num_nodes:
        raise ConfigError(f"x_v has {x_v.shape[0]} rows, hypergraph has {h.num_nodes} codes")
    d = x_v.shape[1]
    if structural:
        if w_v.shape != (h.num_edges, d):
            raise ConfigError(f"w_v shape {w_v.shape}, expected {(h.num_edges, d)}")
        if w_e.shape != (h.num_nodes, d):
            raise ConfigError(f"w_e shape {w_e.shape}, expected {(h.num_nodes, d)}")


def fuse(h, x_v, w_v=None, w_e=None):
    """Fused code/visit embeddings; omit the weight tables to drop the
    structural term (the structure-ablated variant)."""
    structural = w_v is not None
    if structural != (w_e is not None):
        raise ConfigError("w_v and w_e must be supplied together")
    _check_shapes(h, x_v, w_v, w_e, structural)
    x_e = kernels.segment_mean(h.col_indptr, h.col_indices, x_v)
    if structural:
        s_v = kernels.incidence_matmul(h.row_indptr, h.row_indices, w_v)
        s_e = kernels.incidence_matmul(h.col_indptr, h.col_indices, w_e)
        z_v = s_v + x_v
        z_e = s_e + x_e
    else:
        z_v = x_v.copy()
        z_e = x_e.copy()
    return FusedEmbeddings(z_v=z_v, z_e=z_e, x_e=x_e)


def fuse_backward(h, grad_z_v, grad_z_e, structural):
    """Adjoint of `fuse`: gradients for x_v and, when present, the
    structural weight tables.

    The token table receives two contributions: the direct one through
    the code side and the mean-pool one through the visit side.
    """
    grad_x_v = grad_z_v.copy()
    kernels.mean_scatter_adjoint(h.col_indptr, h.col_indices, grad_z_e, grad_x_v)
    if not structural:
        return grad_x_v, None, None
    grad_w_v = kernels.incidence_matmul(h.col_indptr, h.col_indices, grad_z_v)
    grad_w_e = kernels.incidence_matmul(h.row_indptr, h.row_indices, grad_z_e)
    return grad_x_v, grad_w_v, grad_w_e
