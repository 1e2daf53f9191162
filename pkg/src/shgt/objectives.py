"""Training objectives: incidence reconstruction and label prediction.

Both losses are binary cross-entropies evaluated in logit space, which
keeps them finite for any logit value. The reconstruction term scores
sampled (code, visit) pairs against the incidence bit; the
classification term scores each patient's diagnosis vector, normalized
by the number of patients only, so every label contributes at full
weight regardless of label-set size.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_with_logits(x, t):
    # max(x,0) - x*t + log1p(exp(-|x|)) == -[t*log(s(x)) + (1-t)*log(1-s(x))]
    return np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))


@dataclass(frozen=True)
class SamplePairs:
    pos_rows: np.ndarray
    pos_cols: np.ndarray
    neg_rows: np.ndarray
    neg_cols: np.ndarray

    @property
    def total(self):
        return self.pos_rows.size + self.neg_rows.size


def positive_pairs(h):
    deg = np.diff(h.row_indptr)
    rows = np.repeat(np.arange(h.num_nodes, dtype=np.int64), deg)
    return rows, h.row_indices.copy()


def sample_negatives(h, rng):
    """All incidence ones as positives plus an equal number of uniformly
    sampled zeros (capped at the zero count), no duplicates within the
    sample. Resampled every epoch by the caller."""
    pos_rows, pos_cols = positive_pairs(h)
    n = h.num_edges
    total = h.num_nodes * n
    nnz = pos_rows.size
    num_zero = total - nnz
    if num_zero == 0:
        raise DataError("incidence matrix has no zero entries to sample")
    need = min(nnz, num_zero)
    occupied = pos_rows * n + pos_cols
    if nnz * 2 > total:
        # Dense incidence: rejection would thrash, enumerate the zeros.
        mask = np.ones(total, dtype=bool)
        mask[occupied] = False
        chosen = rng.permutation(np.flatnonzero(mask))[:need]
    else:
        taken = set(occupied.tolist())
        picked = []
        while len(picked) < need:
            batch = rng.integers(0, total, size=max(64, 2 * (need - len(picked))))
            for lin in batch.tolist():
                if lin in taken:
                    continue
                taken.add(lin)
                picked.append(lin)
                if len(picked) == need:
                    break
        chosen = np.asarray(picked, dtype=np.int64)
    return SamplePairs(
        pos_rows=pos_rows,
        pos_cols=pos_cols,
        neg_rows=kernels.as_index_array(chosen // n),
        neg_cols=kernels.as_index_array(chosen % n),
    )


def pair_logits(z_v, z_e, pairs):
    """Inner products reconstructing the incidence bit at the sampled
    positions; the sigmoid of these is the reconstructed entry."""
    pos = kernels.pair_dots(z_v, z_e, pairs.pos_rows, pairs.pos_cols)
    neg = kernels.pair_dots(z_v, z_e, pairs.neg_rows, pairs.neg_cols)
    return pos, neg


def reconstruction_loss(pos_logits, neg_logits):
    total = pos_logits.size + neg_logits.size
    loss = bce_with_logits(pos_logits, 1.0).sum() + bce_with_logits(neg_logits, 0.0).sum()
    return loss / total


def reconstruction_backward(z_v, z_e, pairs, pos_logits, neg_logits, scale):
    """Gradients of scale * reconstruction loss w.r.t. both embedding
    matrices, scattered through the sampled pairs."""
    total = pos_logits.size + neg_logits.size
    grad_z_v = np.zeros_like(z_v)
    grad_z_e = np.zeros_like(z_e)
    w_pos = (sigmoid(pos_logits) - 1.0) * (scale / total)
    w_neg = sigmoid(neg_logits) * (scale / total)
    kernels.pair_rank1_update(grad_z_v, grad_z_e, z_v, z_e, pairs.pos_rows, pairs.pos_cols, w_pos)
    kernels.pair_rank1_update(grad_z_v, grad_z_e, z_v, z_e, pairs.neg_rows, pairs.neg_cols, w_neg)
    return grad_z_v, grad_z_e


@dataclass(frozen=True)
class PredictionHead:
    w_p: np.ndarray  # (d, num_labels)
    b_p: np.ndarray  # (num_labels,)


def example_segments(examples, num_edges):
    """Index arrays mapping each example to its (contiguous) input-visit
    edge range, for pooling visit embeddings into patient vectors."""
    indptr = np.zeros(len(examples) + 1, dtype=np.int64)
    cursor = 0
    for i, example in enumerate(examples):
        ids = example.input_visit_edge_ids
        if ids[0] != cursor or ids[-1] != cursor + len(ids) - 1:
            raise DataError(f"example {i} edge ids not contiguous at {cursor}")
        cursor += len(ids)
        indptr[i + 1] = cursor
    if cursor != num_edges:
        raise DataError(f"examples cover {cursor} edges, hypergraph has {num_edges}")
    return indptr, np.arange(num_edges, dtype=np.int64)


def pool_patients(z_e, seg_indptr, seg_indices):
    return kernels.segment_mean(seg_indptr, seg_indices, z_e)


def patient_logits(u, head):
    return u @ head.w_p + head.b_p


def classification_loss(logits, labels):
    if logits.shape != labels.shape:
        raise DataError(f"logits shape {logits.shape} vs labels {labels.shape}")
    return bce_with_logits(logits, labels).sum() / logits.shape[0]


def classification_backward(logits, labels, u, head):
    """Gradients of the classification loss w.r.t. head parameters and
    the pooled patient matrix."""
    grad_logits = (sigmoid(logits) - labels) / logits.shape[0]
    grad_w_p = u.T @ grad_logits
    grad_b_p = grad_logits.sum(axis=0)
    grad_u = grad_logits @ head.w_p.T
    return grad_u, grad_w_p, grad_b_p


@dataclass(frozen=True)
class LossBreakdown:
    classification: float
    reconstruction: float
    total: float
