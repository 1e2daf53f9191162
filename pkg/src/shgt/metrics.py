"""Evaluation metrics: weighted F1 and top-k recall.

Both metrics are deterministic: thresholding uses >=, and rankings
break score ties toward the lower label index. Top-k recall divides by
min(k, |true set|) by default so a perfect shortlist scores 1 even for
patients with more true labels than k; the uncapped |true| denominator
is available behind a flag and every report records which one was used.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class EvalReport:
    w_f1: float
    recall_at: dict  # k -> scalar
    per_label_f1: np.ndarray
    support: np.ndarray
    threshold: float
    capped_recall: bool
    n_patients: int

    def machine_lines(self):
        lines = [
            f"n_patients = {self.n_patients}",
            f"threshold = {self.threshold}",
            f"capped_recall = {str(self.capped_recall).lower()}",
            f"w_f1 = {self.w_f1:.6f}",
        ]
        for k in sorted(self.recall_at):
            lines.append(f"recall@{k} = {self.recall_at[k]:.6f}")
        for j, (f1, sup) in enumerate(zip(self.per_label_f1, self.support)):
            lines.append(f"f1[{j}] = {f1:.6f}")
            lines.append(f"support[{j}] = {int(sup)}")
        return lines

    def table(self):
        rows = [("w-F1", self.w_f1)] + [
            (f"R@{k}", self.recall_at[k]) for k in sorted(self.recall_at)
        ]
        width = max(len(name) for name, _ in rows)
        body = "\n".join(f"  {name:<{width}}  {100 * value:6.2f}" for name, value in rows)
        suffix = "capped" if self.capped_recall else "uncapped"
        return (
            f"patients: {self.n_patients}  threshold: {self.threshold}  recall: {suffix}\n"
            f"{body}"
        )


def _check_shapes(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise DataError(f"scores shape {scores.shape} vs labels {labels.shape}")
    return scores, labels


def weighted_f1(scores, labels, threshold=0.5):
    """Support-weighted mean of per-label F1 after thresholding at >=.

    Labels never observed in `labels` are excluded from the average;
    if no label has support the metric is undefined and raises.
    """
    scores, labels = _check_shapes(scores, labels)
    predicted = scores >= threshold
    actual = labels > 0.5
    tp = (predicted & actual).sum(axis=0).astype(np.float64)
    fp = (predicted & ~actual).sum(axis=0).astype(np.float64)
    fn = (~predicted & actual).sum(axis=0).astype(np.float64)
    denom = 2 * tp + fp + fn
    per_label = np.divide(2 * tp, denom, out=np.zeros_like(denom), where=denom > 0)
    support = actual.sum(axis=0)
    if support.sum() == 0:
        raise DataError("weighted F1 undefined: every label has zero support")
    mask = support > 0
    # fsum keeps the weighted mean correctly rounded, so any faithful
    # reimplementation of the formula lands on the identical float.
    value = math.fsum(per_label[mask] * support[mask]) / support[mask].sum()
    return float(value), per_label, support


def recall_at_k(scores, labels, k, capped=True):
    """Mean per-patient top-k recall, ties broken toward lower index."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    scores, labels = _check_shapes(scores, labels)
    actual = labels > 0.5
    true_counts = actual.sum(axis=1)
    if (true_counts == 0).any():
        raise DataError("patient with empty true label set")
    order = np.argsort(-scores, axis=1, kind="stable")
    top = order[:, :k]
    hits = np.take_along_axis(actual, top, axis=1).sum(axis=1)
    denom = np.minimum(k, true_counts) if capped else true_counts
    return math.fsum(hits / denom) / true_counts.size


def evaluate(model, params, rows, ks=(10, 20), threshold=0.5, capped=True):
    """Score the model on the given patient rows in evaluation mode."""
    rows = np.asarray(rows, dtype=np.int64)
    scores = model.predict_proba(params, rows)
    labels = model.labels[rows]
    w_f1, per_label, support = weighted_f1(scores, labels, threshold)
    recalls = {int(k): recall_at_k(scores, labels, int(k), capped) for k in ks}
    return EvalReport(
        w_f1=w_f1,
        recall_at=recalls,
        per_label_f1=per_label,
        support=support,
        threshold=threshold,
        capped_recall=capped,
        n_patients=rows.size,
    )


def format_mean_std(values):
    """Percent-scale `mean ± std` with sample std (two decimals)."""
    values = np.asarray(values, dtype=np.float64)
    mean = 100 * values.mean()
    std = 100 * values.std(ddof=1) if values.size > 1 else 0.0
    return f"{mean:.2f} ± {std:.2f}"
