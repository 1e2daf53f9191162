"""Evaluation metrics against hand-derived cases and the independent
set-based references in oracles.py."""

import numpy as np
import pytest

from shgt.errors import DataError
from shgt.metrics import evaluate, format_mean_std, recall_at_k, weighted_f1
from shgt.objectives import sample_negatives

from oracles import set_recall_at_k, set_weighted_f1


def random_instance(rng, patients=None, n_labels=None, ensure_nonempty_rows=False):
    patients = patients or int(rng.integers(2, 9))
    n_labels = n_labels or int(rng.integers(2, 12))
    scores = rng.random((patients, n_labels))
    labels = (rng.random((patients, n_labels)) < 0.4).astype(np.float64)
    if labels.sum() == 0:
        labels[0, 0] = 1.0
    if ensure_nonempty_rows:
        for u in range(patients):
            if labels[u].sum() == 0:
                labels[u, int(rng.integers(n_labels))] = 1.0
    return scores, labels


class TestWeightedF1:
    def test_hand_case_two_thirds(self):
        # Label 0: support 2, predicted perfectly -> F1 = 1.
        # Label 1: support 1, never predicted -> F1 = 0.
        # Weighted: (2*1 + 1*0) / 3 = 2/3.
        scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.3]])
        labels = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
        value, per_label, support = weighted_f1(scores, labels)
        assert value == pytest.approx(2.0 / 3.0)
        assert per_label.tolist() == [1.0, 0.0]
        assert support.tolist() == [2, 1]

    def test_perfect_predictions_score_one(self):
        rng = np.random.default_rng(0)
        labels = (rng.random((6, 5)) < 0.5).astype(np.float64)
        labels[0, 0] = 1.0
        scores = np.where(labels > 0.5, 0.9, 0.1)
        value, _, _ = weighted_f1(scores, labels)
        assert value == 1.0

    def test_all_negative_predictions_score_zero(self):
        labels = np.array([[1.0, 0.0], [0.0, 1.0]])
        scores = np.full((2, 2), 0.1)
        value, _, _ = weighted_f1(scores, labels)
        assert value == 0.0

    def test_threshold_is_inclusive(self):
        scores = np.array([[0.5]])
        labels = np.array([[1.0]])
        value, _, _ = weighted_f1(scores, labels, threshold=0.5)
        assert value == 1.0

    def test_zero_support_everywhere_raises(self):
        with pytest.raises(DataError, match="zero support"):
            weighted_f1(np.array([[0.9]]), np.array([[0.0]]))

    def test_unsupported_labels_excluded_from_average(self):
        # Label 1 has no support but plenty of false positives; it must
        # not dilute the average.
        scores = np.array([[0.9, 0.9], [0.9, 0.9]])
        labels = np.array([[1.0, 0.0], [1.0, 0.0]])
        value, _, _ = weighted_f1(scores, labels)
        assert value == 1.0

    def test_matches_set_oracle_exactly(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            scores, labels = random_instance(rng)
            value, _, _ = weighted_f1(scores, labels, threshold=0.5)
            assert value == set_weighted_f1(scores, labels, 0.5)


class TestRecallAtK:
    def test_hand_case_one_half(self):
        # True {0, 2}; ranking by score: label 2, label 1, label 0.
        # Top-2 = {2, 1} recovers one of two true labels -> 1/2.
        scores = np.array([[0.2, 0.5, 0.9]])
        labels = np.array([[1.0, 0.0, 1.0]])
        assert recall_at_k(scores, labels, 2) == pytest.approx(0.5)

    def test_perfect_shortlist_scores_one(self):
        scores = np.array([[0.9, 0.8, 0.1, 0.1]])
        labels = np.array([[1.0, 1.0, 0.0, 0.0]])
        assert recall_at_k(scores, labels, 2) == 1.0

    def test_ties_break_toward_lower_index(self):
        # All scores equal: top-1 must be label 0.
        scores = np.array([[0.5, 0.5, 0.5]])
        hit = np.array([[1.0, 0.0, 0.0]])
        miss = np.array([[0.0, 0.0, 1.0]])
        assert recall_at_k(scores, hit, 1) == 1.0
        assert recall_at_k(scores, miss, 1) == 0.0

    def test_empty_true_set_raises(self):
        scores = np.array([[0.9, 0.1], [0.5, 0.5]])
        labels = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(DataError, match="empty true label set"):
            recall_at_k(scores, labels, 1)

    def test_capped_denominator_forgives_small_k(self):
        # Three true labels, k=2, both slots correct: capped 1.0,
        # uncapped 2/3.
        scores = np.array([[0.9, 0.8, 0.7, 0.1]])
        labels = np.array([[1.0, 1.0, 1.0, 0.0]])
        assert recall_at_k(scores, labels, 2, capped=True) == 1.0
        assert recall_at_k(scores, labels, 2, capped=False) == pytest.approx(2.0 / 3.0)

    def test_uncapped_recall_monotone_in_k(self):
        # Uncapped recall has a fixed denominator per patient, so a
        # longer shortlist can only add hits. (The capped variant is
        # deliberately not monotone: its denominator grows with k.)
        rng = np.random.default_rng(3)
        scores, labels = random_instance(rng, patients=6, n_labels=10, ensure_nonempty_rows=True)
        values = [recall_at_k(scores, labels, k, capped=False) for k in range(1, 11)]
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert values[-1] == 1.0
        assert recall_at_k(scores, labels, 10, capped=True) == 1.0

    def test_invariant_under_monotone_score_maps(self):
        rng = np.random.default_rng(4)
        scores, labels = random_instance(rng, patients=5, n_labels=8, ensure_nonempty_rows=True)
        base = recall_at_k(scores, labels, 3)
        assert recall_at_k(2.0 * scores + 1.0, labels, 3) == base
        assert recall_at_k(scores**3, labels, 3) == base

    def test_k_beyond_label_count_is_total_recall(self):
        rng = np.random.default_rng(5)
        scores, labels = random_instance(rng, patients=4, n_labels=6, ensure_nonempty_rows=True)
        assert recall_at_k(scores, labels, 50) == 1.0

    def test_matches_set_oracle_exactly(self):
        rng = np.random.default_rng(43)
        for _ in range(100):
            scores, labels = random_instance(rng, ensure_nonempty_rows=True)
            k = int(rng.integers(1, labels.shape[1] + 1))
            capped = bool(rng.integers(2))
            assert recall_at_k(scores, labels, k, capped) == set_recall_at_k(
                scores, labels, k, capped
            )


class TestEvaluate:
    def test_report_fields_and_determinism(self, small_model, backend):
        params = small_model.init_parameters(0)
        rows = np.arange(len(small_model.examples))
        a = evaluate(small_model, params, rows, ks=(5, 10))
        b = evaluate(small_model, params, rows, ks=(5, 10))
        assert a.w_f1 == b.w_f1
        assert a.recall_at == b.recall_at
        assert a.n_patients == rows.size
        assert set(a.recall_at) == {5, 10}
        assert 0.0 <= a.w_f1 <= 1.0
        assert all(0.0 <= v <= 1.0 for v in a.recall_at.values())

    def test_machine_lines_and_table_formats(self, small_model):
        params = small_model.init_parameters(0)
        report = evaluate(small_model, params, np.arange(6), ks=(5,))
        lines = report.machine_lines()
        assert lines[0] == "n_patients = 6"
        assert lines[1] == "threshold = 0.5"
        assert lines[2] == "capped_recall = true"
        assert lines[3].startswith("w_f1 = ")
        assert any(line.startswith("recall@5 = ") for line in lines)
        assert any(line.startswith("f1[0] = ") for line in lines)
        table = report.table()
        assert "w-F1" in table and "R@5" in table

    def test_uncapped_flag_recorded(self, small_model):
        params = small_model.init_parameters(0)
        report = evaluate(small_model, params, np.arange(6), ks=(5,), capped=False)
        assert report.capped_recall is False
        assert "capped_recall = false" in report.machine_lines()
        assert "uncapped" in report.table()


class TestFormatMeanStd:
    def test_percent_scale_sample_std(self):
        assert format_mean_std([0.25, 0.35]) == "30.00 ± 7.07"

    def test_single_value_has_zero_std(self):
        assert format_mean_std([0.5]) == "50.00 ± 0.00"
