"""Metric correctness against brute-force oracles and hand-built fixtures."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darcclip.errors import UndefinedMetricError
from darcclip.metrics import (
    accuracy,
    auroc_binary,
    auroc_macro_ovr,
    confusion_matrix,
    evaluate_predictions,
    macro_f1,
    roc_points,
    roc_points_to_csv,
    trapezoid_area,
)


def pair_counting_auroc(scores, labels):
    """O(n^2) oracle: positive/negative pairs, ties worth one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0

    def test_all_wrong(self):
        assert accuracy([1, 0], [0, 1]) == 0.0

    def test_three_of_four(self):
        assert accuracy([0, 1, 1, 0], [0, 1, 1, 1]) == 0.75

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy([], [])


class TestMacroF1:
    def test_perfect_binary(self):
        assert macro_f1([0, 1, 0, 1], [0, 1, 0, 1], 2) == 1.0

    def test_degenerate_predictor_on_balanced_labels(self):
        # predicting only class 0 on balanced labels: F1_0 = 2/3, F1_1 = 0
        value = macro_f1([0, 0, 0, 0], [0, 0, 1, 1], 2)
        assert value == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_three_class_confusion_fixture(self):
        # confusion [true, pred]:
        #   [[2, 1, 0],
        #    [0, 2, 1],
        #    [1, 0, 1]]
        labels = [0, 0, 0, 1, 1, 1, 2, 2]
        preds = [0, 0, 1, 1, 1, 2, 0, 2]
        cm = confusion_matrix(preds, labels, 3)
        assert cm.tolist() == [[2, 1, 0], [0, 2, 1], [1, 0, 1]]
        # class 0: p=2/3, r=2/3, f1=2/3; class 1: p=2/3, r=2/3, f1=2/3
        # class 2: p=1/2, r=1/2, f1=1/2
        assert macro_f1(preds, labels, 3) == pytest.approx((2 / 3 + 2 / 3 + 1 / 2) / 3, abs=1e-15)

    def test_class_absent_everywhere_counts_zero(self):
        # class 2 never predicted nor labelled -> F1 contribution 0
        value = macro_f1([0, 1], [0, 1], 3)
        assert value == pytest.approx(2.0 / 3.0, abs=1e-15)


class TestAurocBinary:
    def test_perfect_separation(self):
        assert auroc_binary([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auroc_binary([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError, match="both classes"):
            auroc_binary([0.1, 0.9], [1, 1])

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_pair_counting_oracle(self, seed):
        rng = np.random.default_rng(200 + seed)
        n = int(rng.integers(10, 201))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # quantised scores force plenty of ties
        scores = np.round(rng.standard_normal(n) + labels * rng.uniform(0, 2), 1)
        assert auroc_binary(scores, labels) == pair_counting_auroc(scores, labels)

    @settings(max_examples=60, derandomize=True, deadline=None)
    @given(
        st.lists(st.floats(-50, 50, allow_nan=False), min_size=4, max_size=40),
        st.data(),
    )
    def test_invariant_under_increasing_transforms(self, raw_scores, data):
        # quantise so affine shifts cannot merge distinct scores into new ties
        scores = np.round(np.asarray(raw_scores), 3)
        labels = np.asarray(data.draw(st.lists(st.integers(0, 1), min_size=len(raw_scores), max_size=len(raw_scores))))
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = auroc_binary(scores, labels)
        assert auroc_binary(3.0 * scores + 7.0, labels) == pytest.approx(base, abs=1e-12)
        assert auroc_binary(np.tanh(scores / 100.0), labels) == pytest.approx(base, abs=1e-12)

    def test_flip_symmetry_without_ties(self):
        rng = np.random.default_rng(60)
        scores = rng.permutation(np.linspace(0, 1, 20))
        labels = rng.integers(0, 2, size=20)
        labels[0], labels[1] = 0, 1
        assert auroc_binary(scores, labels) + auroc_binary(-scores, labels) == pytest.approx(1.0, abs=1e-12)


class TestAurocMacroOvr:
    def test_one_hot_correct(self):
        probs = np.eye(3)[[0, 1, 2, 0]]
        assert auroc_macro_ovr(probs, [0, 1, 2, 0], 3) == 1.0

    def test_uniform_probabilities(self):
        probs = np.full((6, 3), 1 / 3)
        assert auroc_macro_ovr(probs, [0, 1, 2, 0, 1, 2], 3) == 0.5

    def test_matches_per_class_pair_counting(self):
        rng = np.random.default_rng(61)
        labels = rng.integers(0, 3, size=60)
        labels[:3] = [0, 1, 2]
        logits = rng.standard_normal((60, 3)) + np.eye(3)[labels]
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        expected = np.mean([pair_counting_auroc(probs[:, c], (labels == c).astype(int)) for c in range(3)])
        assert auroc_macro_ovr(probs, labels, 3) == pytest.approx(expected, abs=1e-15)

    def test_missing_class_listed_in_error(self):
        probs = np.full((4, 3), 1 / 3)
        with pytest.raises(UndefinedMetricError, match=r"\[2\]"):
            auroc_macro_ovr(probs, [0, 1, 0, 1], 3)


class TestRocPoints:
    def test_one_positive_above_one_negative(self):
        points = roc_points([0.9, 0.1], [1, 0])
        assert [(p[0], p[1]) for p in points] == [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        assert points[0][2] == float("inf")

    def test_tied_scores_collapse_to_diagonal_segment(self):
        points = roc_points([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1])
        assert [(p[0], p[1]) for p in points] == [(0.0, 0.0), (1.0, 1.0)]

    def test_monotone_and_anchored(self):
        rng = np.random.default_rng(62)
        scores = np.round(rng.standard_normal(50), 1)
        labels = rng.integers(0, 2, size=50)
        labels[:2] = [0, 1]
        points = roc_points(scores, labels)
        fpr = [p[0] for p in points]
        tpr = [p[1] for p in points]
        thresholds = [p[2] for p in points]
        assert fpr[0] == tpr[0] == 0.0
        assert fpr[-1] == tpr[-1] == 1.0
        assert all(a <= b for a, b in zip(fpr, fpr[1:]))
        assert all(a <= b for a, b in zip(tpr, tpr[1:]))
        assert all(a > b for a, b in zip(thresholds, thresholds[1:]))

    @pytest.mark.parametrize("seed", range(20))
    def test_trapezoid_area_equals_rank_auroc(self, seed):
        rng = np.random.default_rng(300 + seed)
        n = int(rng.integers(10, 120))
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = np.round(rng.standard_normal(n) + 0.7 * labels, 1)
        area = trapezoid_area(roc_points(scores, labels))
        assert abs(area - auroc_binary(scores, labels)) <= 1e-12

    def test_csv_export_format(self):
        csv = roc_points_to_csv(roc_points([0.9, 0.1], [1, 0]))
        lines = csv.strip().splitlines()
        assert lines[0] == "threshold,fpr,tpr"
        assert lines[1].startswith("inf,0,0")
        assert len(lines) == 4


class TestEvalReport:
    def test_balanced_diagonal_confusion_matches_accuracy(self):
        probs = np.eye(2)[[0, 1, 0, 1]] * 0.8 + 0.1
        report = evaluate_predictions([0, 1, 0, 1], probs, 2)
        assert report.accuracy == report.macro_f1 == 1.0

    def test_json_keys_fixed(self):
        probs = np.array([[0.7, 0.3], [0.2, 0.8], [0.6, 0.4], [0.1, 0.9]])
        report = evaluate_predictions([0, 1, 1, 1], probs, 2)
        payload = report.to_dict()
        assert list(payload) == ["accuracy", "macro_f1", "auroc", "confusion", "per_class"]
        assert np.asarray(payload["confusion"]).sum() == 4

    def test_multiclass_roc_export_rejected(self):
        probs = np.full((6, 3), 1 / 3)
        with pytest.raises(UndefinedMetricError, match="binary"):
            evaluate_predictions([0, 1, 2, 0, 1, 2], probs, 3, include_roc=True)

    def test_binary_roc_attached(self):
        probs = np.array([[0.7, 0.3], [0.2, 0.8], [0.6, 0.4], [0.1, 0.9]])
        report = evaluate_predictions([0, 1, 0, 1], probs, 2, include_roc=True)
        assert abs(trapezoid_area(report.roc) - report.auroc) <= 1e-12
