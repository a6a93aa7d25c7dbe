"""Classification metrics for imbalanced tasks: accuracy, macro-F1, AUROC.

AUROC uses the rank statistic (tied scores counted half), which equals the
trapezoidal area under the exact ROC curve; multiclass AUROC is the
unweighted mean of one-vs-rest binary AUROCs. Per-class F1 falls back to 0
whenever precision + recall is 0, including classes absent from both the
predictions and the labels.

All functions are pure and deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError


def _as_int_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D sequence, got shape {arr.shape}")
    return arr.astype(np.int64)


def accuracy(preds, labels) -> float:
    """Fraction of exactly matching predictions."""
    preds = _as_int_array(preds, "preds")
    labels = _as_int_array(labels, "labels")
    if preds.shape != labels.shape:
        raise ValueError(f"preds and labels lengths disagree: {preds.size} vs {labels.size}")
    return float(np.mean(preds == labels))


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    """Counts indexed [true, predicted]."""
    preds = _as_int_array(preds, "preds")
    labels = _as_int_array(labels, "labels")
    if preds.shape != labels.shape:
        raise ValueError(f"preds and labels lengths disagree: {preds.size} vs {labels.size}")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"{name} contain values outside [0, {n_classes})")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (labels, preds), 1)
    return matrix


def per_class_scores(confusion: np.ndarray) -> list[dict]:
    """Precision/recall/F1/support per class from a confusion matrix."""
    out = []
    for c in range(confusion.shape[0]):
        tp = float(confusion[c, c])
        pred_c = float(confusion[:, c].sum())
        true_c = float(confusion[c, :].sum())
        precision = tp / pred_c if pred_c > 0 else 0.0
        recall = tp / true_c if true_c > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        out.append(
            {"class": c, "precision": precision, "recall": recall, "f1": f1, "support": int(true_c)}
        )
    return out


def macro_f1(preds, labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1 scores."""
    scores = per_class_scores(confusion_matrix(preds, labels, n_classes))
    return float(np.mean([s["f1"] for s in scores]))


def _midranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values assigned their average rank."""
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j < scores.size and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def auroc_binary(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _as_int_array(labels, "labels")
    if scores.shape != labels.shape:
        raise ValueError(f"scores and labels lengths disagree: {scores.size} vs {labels.size}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0 or 1 for binary AUROC")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC undefined: need both classes, got {n_pos} positives and {n_neg} negatives"
        )
    ranks = _midranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auroc_macro_ovr(probabilities, labels, n_classes: int) -> float:
    """Unweighted mean of one-vs-rest AUROCs, scored by per-class probability."""
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = _as_int_array(labels, "labels")
    if probs.shape != (labels.size, n_classes):
        raise ValueError(f"probabilities must have shape ({labels.size}, {n_classes}), got {probs.shape}")
    missing = [c for c in range(n_classes) if not np.any(labels == c)]
    if missing:
        raise UndefinedMetricError(f"AUROC undefined: classes {missing} absent from labels")
    per_class = [auroc_binary(probs[:, c], (labels == c).astype(np.int64)) for c in range(n_classes)]
    return float(np.mean(per_class))


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """ROC polyline as (fpr, tpr, threshold), one point per distinct threshold.

    Thresholds descend from +inf (the (0, 0) corner); a prediction is
    positive when its score is >= the threshold, so the final point is
    always (1, 1). Both coordinates are monotone nondecreasing and the
    trapezoidal area under the points equals :func:`auroc_binary`.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _as_int_array(labels, "labels")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"ROC undefined: need both classes, got {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    while i < scores.size:
        j = i
        while j < scores.size and sorted_scores[j] == sorted_scores[i]:
            j += 1
        tp += int(np.sum(sorted_labels[i:j] == 1))
        fp += int(np.sum(sorted_labels[i:j] == 0))
        points.append((fp / n_neg, tp / n_pos, float(sorted_scores[i])))
        i = j
    return points


def trapezoid_area(points) -> float:
    """Area under an ROC polyline of (fpr, tpr, threshold) points."""
    area = 0.0
    for (x0, y0, _), (x1, y1, _) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def roc_points_to_csv(points) -> str:
    """CSV rows "threshold,fpr,tpr" with 17 significant digits."""
    lines = ["threshold,fpr,tpr"]
    for fpr, tpr, threshold in points:
        lines.append(f"{threshold:.17g},{fpr:.17g},{tpr:.17g}")
    return "\n".join(lines) + "\n"


@dataclass
class EvalReport:
    """Metrics of one task evaluation."""

    accuracy: float
    macro_f1: float
    auroc: float
    confusion: np.ndarray
    per_class: list[dict]
    roc: list[tuple[float, float, float]] | None = field(default=None)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "auroc": self.auroc,
            "confusion": self.confusion.tolist(),
            "per_class": self.per_class,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate_predictions(labels, probabilities, n_classes: int, include_roc: bool = False) -> EvalReport:
    """Score argmax predictions and probability-based AUROC for one task.

    Binary tasks use the class-1 probability as the ranking score; tasks
    with more classes use macro one-vs-rest AUROC. `include_roc` attaches
    the ROC polyline (binary tasks only).
    """
    labels = _as_int_array(labels, "labels")
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.shape != (labels.size, n_classes):
        raise ValueError(f"probabilities must have shape ({labels.size}, {n_classes}), got {probs.shape}")
    preds = probs.argmax(axis=1)
    confusion = confusion_matrix(preds, labels, n_classes)
    scores = per_class_scores(confusion)
    if n_classes == 2:
        auc = auroc_binary(probs[:, 1], labels)
        roc = roc_points(probs[:, 1], labels) if include_roc else None
    else:
        auc = auroc_macro_ovr(probs, labels, n_classes)
        if include_roc:
            raise UndefinedMetricError("ROC polyline export is binary-only; use per-class one-vs-rest scores")
        roc = None
    return EvalReport(
        accuracy=float(np.mean(preds == labels)),
        macro_f1=float(np.mean([s["f1"] for s in scores])),
        auroc=auc,
        confusion=confusion,
        per_class=scores,
        roc=roc,
    )
