"""Classifier scoring: confusion counts, threshold metrics, ROC/AUC, ensembles.

A score at or above the threshold predicts the positive class. Metrics with a
zero denominator are None, never silently zero, so degenerate folds cannot
corrupt averages. The ROC curve is evaluated at every distinct score plus
both endpoints and integrated with the trapezoid rule; with ties grouped this
equals the pairwise probability P(score+ > score-) + 0.5 P(tie).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Model, predict


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float | None
    recall: float | None
    precision: float | None
    f1: float | None
    inverse_precision: float | None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
            "inverse_precision": self.inverse_precision,
        }


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.ndim != 1:
        raise ValueError(f"scores and labels must be rank 1, got {s.shape} and {y.shape}")
    if s.shape != y.shape:
        raise ValueError(f"scores/labels length mismatch: {s.shape[0]} vs {y.shape[0]}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts at one threshold; score == threshold predicts positive."""
    s, y = _check_scores_labels(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(c: ConfusionCounts) -> Metrics:
    """Five threshold metrics; inverse precision mirrors precision over the
    predicted-negative side (share of predicted negatives that are negative)."""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return Metrics(
        accuracy=_ratio(c.tp + c.tn, c.total),
        recall=recall,
        precision=precision,
        f1=f1,
        inverse_precision=_ratio(c.tn, c.tn + c.fn),
    )


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) from (0,0) to (1,1), one point per distinct score."""
    s, y = _check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC requires both classes present")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            tp += int(y_sorted[j])
            fp += int(1 - y_sorted[j])
            j += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def roc_auc(scores, labels) -> tuple[list[tuple[float, float]], float]:
    """ROC points and trapezoid area; raises when only one class appears."""
    points = roc_curve(scores, labels)
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    auc = float(_trapezoid(tpr, fpr))
    return points, auc


@dataclass
class EvalReport:
    """Everything cmd_eval serializes for one scored sample set."""

    threshold: float
    n_samples: int
    counts: ConfusionCounts
    metrics: Metrics
    auc: float | None
    roc: list[tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "n_samples": self.n_samples,
            "counts": self.counts.to_dict(),
            "metrics": self.metrics.to_dict(),
            "auc": self.auc,
            "roc": [[float(a), float(b)] for a, b in self.roc],
        }


def evaluate_scores(scores, labels, threshold: float = 0.5) -> EvalReport:
    """Confusion + metrics at the threshold, plus ROC/AUC when both classes
    are present (AUC is None for a single-class sample set)."""
    s, y = _check_scores_labels(scores, labels)
    c = confusion(s, y, threshold)
    try:
        roc, auc = roc_auc(s, y)
    except ValueError:
        roc, auc = [], None
    return EvalReport(
        threshold=threshold,
        n_samples=int(s.size),
        counts=c,
        metrics=metrics(c),
        auc=auc,
        roc=roc,
    )


def ensemble_predict(models: list[Model], batch, vote_threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Majority vote over per-model thresholded predictions plus mean score.

    Returns (votes, mean_scores); a positive-vote tie breaks positive, the
    same direction as the score-at-threshold rule.
    """
    if not models:
        raise ValueError("ensemble needs at least one model")
    scores = np.stack([predict(m, batch, mode="infer") for m in models])
    votes = (scores >= vote_threshold).sum(axis=0)
    labels = (2 * votes >= len(models)).astype(np.int64)
    return labels, scores.mean(axis=0)


def generalization_gap(train_auc: float, eval_auc: float) -> float:
    """AUC change from training data to unseen data (negative = degradation)."""
    return eval_auc - train_auc


def write_roc_csv(path, roc: list[tuple[float, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in roc:
            fh.write(f"{format(float(fpr), '.9g')},{format(float(tpr), '.9g')}\n")
