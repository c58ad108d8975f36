"""Evaluation metrics for per-minute rare-event predictions.

Label-dependent metrics (ROC-AUC, average precision, sensitivity) use only
minutes with mask 1; alarm accounting covers every monitored minute by
default because an alarm fires regardless of label availability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Metric undefined for this input (single class, empty set, ...)."""


@dataclass
class PredictionSet:
    """Parallel per-minute vectors for a set of scored surgeries."""

    scores: np.ndarray
    labels: np.ndarray
    masks: np.ndarray
    surgery_ids: np.ndarray
    minutes: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.masks = np.asarray(self.masks, dtype=np.int8)
        self.surgery_ids = np.asarray(self.surgery_ids)
        self.minutes = np.asarray(self.minutes, dtype=np.int64)
        n = self.scores.shape[0]
        for name in ("labels", "masks", "surgery_ids", "minutes"):
            if getattr(self, name).shape[0] != n:
                raise MetricError(f"{name} length differs from scores")
        for name in ("labels", "masks"):
            vals = getattr(self, name)
            if vals.size and not np.isin(vals, (0, 1)).all():
                raise MetricError(f"{name} must be 0/1")

    @property
    def n_minutes(self) -> int:
        return int(self.scores.shape[0])

    def labeled(self) -> tuple[np.ndarray, np.ndarray]:
        keep = self.masks == 1
        return self.scores[keep], self.labels[keep]


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.shape[0])
    i = 0
    while i < sorted_vals.shape[0]:
        j = i
        while j + 1 < sorted_vals.shape[0] and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(ps: PredictionSet) -> float:
    """Mann-Whitney statistic: P(score+ > score-) + 0.5 P(tie)."""
    scores, labels = ps.labeled()
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both classes among labeled minutes")
    ranks = _midranks(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(ps: PredictionSet) -> float:
    """Step-interpolated average precision over descending score thresholds."""
    scores, labels = ps.labeled()
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # threshold group ends: last index of each tied score block
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    tp = np.cumsum(y)[ends]
    k = ends + 1.0
    precision = tp / k
    recall = tp / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


def threshold_for_sensitivity(ps: PredictionSet, target: float = 0.8) -> float:
    """Largest threshold with sensitivity >= target over labeled minutes.

    Alarms fire at score >= threshold, so the answer is the k-th largest
    positive score with k = ceil(target * n_pos).
    """
    if not 0.0 < target <= 1.0:
        raise MetricError(f"target sensitivity must be in (0, 1], got {target}")
    scores, labels = ps.labeled()
    pos = np.sort(scores[labels == 1])[::-1]
    if pos.size == 0:
        raise MetricError("no positives among labeled minutes")
    k = math.ceil(target * pos.size)
    return float(pos[k - 1])


def alarms_per_10h(ps: PredictionSet, threshold: float, labeled_only: bool = False) -> float:
    """Threshold crossings per 600 minutes of monitored time."""
    scores = ps.scores[ps.masks == 1] if labeled_only else ps.scores
    total = scores.shape[0]
    if total == 0:
        raise MetricError("no monitored minutes")
    return float((scores >= threshold).sum() * 600.0 / total)


def sensitivity_precision(ps: PredictionSet, threshold: float) -> tuple[float, float]:
    """(sensitivity, precision) at ``threshold`` over labeled minutes.

    Precision is 0 when nothing crosses the threshold.
    """
    scores, labels = ps.labeled()
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("no positives among labeled minutes")
    fired = scores >= threshold
    tp = int((fired & (labels == 1)).sum())
    sens = tp / n_pos
    prec = tp / int(fired.sum()) if fired.any() else 0.0
    return float(sens), float(prec)


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricError(f"rmse shapes differ: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise MetricError("rmse of empty input")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def report(ps: PredictionSet, outcome: str, sens_target: float = 0.8,
           labeled_only_alarms: bool = False) -> dict:
    """The standard evaluation summary for one prediction set."""
    scores, labels = ps.labeled()
    threshold = threshold_for_sensitivity(ps, sens_target)
    sens, prec = sensitivity_precision(ps, threshold)
    return {
        "outcome": outcome,
        "roc_auc": roc_auc(ps),
        "pr_auc": pr_auc(ps),
        "threshold_at_0.8_sens": threshold,
        "sens_target": sens_target,
        "sensitivity_at_threshold": sens,
        "precision_at_threshold": prec,
        "alarms_per_10h": alarms_per_10h(ps, threshold, labeled_only_alarms),
        "n_surgeries": int(np.unique(ps.surgery_ids).shape[0]),
        "n_samples": int(labels.shape[0]),
        "n_minutes": ps.n_minutes,
        "prevalence": float(labels.mean()) if labels.size else 0.0,
    }
