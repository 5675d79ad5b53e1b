"""Per-entity thresholds, anomaly decisions and evaluation metrics.

The threshold for an entity is the largest absolute prediction error seen
on its training windows (floored at 1e-8); a later error is anomalous iff
it strictly exceeds that threshold. The continuous score for ROC-AUC is
error/threshold, which calibrates errors across entities of different
scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THRESHOLD_FLOOR = 1e-8


class AUCUndefinedError(Exception):
    """Raised when labels contain a single class; carries P/R/F1."""

    def __init__(self, precision: float, recall: float, f1: float):
        super().__init__("AUC undefined: labels contain a single class")
        self.precision = precision
        self.recall = recall
        self.f1 = f1


@dataclass(frozen=True)
class AnomalyReport:
    entity_ids: tuple[str, ...]
    days: np.ndarray
    errors: np.ndarray
    thresholds: np.ndarray  # per row, the owning entity's threshold
    scores: np.ndarray
    decisions: np.ndarray
    labels: np.ndarray
    precision: float
    recall: float
    f1: float
    auc: float

    def metrics(self) -> dict:
        return {
            "schema": 1,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("entity_id,day,error,threshold,score,decision,label\n")
            for i, eid in enumerate(self.entity_ids):
                f.write(
                    f"{eid},{int(self.days[i])},{self.errors[i]:.9e},"
                    f"{self.thresholds[i]:.9e},{self.scores[i]:.9e},"
                    f"{int(self.decisions[i])},{int(self.labels[i])}\n"
                )


def fit_thresholds(train_errors: dict[int, np.ndarray]) -> dict[int, float]:
    """Per entity, the max training-set absolute error (floored)."""
    thresholds = {}
    for entity, errs in train_errors.items():
        errs = np.asarray(errs, dtype=np.float64)
        if errs.size == 0:
            raise ValueError(f"entity {entity} has no training errors")
        thresholds[entity] = max(float(np.abs(errs).max()), THRESHOLD_FLOOR)
    return thresholds


def detect(errors: np.ndarray, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """decision = 1 iff error > threshold (strict); score = error/threshold."""
    errors = np.abs(np.asarray(errors, dtype=np.float64))
    thresholds = np.asarray(thresholds, dtype=np.float64)
    decisions = (errors > thresholds).astype(np.int8)
    scores = errors / thresholds
    return decisions, scores


def _rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with half credit for ties."""
    n = scores.size
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(
    decisions: np.ndarray, scores: np.ndarray, labels: np.ndarray
) -> tuple[float, float, float, float]:
    """Precision, recall, F1 and ROC-AUC of decisions/scores vs labels."""
    decisions = np.asarray(decisions).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if not (decisions.shape == labels.shape == scores.shape):
        raise ValueError("decisions, scores and labels must be aligned")
    tp = int(((decisions == 1) & (labels == 1)).sum())
    fp = int(((decisions == 1) & (labels == 0)).sum())
    fn = int(((decisions == 0) & (labels == 1)).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    if labels.min() == labels.max():
        raise AUCUndefinedError(precision, recall, f1)
    return precision, recall, f1, _rank_auc(scores, labels)
