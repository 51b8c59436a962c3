"""Forecast accuracy and detection quality metrics."""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass
class MetricReport:
    rmse: float
    mae: float
    n_samples: int
    split: str = "test"


@dataclasses.dataclass
class DetectionReport:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int


def rmse_mae(pairs, split: str = "test") -> MetricReport:
    """RMSE and MAE over (prediction, truth) pairs, in whatever units they carry."""
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("rmse_mae needs at least one (prediction, truth) pair")
    errors = arr[:, 0] - arr[:, 1]
    return MetricReport(
        rmse=float(np.sqrt(np.mean(errors**2))),
        mae=float(np.mean(np.abs(errors))),
        n_samples=arr.shape[0],
        split=split,
    )


def detection_quality(positions: set[tuple[int, int]], labels: np.ndarray) -> DetectionReport:
    """Precision/recall/F1 of flagged positions against a boolean label matrix."""
    labeled = {(int(i), int(t)) for i, t in zip(*np.nonzero(labels))}
    tp = len(positions & labeled)
    fp = len(positions - labeled)
    fn = len(labeled - positions)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DetectionReport(precision, recall, f1, tp, fp, fn)
