"""Residual bookkeeping, anomaly scoring and dynamic thresholding.

Residuals are collected over one frozen-parameter sweep of the training set:
a per-point prediction error where the point is a sample's label, and the
mean per-point reconstruction error over every window that covers the point.
A position is scoreable only when both errors exist; the first P timestamps
(no prediction) and the last training timestamp (no covering window) stay
absent. The threshold maximizes the drop in score mean/std per flagged point,
penalized by the number of flagged points and flagged runs.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pandas as pd

from .filling import FillRecord

DEFAULT_Z_GRID = np.arange(2.0, 10.0 + 1e-9, 0.5)
MIN_SCORES = 10


class ResidualLedger:
    """Per-point prediction and reconstruction errors over an epoch's sweep."""

    def __init__(self, n_series: int, n_timestamps: int):
        self.eps_p = np.full((n_series, n_timestamps), np.nan)
        self._rec_sum = np.zeros((n_series, n_timestamps))
        self.counts = np.zeros((n_series, n_timestamps), dtype=np.int64)
        self._eps_r: np.ndarray | None = None

    @classmethod
    def from_matrices(cls, eps_p: np.ndarray, eps_r: np.ndarray) -> "ResidualLedger":
        """Build an already-finalized ledger from explicit error matrices (NaN = absent)."""
        eps_p = np.asarray(eps_p, dtype=np.float64)
        eps_r = np.asarray(eps_r, dtype=np.float64)
        if eps_p.shape != eps_r.shape:
            raise ValueError("eps_p and eps_r must share a shape")
        ledger = cls(*eps_p.shape)
        ledger.eps_p = eps_p.copy()
        ledger._eps_r = eps_r.copy()
        ledger.counts = np.isfinite(eps_r).astype(np.int64)
        return ledger

    def add_batch(
        self,
        series_idx: np.ndarray,
        time_idx: np.ndarray,
        window_len: int,
        labels: np.ndarray,
        target_windows: np.ndarray,
        predictions: np.ndarray,
        reconstructions: np.ndarray,
    ) -> None:
        """Record residuals for a batch of samples.

        ``target_windows``/``reconstructions`` are (B, P); the k-th window slot
        of sample (i, t) contributes to point (i, t - P + k).
        """
        if self._eps_r is not None:
            raise RuntimeError("ledger already finalized")
        pred_err = np.abs(labels - predictions)
        rec_err = np.abs(target_windows - reconstructions)
        if not (np.isfinite(pred_err).all() and np.isfinite(rec_err).all()):
            raise FloatingPointError("non-finite residuals in sweep")
        self.eps_p[series_idx, time_idx] = pred_err
        offsets = np.arange(-window_len, 0)
        rows = np.repeat(series_idx, window_len)
        cols = (time_idx[:, None] + offsets[None, :]).ravel()
        np.add.at(self._rec_sum, (rows, cols), rec_err.ravel())
        np.add.at(self.counts, (rows, cols), 1)

    def finalize(self) -> None:
        """Convert reconstruction sums into per-point means."""
        if self._eps_r is not None:
            return
        eps_r = np.full(self._rec_sum.shape, np.nan)
        covered = self.counts > 0
        eps_r[covered] = self._rec_sum[covered] / self.counts[covered]
        self._eps_r = eps_r

    @property
    def eps_r(self) -> np.ndarray:
        if self._eps_r is None:
            raise RuntimeError("call finalize() before reading eps_r")
        return self._eps_r

    def present_mask(self) -> np.ndarray:
        """Positions with both a prediction and a reconstruction error."""
        return np.isfinite(self.eps_p) & np.isfinite(self.eps_r)


def score(ledger: ResidualLedger, delta: float) -> np.ndarray:
    """s = delta * eps_p + (1 - delta) * eps_r where both are present, NaN elsewhere."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    ledger.finalize()
    scores = np.full(ledger.eps_p.shape, np.nan)
    mask = ledger.present_mask()
    scores[mask] = delta * ledger.eps_p[mask] + (1 - delta) * ledger.eps_r[mask]
    return scores


def count_runs(mask: np.ndarray) -> int:
    """Number of contiguous True runs; rows of a 2-D mask are counted separately."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None, :]
    if mask.size == 0:
        return 0
    starts = mask & ~np.pad(mask, ((0, 0), (1, 0)))[:, :-1]
    return int(starts.sum())


def _choose_tau(values: np.ndarray, run_mask_fn, z_grid: np.ndarray) -> float:
    """Shared threshold search: values are the finite scores, run_mask_fn maps a
    candidate tau to the structured exceedance mask used for run counting."""
    mu = float(values.mean())
    sigma = float(values.std())
    if sigma == 0.0:
        return np.inf
    best_crit = None
    best_tau = np.inf
    for z in z_grid:
        tau = mu + z * sigma
        above = values > tau
        n_above = int(above.sum())
        if n_above == 0 or n_above == values.size:
            continue
        pruned = values[~above]
        delta_mu = mu - float(pruned.mean())
        delta_sigma = sigma - float(pruned.std())
        denom = n_above + count_runs(run_mask_fn(tau)) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            crit = (delta_mu / mu + delta_sigma / sigma) / denom
        if not np.isfinite(crit):
            continue
        if best_crit is None or crit >= best_crit:  # ties go to the larger z
            best_crit, best_tau = crit, tau
    return float(best_tau)


def dynamic_threshold(scores: np.ndarray, z_grid: np.ndarray | None = None) -> float:
    """Threshold for a flat score collection; runs are contiguous in input order."""
    values = np.asarray(scores, dtype=np.float64).ravel()
    values = values[np.isfinite(values)]
    if values.size < MIN_SCORES:
        raise ValueError(f"need at least {MIN_SCORES} finite scores, got {values.size}")
    z_grid = DEFAULT_Z_GRID if z_grid is None else np.asarray(z_grid, dtype=np.float64)
    return _choose_tau(values, lambda tau: values > tau, z_grid)


def _matrix_threshold(score_matrix: np.ndarray, z_grid: np.ndarray) -> float:
    """Global threshold over a score matrix; runs are time-contiguous per series."""
    finite = np.isfinite(score_matrix)
    values = score_matrix[finite]
    if values.size < MIN_SCORES:
        raise ValueError(f"need at least {MIN_SCORES} finite scores, got {values.size}")

    def mask_fn(tau):
        with np.errstate(invalid="ignore"):
            return np.nan_to_num(score_matrix, nan=-np.inf) > tau

    return _choose_tau(values, mask_fn, z_grid)


def prune_flags(scores: np.ndarray, flags: np.ndarray, min_drop: float = 0.13) -> np.ndarray:
    """Run-level pruning: keep flagged runs only down to the last large relative
    drop in run-maximum scores; below it runs are reclassified as normal."""
    flags = flags.copy()
    if not flags.any():
        return flags
    if flags.ndim == 1:
        flags2d = flags[None, :]
        scores2d = scores[None, :]
    else:
        flags2d, scores2d = flags, scores
    runs = []
    for r in range(flags2d.shape[0]):
        row = flags2d[r]
        edges = np.diff(np.concatenate(([0], row.astype(np.int8), [0])))
        for start, stop in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
            runs.append((r, start, stop, float(np.nanmax(scores2d[r, start:stop]))))
    runs.sort(key=lambda item: -item[3])
    maxima = np.array([item[3] for item in runs])
    with np.errstate(invalid="ignore"):
        normal_max = np.nanmax(np.where(flags2d, np.nan, scores2d))
    floor = float(normal_max) if np.isfinite(normal_max) else 0.0
    seq = np.concatenate((maxima, [floor]))
    drops = (seq[:-1] - seq[1:]) / np.where(seq[:-1] == 0, 1.0, seq[:-1])
    keep_upto = -1
    for k, d in enumerate(drops):
        if d > min_drop:
            keep_upto = k
    for k, (r, start, stop, _) in enumerate(runs):
        if k > keep_upto:
            flags2d[r, start:stop] = False
    return flags2d[0] if flags.ndim == 1 else flags2d


@dataclasses.dataclass
class AnomalyReport:
    """One EAD round's output: scores, threshold, flagged positions and fills."""

    epoch: int
    delta: float
    scores: np.ndarray                       # N x T, NaN at absent positions
    threshold: float | np.ndarray            # scalar (global) or per-series vector
    positions: set[tuple[int, int]]
    fills: list[FillRecord] = dataclasses.field(default_factory=list)

    def validate(self, train_end: int) -> None:
        thr = self.threshold
        for i, t in self.positions:
            if t >= train_end:
                raise AssertionError(f"anomaly ({i},{t}) at/after train_end {train_end}")
            bound = thr if np.isscalar(thr) else thr[i]
            if not self.scores[i, t] > bound:
                raise AssertionError(f"position ({i},{t}) does not exceed the threshold")


def detect(
    ledger: ResidualLedger,
    delta: float,
    mode: str = "global",
    z_grid: np.ndarray | None = None,
    prune: bool = False,
    epoch: int = 0,
) -> AnomalyReport:
    """Score the ledger and flag positions above the dynamic threshold."""
    if mode not in ("global", "per_series"):
        raise ValueError(f"unknown threshold mode {mode!r}")
    z_grid = DEFAULT_Z_GRID if z_grid is None else np.asarray(z_grid, dtype=np.float64)
    scores = score(ledger, delta)
    n = scores.shape[0]
    with np.errstate(invalid="ignore"):
        if mode == "global":
            tau: float | np.ndarray = _matrix_threshold(scores, z_grid)
            flags = np.nan_to_num(scores, nan=-np.inf) > tau
        else:
            tau = np.empty(n)
            flags = np.zeros(scores.shape, dtype=bool)
            for i in range(n):
                row = scores[i]
                tau[i] = dynamic_threshold(row[np.isfinite(row)], z_grid)
                flags[i] = np.nan_to_num(row, nan=-np.inf) > tau[i]
    if prune and flags.any():
        flags = prune_flags(scores, flags)
    positions = {(int(i), int(t)) for i, t in zip(*np.nonzero(flags))}
    return AnomalyReport(epoch=epoch, delta=delta, scores=scores, threshold=tau, positions=positions)


def export_anomaly_reports(reports: list[AnomalyReport], series_ids: list[str], path) -> None:
    """CSV export: epoch,series_id,timestamp,score,threshold,old_value,new_value."""
    rows = []
    for report in reports:
        fills = {(rec.series_index, rec.timestamp): rec for rec in report.fills}
        for i, t in sorted(report.positions):
            thr = report.threshold if np.isscalar(report.threshold) else report.threshold[i]
            rec = fills.get((i, t))
            rows.append(
                {
                    "epoch": report.epoch,
                    "series_id": series_ids[i],
                    "timestamp": t,
                    "score": report.scores[i, t],
                    "threshold": float(thr),
                    "old_value": rec.old_value if rec else np.nan,
                    "new_value": rec.new_value if rec else np.nan,
                }
            )
    pd.DataFrame(
        rows, columns=["epoch", "series_id", "timestamp", "score", "threshold", "old_value", "new_value"]
    ).to_csv(path, index=False)
