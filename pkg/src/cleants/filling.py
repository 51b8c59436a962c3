"""Replacement strategies for flagged training points.

All strategies treat every flagged position as unusable when looking for
donor values, so the result does not depend on fill order. Donor values are
drawn from timestamps below ``train_end`` when it is given, keeping test data
out of the training panel.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from statsmodels.nonparametric.smoothers_lowess import lowess as sm_lowess

from .panel import SeriesPanel, PanelError

FILL_STRATEGIES = ("remove", "mean", "lowess", "periodic_mean")


class FillError(PanelError):
    """Raised when a fill strategy has no usable donor values."""


@dataclasses.dataclass
class FillParams:
    neighbor_k: int = 3        # clean neighbors per side for "mean"
    lowess_span: int = 10      # clean neighborhood half-width for "lowess"
    period: int = 7            # phase length for "periodic_mean"
    train_end: int | None = None
    remove_mode: str = "label_only"  # or "full_purge"
    window_len: int | None = None    # needed by full_purge


@dataclasses.dataclass
class FillRecord:
    series_index: int
    timestamp: int
    old_value: float
    new_value: float


def fill_anomalies(
    panel: SeriesPanel,
    positions: set[tuple[int, int]],
    strategy: str,
    params: FillParams | None = None,
) -> tuple[SeriesPanel, list[FillRecord]]:
    """Rewrite (or exclude) the given (series, timestamp) positions in place."""
    if strategy not in FILL_STRATEGIES:
        raise PanelError(f"unknown fill strategy {strategy!r}; expected one of {FILL_STRATEGIES}")
    params = params or FillParams()
    limit = params.train_end if params.train_end is not None else panel.n_timestamps
    for i, t in positions:
        if not (0 <= i < panel.n_series and 0 <= t < limit):
            raise PanelError(f"position ({i},{t}) outside the training range")

    if strategy == "remove":
        return panel, _exclude(panel, positions, params, limit)

    flagged = np.zeros(panel.values.shape, dtype=bool)
    for i, t in positions:
        flagged[i, t] = True

    records = []
    for i, t in sorted(positions):
        old = float(panel.values[i, t])
        if strategy == "mean":
            new = _neighbor_mean(panel.values[i], flagged[i], t, params.neighbor_k, limit)
        elif strategy == "lowess":
            new = _lowess_fit(panel.values[i], flagged[i], t, params.lowess_span, limit)
        else:
            new = _periodic_mean(panel.values[i], flagged[i], t, params.period, limit)
        panel.values[i, t] = new
        records.append(FillRecord(i, t, old, new))
    return panel, records


def _exclude(panel, positions, params: FillParams, limit: int) -> list[FillRecord]:
    records = []
    for i, t in sorted(positions):
        val = float(panel.values[i, t])
        panel.train_exclusions[i, t] = True
        if params.remove_mode == "full_purge":
            if params.window_len is None:
                raise PanelError("full_purge needs window_len in fill params")
            hi = min(t + params.window_len + 1, limit)
            panel.train_exclusions[i, t:hi] = True
        elif params.remove_mode != "label_only":
            raise PanelError(f"unknown remove_mode {params.remove_mode!r}")
        records.append(FillRecord(i, t, val, val))
    return records


def _neighbor_mean(series: np.ndarray, flagged: np.ndarray, t: int, k: int, limit: int) -> float:
    donors = []
    j, found = t - 1, 0
    while j >= 0 and found < k:
        if not flagged[j]:
            donors.append(series[j])
            found += 1
        j -= 1
    j, found = t + 1, 0
    while j < limit and found < k:
        if not flagged[j]:
            donors.append(series[j])
            found += 1
        j += 1
    if not donors:
        raise FillError(f"no clean neighbors around t={t}")
    return float(np.mean(donors))


def _lowess_fit(series: np.ndarray, flagged: np.ndarray, t: int, span: int, limit: int) -> float:
    lo, hi = max(0, t - span), min(limit, t + span + 1)
    idx = np.arange(lo, hi)
    idx = idx[~flagged[lo:hi]]
    if idx.size < 2:
        raise FillError(f"lowess neighborhood around t={t} has fewer than 2 clean points")
    fitted = sm_lowess(series[idx], idx.astype(float), frac=min(1.0, max(0.5, 4 / idx.size)),
                       it=1, xvals=np.array([float(t)]))
    value = float(np.asarray(fitted).ravel()[0])
    if not np.isfinite(value):
        raise FillError(f"lowess fit at t={t} is non-finite")
    return value


def _periodic_mean(series: np.ndarray, flagged: np.ndarray, t: int, period: int, limit: int) -> float:
    phase_idx = np.arange(t % period, limit, period)
    phase_idx = phase_idx[(phase_idx != t) & ~flagged[phase_idx]]
    if phase_idx.size == 0:
        raise FillError(f"no clean same-phase values for t={t} (period {period})")
    return float(series[phase_idx].mean())
