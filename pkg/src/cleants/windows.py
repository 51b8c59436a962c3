"""Sliding-window sample construction over a panel.

Train samples are live views: they hold a reference to the panel and read
values on access, so anomaly fills applied between epochs are visible to the
next epoch without rebuilding the sample objects.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .panel import SeriesPanel, SplitSpec, PanelError


@dataclasses.dataclass
class WindowSample:
    """One (target series, timestamp) sample: N x P window block plus next-step label.

    Row 0 of ``window`` is the target series' [t-P, t) values; the remaining
    series follow in ascending index order.
    """

    panel: SeriesPanel
    target_index: int
    timestamp: int
    window_len: int

    @property
    def window(self) -> np.ndarray:
        i, t, p = self.target_index, self.timestamp, self.window_len
        block = self.panel.values[:, t - p : t]
        order = [i] + [j for j in range(self.panel.n_series) if j != i]
        return block[order]

    @property
    def target_window(self) -> np.ndarray:
        return self.panel.values[self.target_index, self.timestamp - self.window_len : self.timestamp]

    @property
    def label(self) -> float:
        return float(self.panel.values[self.target_index, self.timestamp])


@dataclasses.dataclass
class WindowSet:
    """Samples for one split, backed by parallel (series, timestamp) index arrays."""

    panel: SeriesPanel
    window_len: int
    series_idx: np.ndarray  # int array, one entry per sample
    time_idx: np.ndarray

    def __len__(self) -> int:
        return self.series_idx.size

    def __getitem__(self, k: int) -> WindowSample:
        return WindowSample(self.panel, int(self.series_idx[k]), int(self.time_idx[k]), self.window_len)

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]


def make_windows(
    panel: SeriesPanel,
    split: SplitSpec,
    window_len: int,
    apply_exclusions: bool = True,
) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Build train/valid/test window sets.

    Every (series, timestamp) pair inside a split range with timestamp >= P
    yields one sample. Train samples whose label timestamp was dropped by the
    "remove" fill strategy are skipped when ``apply_exclusions`` is set.
    """
    if window_len < 2:
        raise PanelError(f"window length must be >= 2, got {window_len}")
    split.validate(window_len, panel.n_timestamps)

    def build(t_lo: int, t_hi: int, exclude: bool) -> WindowSet:
        t_lo = max(t_lo, window_len)
        times = np.arange(t_lo, t_hi)
        series = np.repeat(np.arange(panel.n_series), times.size)
        times = np.tile(times, panel.n_series)
        if exclude and panel.train_exclusions.any():
            keep = ~panel.train_exclusions[series, times]
            series, times = series[keep], times[keep]
        return WindowSet(panel, window_len, series, times)

    train = build(window_len, split.train_end, apply_exclusions)
    valid = build(split.train_end, split.valid_end, False)
    test = build(split.valid_end, split.test_end, False)
    return train, valid, test
