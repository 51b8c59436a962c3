"""Two-stage preprocessing baselines: detect-and-fill once, before any training.

Both cleaners operate per series on a normalized panel and reuse the shared
fill strategies. They follow the sklearn transformer protocol so they can sit
in pipelines: ``fit`` captures train-range statistics, ``transform`` returns a
cleaned copy of the panel and records the flagged positions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .filling import FillParams, fill_anomalies
from .panel import SeriesPanel, PanelError


def three_sigma_positions(panel: SeriesPanel, train_end: int) -> set[tuple[int, int]]:
    """Training-range positions where |x - mu| > 3 sigma (train-range mu/sigma).

    Constant series (sigma = 0) flag nothing.
    """
    train = panel.values[:, :train_end]
    mu = train.mean(axis=1, keepdims=True)
    sigma = train.std(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        flags = np.abs(train - mu) > 3 * sigma
    flags[sigma[:, 0] == 0] = False
    return {(int(i), int(t)) for i, t in zip(*np.nonzero(flags))}


def ewma_positions(
    panel: SeriesPanel,
    train_end: int,
    alpha: float = 0.1,
    k: float = 3.0,
    warmup: int = 10,
) -> set[tuple[int, int]]:
    """Training-range positions where |x_t - m_{t-1}| > k sqrt(v_{t-1}).

    The mean/variance recursions are m_t = alpha x_t + (1-alpha) m_{t-1} and
    v_t = alpha (x_t - m_{t-1})^2 + (1-alpha) v_{t-1}, seeded from the first
    ``warmup`` points, which are never flagged.
    """
    if not 0 < alpha <= 1:
        raise PanelError(f"alpha must be in (0, 1], got {alpha}")
    positions = set()
    for i in range(panel.n_series):
        x = panel.values[i, :train_end]
        if x.size <= warmup:
            continue
        m = float(x[:warmup].mean())
        v = float(x[:warmup].var())
        for t in range(warmup, x.size):
            if abs(x[t] - m) > k * np.sqrt(v):
                positions.add((i, int(t)))
            v = alpha * (x[t] - m) ** 2 + (1 - alpha) * v
            m = alpha * x[t] + (1 - alpha) * m
    return positions


def three_sigma_clean(
    panel: SeriesPanel,
    train_end: int,
    fill_strategy: str = "mean",
    fill_params: FillParams | None = None,
) -> tuple[SeriesPanel, set[tuple[int, int]]]:
    """Flag 3-sigma outliers in the training range and fill them in a panel copy."""
    positions = three_sigma_positions(panel, train_end)
    cleaned = panel.copy()
    params = fill_params or FillParams(train_end=train_end)
    fill_anomalies(cleaned, positions, fill_strategy, params)
    return cleaned, positions


def ewma_clean(
    panel: SeriesPanel,
    train_end: int,
    alpha: float = 0.1,
    k: float = 3.0,
    fill_strategy: str = "mean",
    fill_params: FillParams | None = None,
) -> tuple[SeriesPanel, set[tuple[int, int]]]:
    """Flag EWMA control-chart outliers in the training range and fill them in a copy."""
    positions = ewma_positions(panel, train_end, alpha=alpha, k=k)
    cleaned = panel.copy()
    params = fill_params or FillParams(train_end=train_end)
    fill_anomalies(cleaned, positions, fill_strategy, params)
    return cleaned, positions


class _PanelCleaner(BaseEstimator, TransformerMixin):
    """Shared sklearn-style wrapper; subclasses provide the flagging rule."""

    def __init__(self, train_end=None, fill_strategy="mean"):
        self.train_end = train_end
        self.fill_strategy = fill_strategy

    def fit(self, X: SeriesPanel, y=None):
        if not isinstance(X, SeriesPanel):
            raise TypeError("cleaners operate on SeriesPanel inputs")
        self.train_end_ = self.train_end or int(round(0.7 * X.n_timestamps))
        return self

    def transform(self, X: SeriesPanel) -> SeriesPanel:
        cleaned, positions = self._clean(X)
        self.positions_ = positions
        return cleaned


class ThreeSigmaCleaner(_PanelCleaner):
    """Two-stage 3-sigma preprocessing: flag once against train stats, fill, done."""

    def _clean(self, X: SeriesPanel):
        return three_sigma_clean(X, self.train_end_, self.fill_strategy)


class EwmaCleaner(_PanelCleaner):
    """Two-stage EWMA control-chart preprocessing."""

    def __init__(self, train_end=None, fill_strategy="mean", alpha=0.1, k=3.0):
        super().__init__(train_end=train_end, fill_strategy=fill_strategy)
        self.alpha = alpha
        self.k = k

    def _clean(self, X: SeriesPanel):
        return ewma_clean(X, self.train_end_, alpha=self.alpha, k=self.k,
                          fill_strategy=self.fill_strategy)
