"""sklearn-style estimator facade over the training loop.

``CleaningForecaster`` follows the BaseEstimator protocol (get_params /
set_params, attributes learned by ``fit`` carry a trailing underscore) so the
forecaster composes with model-selection tooling. Panels are the X of this
estimator; the supervised signal is the panel's own next-step values.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .config import RunConfig
from .metrics import MetricReport, detection_quality
from .panel import SeriesPanel, SplitSpec
from .training import evaluate, predict_windows, run_training
from .windows import make_windows


class CleaningForecaster(BaseEstimator):
    """Spatio-temporal panel forecaster that cleans its own training data.

    Parameters mirror the run configuration; see RunConfig for ranges.
    ``fit`` mutates the given panel's training range in place (that is the
    point of the embedded cleaning loop); pass ``panel.copy()`` to keep the
    original.
    """

    def __init__(
        self,
        window=16,
        n_selected=8,
        d_time=32,
        d_spat=16,
        d_attn=32,
        encoder_hidden=64,
        hidden=64,
        gamma=0.9,
        beta=0.5,
        delta=0.5,
        lr=1e-3,
        batch_size=128,
        n_epochs=20,
        ead_enabled=True,
        ead_period=5,
        ead_offset=0,
        threshold_mode="global",
        threshold_prune=False,
        fill_strategy="mean",
        fill_k=3,
        lowess_span=10,
        period=7,
        remove_mode="label_only",
        use_selection=True,
        use_temporal_attention=True,
        use_spatial_attention=True,
        use_transformer=True,
        use_recurrent=True,
        train_frac=0.7,
        valid_frac=0.1,
        seed=0,
    ):
        self.window = window
        self.n_selected = n_selected
        self.d_time = d_time
        self.d_spat = d_spat
        self.d_attn = d_attn
        self.encoder_hidden = encoder_hidden
        self.hidden = hidden
        self.gamma = gamma
        self.beta = beta
        self.delta = delta
        self.lr = lr
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.ead_enabled = ead_enabled
        self.ead_period = ead_period
        self.ead_offset = ead_offset
        self.threshold_mode = threshold_mode
        self.threshold_prune = threshold_prune
        self.fill_strategy = fill_strategy
        self.fill_k = fill_k
        self.lowess_span = lowess_span
        self.period = period
        self.remove_mode = remove_mode
        self.use_selection = use_selection
        self.use_temporal_attention = use_temporal_attention
        self.use_spatial_attention = use_spatial_attention
        self.use_transformer = use_transformer
        self.use_recurrent = use_recurrent
        self.train_frac = train_frac
        self.valid_frac = valid_frac
        self.seed = seed

    def _run_config(self) -> RunConfig:
        keys = set(self.get_params())
        return RunConfig(**{k: v for k, v in self.get_params().items() if k in keys}).validate()

    def fit(self, panel: SeriesPanel, split: SplitSpec | None = None) -> "CleaningForecaster":
        if not isinstance(panel, SeriesPanel):
            raise TypeError("CleaningForecaster fits on a SeriesPanel")
        result = run_training(panel, split, self._run_config())
        self.result_ = result
        self.model_ = result.model
        self.panel_ = result.panel
        self.split_ = result.split
        self.selection_ = result.selection
        self.anomaly_reports_ = result.reports
        self.history_ = result.history
        self.anomaly_positions_ = set().union(*(r.positions for r in result.reports)) if result.reports else set()
        return self

    def _windows_for(self, split_name: str):
        self._check_fitted()
        train, valid, test = make_windows(self.panel_, self.split_, self.window)
        return {"train": train, "valid": valid, "test": test}[split_name]

    def predict(self, split: str = "test") -> np.ndarray:
        """Denormalized next-step predictions for every sample of the split."""
        windows = self._windows_for(split)
        preds, _, series_idx = predict_windows(self.model_, windows, self.selection_)
        return self.panel_.norm_stds[series_idx] * preds + self.panel_.norm_means[series_idx]

    def evaluate(self, split: str = "test") -> MetricReport:
        return evaluate(self.model_, self._windows_for(split), self.selection_, split)

    def score(self, X=None, y=None) -> float:
        """Negative test RMSE, so that greater is better (sklearn convention)."""
        return -self.evaluate("test").rmse

    def detection_report(self):
        """Precision/recall/F1 of the cumulative flagged set against panel labels."""
        self._check_fitted()
        if self.panel_.anomaly_labels is None:
            raise ValueError("panel carries no anomaly labels")
        return detection_quality(self.anomaly_positions_, self.panel_.anomaly_labels)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("call fit() first")
