"""Spatio-temporal panel forecasting with embedded anomaly cleaning."""

from .baselines import EwmaCleaner, ThreeSigmaCleaner, ewma_clean, three_sigma_clean
from .config import ConfigError, RunConfig
from .detection import AnomalyReport, ResidualLedger, detect, dynamic_threshold, score
from .embedding import select_auxiliary, similarity
from .estimator import CleaningForecaster
from .filling import FillParams, FillRecord, fill_anomalies
from .metrics import DetectionReport, MetricReport, detection_quality, rmse_mae
from .model import ForecastNetwork, NetworkConfig, joint_loss
from .panel import PanelError, SeriesPanel, SplitSpec, load_panel, save_panel
from .synthetic import AnomalySpec, GraphSpec, SyntheticSpec, generate_synthetic
from .training import TrainingResult, run_training
from .windows import WindowSample, make_windows

__all__ = [
    "AnomalyReport",
    "AnomalySpec",
    "CleaningForecaster",
    "ConfigError",
    "DetectionReport",
    "EwmaCleaner",
    "FillParams",
    "FillRecord",
    "ForecastNetwork",
    "GraphSpec",
    "MetricReport",
    "NetworkConfig",
    "PanelError",
    "ResidualLedger",
    "RunConfig",
    "SeriesPanel",
    "SplitSpec",
    "SyntheticSpec",
    "ThreeSigmaCleaner",
    "TrainingResult",
    "WindowSample",
    "detect",
    "detection_quality",
    "dynamic_threshold",
    "ewma_clean",
    "fill_anomalies",
    "generate_synthetic",
    "joint_loss",
    "load_panel",
    "make_windows",
    "rmse_mae",
    "run_training",
    "save_panel",
    "score",
    "select_auxiliary",
    "similarity",
    "three_sigma_clean",
]
