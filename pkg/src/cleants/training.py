"""Training loop with embedded anomaly detection.

Each epoch trains the forecast network on the current panel; on detection
epochs a frozen-parameter sweep collects per-point residuals, the dynamic
threshold flags anomalous training points, flagged points are rewritten (or
excluded) by the configured fill strategy, and the training loader is rebuilt
so the next epoch sees the cleaned panel. Validation and test ranges are
never modified.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pandas as pd
import torch

from .config import RunConfig
from .detection import AnomalyReport, ResidualLedger, detect
from .embedding import selection_table
from .filling import FillParams, fill_anomalies
from .metrics import MetricReport
from .model import ForecastNetwork, NetworkConfig, joint_loss
from .panel import SeriesPanel, SplitSpec
from .windows import WindowSet, make_windows

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclasses.dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    valid_rmse: float
    valid_mae: float


@dataclasses.dataclass
class TrainingResult:
    model: ForecastNetwork
    panel: SeriesPanel
    split: SplitSpec
    selection: np.ndarray
    reports: list[AnomalyReport]
    history: list[EpochMetrics]
    config: RunConfig


def network_config_from_run(config: RunConfig, n_series: int) -> NetworkConfig:
    return NetworkConfig(
        window_len=config.window,
        n_selected=min(config.n_selected, n_series),
        n_series=n_series,
        d_time=config.d_time,
        d_spat=config.d_spat,
        d_attn=config.d_attn,
        encoder_hidden=config.encoder_hidden,
        hidden=config.hidden,
        gamma=config.gamma,
        use_temporal_attention=config.use_temporal_attention,
        use_spatial_attention=config.use_spatial_attention,
        use_transformer=config.use_transformer,
        use_recurrent=config.use_recurrent,
    )


def fixed_selection_table(n_series: int, n_selected: int) -> np.ndarray:
    """Selection with similarity ranking disabled: target plus the first other series."""
    rows = []
    for i in range(n_series):
        others = [j for j in range(n_series) if j != i][: n_selected - 1]
        rows.append([i] + others)
    return np.asarray(rows, dtype=np.int64)


def _refresh_selection(model: ForecastNetwork, config: RunConfig, n_series: int) -> np.ndarray:
    m = min(config.n_selected, n_series)
    if not config.use_selection:
        return fixed_selection_table(n_series, m)
    return selection_table(model.full_embeddings(), m)


def _gather(values: torch.Tensor, selection: torch.Tensor, series_idx: torch.Tensor,
            time_idx: torch.Tensor, window_len: int):
    """Assemble (B, M, P) blocks, (B, M) selected row indices and (B,) labels."""
    rows = selection[series_idx]                                   # (B, M)
    cols = time_idx.unsqueeze(1) + torch.arange(-window_len, 0)    # (B, P)
    block = values[rows.unsqueeze(2), cols.unsqueeze(1)]           # (B, M, P)
    labels = values[series_idx, time_idx]
    return block, rows, labels


def _batched(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def predict_windows(
    model: ForecastNetwork,
    windows: WindowSet,
    selection: np.ndarray,
    batch_size: int = 512,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eval-mode predictions over a window set: (predictions, labels, series_idx), normalized units."""
    model.eval()
    values = torch.as_tensor(windows.panel.values, dtype=torch.get_default_dtype())
    sel = torch.as_tensor(selection)
    preds = np.empty(len(windows))
    with torch.no_grad():
        for batch in _batched(len(windows), batch_size):
            s_idx = torch.as_tensor(windows.series_idx[batch])
            t_idx = torch.as_tensor(windows.time_idx[batch])
            block, rows, _ = _gather(values, sel, s_idx, t_idx, windows.window_len)
            out = model(block, rows)
            preds[batch] = out.prediction.numpy()
    labels = windows.panel.values[windows.series_idx, windows.time_idx]
    return preds, labels, windows.series_idx


def evaluate(model: ForecastNetwork, windows: WindowSet, selection: np.ndarray,
             split_name: str, batch_size: int = 512) -> MetricReport:
    """Denormalized RMSE/MAE over a window set."""
    preds, labels, series_idx = predict_windows(model, windows, selection, batch_size)
    stds = windows.panel.norm_stds[series_idx] if windows.panel.is_normalized else np.ones(series_idx.size)
    errors = (preds - labels) * stds
    return MetricReport(
        rmse=float(np.sqrt(np.mean(errors**2))),
        mae=float(np.mean(np.abs(errors))),
        n_samples=len(windows),
        split=split_name,
    )


def residual_sweep(
    model: ForecastNetwork,
    windows: WindowSet,
    selection: np.ndarray,
    batch_size: int = 512,
) -> ResidualLedger:
    """Frozen-parameter pass over the training set, collecting per-point residuals."""
    model.eval()
    panel = windows.panel
    ledger = ResidualLedger(panel.n_series, panel.n_timestamps)
    values = torch.as_tensor(panel.values, dtype=torch.get_default_dtype())
    sel = torch.as_tensor(selection)
    with torch.no_grad():
        for batch in _batched(len(windows), batch_size):
            s_idx = torch.as_tensor(windows.series_idx[batch])
            t_idx = torch.as_tensor(windows.time_idx[batch])
            block, rows, labels = _gather(values, sel, s_idx, t_idx, windows.window_len)
            out = model(block, rows)
            ledger.add_batch(
                windows.series_idx[batch],
                windows.time_idx[batch],
                windows.window_len,
                labels.numpy(),
                block[:, 0, :].numpy(),
                out.prediction.numpy(),
                out.reconstruction.numpy(),
            )
    ledger.finalize()
    return ledger


def run_training(
    panel: SeriesPanel,
    split: SplitSpec | None = None,
    config: RunConfig | None = None,
) -> TrainingResult:
    """Train the forecast network on the panel, cleaning it as training proceeds."""
    config = (config or RunConfig()).validate()
    if split is None:
        split = SplitSpec.from_fractions(panel.n_timestamps, config.train_frac, config.valid_frac)
    split.validate(config.window, panel.n_timestamps)
    if not panel.is_normalized:
        panel.normalize(split.train_end)

    torch.manual_seed(config.seed)
    net_config = network_config_from_run(config, panel.n_series)
    model = ForecastNetwork(net_config, graph=panel.graph)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    shuffler = torch.Generator().manual_seed(config.seed)

    fill_params = FillParams(
        neighbor_k=config.fill_k,
        lowess_span=config.lowess_span,
        period=config.period,
        train_end=split.train_end,
        remove_mode=config.remove_mode,
        window_len=config.window,
    )

    history: list[EpochMetrics] = []
    anomaly_reports: list[AnomalyReport] = []
    train, valid, _ = make_windows(panel, split, config.window)

    for epoch in range(config.n_epochs):
        selection = _refresh_selection(model, config, panel.n_series)
        sel_t = torch.as_tensor(selection)
        values = torch.as_tensor(panel.values, dtype=torch.get_default_dtype())

        model.train()
        order = torch.randperm(len(train), generator=shuffler).numpy()
        epoch_loss = 0.0
        for batch in _batched(len(train), config.batch_size, order):
            s_idx = torch.as_tensor(train.series_idx[batch])
            t_idx = torch.as_tensor(train.time_idx[batch])
            block, rows, labels = _gather(values, sel_t, s_idx, t_idx, config.window)
            try:
                out = model(block, rows)
                loss, _, _ = joint_loss(out, labels, block[:, 0, :], config.beta)
            except FloatingPointError as exc:
                raise DivergenceError(f"non-finite values at epoch {epoch}: {exc}") from exc
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            model.bank.update_from_windows(model.encoder, s_idx, block[:, 0, :])
            epoch_loss += loss.item() * len(batch)
        epoch_loss /= max(len(train), 1)

        valid_metrics = evaluate(model, valid, selection, "valid")
        history.append(EpochMetrics(epoch, epoch_loss, valid_metrics.rmse, valid_metrics.mae))

        # a period longer than the run means "never" (the --no-ead eta = infinity reading);
        # otherwise the literal modulus schedule applies, including the epoch-0 round
        run_ead = (
            config.ead_enabled
            and config.ead_period <= config.n_epochs
            and epoch >= config.ead_offset
            and (epoch - config.ead_offset) % config.ead_period == 0
        )
        if run_ead:
            ledger = residual_sweep(model, train, selection, config.batch_size * 4)
            report = detect(
                ledger,
                config.delta,
                mode=config.threshold_mode,
                prune=config.threshold_prune,
                epoch=epoch,
            )
            report.validate(split.train_end)
            if report.positions:
                _, records = fill_anomalies(panel, report.positions, config.fill_strategy, fill_params)
                report.fills = records
                train, valid, _ = make_windows(panel, split, config.window)
            anomaly_reports.append(report)

    return TrainingResult(
        model=model,
        panel=panel,
        split=split,
        selection=_refresh_selection(model, config, panel.n_series),
        reports=anomaly_reports,
        history=history,
        config=config,
    )


def export_history(history: list[EpochMetrics], path) -> None:
    """CSV export: epoch,train_loss,valid_rmse,valid_mae."""
    pd.DataFrame(
        [dataclasses.asdict(row) for row in history],
        columns=["epoch", "train_loss", "valid_rmse", "valid_mae"],
    ).to_csv(path, index=False)


# -- checkpointing -------------------------------------------------------------

def save_checkpoint(path, model: ForecastNetwork, config: RunConfig, panel: SeriesPanel) -> None:
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "config": config.to_dict(),
            "network_config": dataclasses.asdict(model.config),
            "state": model.state_dict(),
            "series_ids": panel.series_ids,
            "has_graph": panel.graph is not None,
        },
        path,
    )


def load_checkpoint(path, panel: SeriesPanel) -> tuple[ForecastNetwork, RunConfig]:
    """Rebuild the network from a checkpoint; any dimension mismatch fails loudly."""
    bundle = torch.load(path, weights_only=False)
    if bundle.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {bundle.get('version')!r}")
    if bundle["series_ids"] != panel.series_ids:
        raise ValueError("checkpoint series ids do not match the panel")
    if bundle["has_graph"] != (panel.graph is not None):
        raise ValueError("checkpoint graph presence does not match the panel")
    net_config = NetworkConfig(**bundle["network_config"])
    model = ForecastNetwork(net_config, graph=panel.graph)
    try:
        model.load_state_dict(bundle["state"])
    except RuntimeError as exc:
        raise ValueError(f"checkpoint incompatible with rebuilt model: {exc}") from exc
    run_config = RunConfig(**bundle["config"])
    return model, run_config
