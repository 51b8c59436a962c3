"""Command-line entry point: generate / train / evaluate / detect / ablate.

Every command resolves its settings as CLI overrides > config file > defaults,
writes the resolved config into the output directory, and exits nonzero with a
one-line error on failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .baselines import ewma_clean, three_sigma_clean
from .config import ConfigError, RunConfig
from .detection import detect, export_anomaly_reports
from .metrics import detection_quality
from .panel import PanelError, SeriesPanel, SplitSpec, load_panel, save_graph, save_labels, save_panel
from .synthetic import generate_synthetic
from .training import (
    DivergenceError,
    evaluate,
    export_history,
    load_checkpoint,
    network_config_from_run,
    residual_sweep,
    run_training,
    save_checkpoint,
    _refresh_selection,
)
from .windows import make_windows

ABLATION_COMPONENTS = {
    "no_selection": "use_selection",
    "no_spatial_attention": "use_spatial_attention",
    "no_temporal_attention": "use_temporal_attention",
    "no_transformer": "use_transformer",
    "no_recurrent": "use_recurrent",
}
DELTA_GRID = (0.0, 0.2, 0.5, 0.8, 1.0)
FILL_GRID = ("remove", "mean", "lowess", "periodic_mean")


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.write(out / "config.txt")
    return out


def _load_config_panel(config: RunConfig) -> tuple[SeriesPanel, SplitSpec]:
    if not config.panel_path:
        raise ConfigError("panel_path is not set")
    probe = pd.read_csv(config.panel_path, nrows=1)
    n_timestamps = probe.shape[1] - 1
    split = SplitSpec.from_fractions(n_timestamps, config.train_frac, config.valid_frac)
    panel = load_panel(
        config.panel_path,
        graph_path=config.graph_path or None,
        labels_path=config.labels_path or None,
        train_end=split.train_end,
        missing_policy=config.missing_policy,
    )
    return panel, split


def cmd_generate(config: RunConfig) -> int:
    out = _out_dir(config)
    panel = generate_synthetic(config.synthetic_spec(), config.seed)
    save_panel(panel, out / "panel.csv")
    save_graph(panel.graph, panel.series_ids, out / "graph.csv")
    save_labels(panel.anomaly_labels, panel.series_ids, out / "labels.csv")
    print(f"wrote panel ({panel.n_series}x{panel.n_timestamps}), graph and labels to {out}")
    return 0


def cmd_train(config: RunConfig) -> int:
    out = _out_dir(config)
    panel, split = _load_config_panel(config)
    result = run_training(panel, split, config)
    save_checkpoint(out / "checkpoint.pt", result.model, config, panel)
    export_history(result.history, out / "metrics.csv")
    export_anomaly_reports(result.reports, panel.series_ids, out / "anomalies.csv")
    last = result.history[-1]
    n_flagged = len(set().union(*(r.positions for r in result.reports))) if result.reports else 0
    print(
        f"trained {config.n_epochs} epochs; valid rmse {last.valid_rmse:.5f} "
        f"mae {last.valid_mae:.5f}; {n_flagged} points flagged over {len(result.reports)} detection rounds"
    )
    return 0


def cmd_evaluate(config: RunConfig, checkpoint: str) -> int:
    out = _out_dir(config)
    panel, split = _load_config_panel(config)
    model, run_config = load_checkpoint(checkpoint, panel)
    _check_dims(config, run_config)
    _, _, test = make_windows(panel, split, run_config.window)
    selection = _refresh_selection(model, run_config, panel.n_series)
    report = evaluate(model, test, selection, "test")
    pd.DataFrame([{"split": "test", "rmse": report.rmse, "mae": report.mae, "n_samples": report.n_samples}]).to_csv(
        out / "evaluation.csv", index=False
    )
    print(f"test rmse {report.rmse:.5f} mae {report.mae:.5f} over {report.n_samples} samples")
    return 0


def cmd_detect(config: RunConfig, checkpoint: str) -> int:
    out = _out_dir(config)
    panel, split = _load_config_panel(config)
    model, run_config = load_checkpoint(checkpoint, panel)
    _check_dims(config, run_config)
    train, _, _ = make_windows(panel, split, run_config.window)
    selection = _refresh_selection(model, run_config, panel.n_series)
    ledger = residual_sweep(model, train, selection)
    report = detect(ledger, config.delta, mode=config.threshold_mode, prune=config.threshold_prune)
    report.validate(split.train_end)
    export_anomaly_reports([report], panel.series_ids, out / "anomalies.csv")
    print(f"flagged {len(report.positions)} training points (threshold mode {config.threshold_mode})")
    return 0


def _check_dims(config: RunConfig, stored: RunConfig) -> None:
    for key in ("window", "n_selected", "d_time", "d_spat", "d_attn", "encoder_hidden", "hidden"):
        if getattr(config, key) != getattr(stored, key):
            raise ConfigError(
                f"checkpoint was built with {key}={getattr(stored, key)}, run config says {getattr(config, key)}"
            )


def _arm_config(base: RunConfig, **changes) -> RunConfig:
    merged = base.to_dict()
    merged.update(changes)
    return RunConfig(**merged).validate()


def _run_arm(name: str, group: str, config: RunConfig, panel: SeriesPanel, split: SplitSpec) -> dict:
    work = panel.copy()
    result = run_training(work, SplitSpec(split.train_end, split.valid_end, split.test_end), config)
    _, _, test = make_windows(work, result.split, config.window)
    report = evaluate(result.model, test, result.selection, "test")
    row = {"arm": name, "group": group, "rmse": report.rmse, "mae": report.mae, "detection_f1": np.nan}
    if work.anomaly_labels is not None and result.reports:
        flagged = set().union(*(r.positions for r in result.reports))
        row["detection_f1"] = detection_quality(flagged, work.anomaly_labels).f1
    return row


def cmd_ablate(config: RunConfig, arms: str) -> int:
    out = _out_dir(config)
    panel, split = _load_config_panel(config)
    groups = [g.strip() for g in arms.split(",") if g.strip()]
    unknown = set(groups) - {"components", "delta", "fill", "methods"}
    if unknown:
        raise ConfigError(f"unknown ablation arm groups: {sorted(unknown)}")

    rows = [_run_arm("full", "baseline", config, panel, split)]
    if "components" in groups:
        for name, switch in ABLATION_COMPONENTS.items():
            rows.append(_run_arm(name, "components", _arm_config(config, **{switch: False}), panel, split))
    if "delta" in groups:
        for value in DELTA_GRID:
            rows.append(_run_arm(f"delta_{value}", "delta", _arm_config(config, delta=value), panel, split))
    if "fill" in groups:
        for strategy in FILL_GRID:
            rows.append(_run_arm(f"fill_{strategy}", "fill", _arm_config(config, fill_strategy=strategy), panel, split))
    frame = pd.DataFrame(rows, columns=["arm", "group", "rmse", "mae", "detection_f1"])
    frame.to_csv(out / "ablation.csv", index=False)

    if "methods" in groups:
        _run_method_comparison(config, panel, split, out)
    print(f"wrote {len(rows)} ablation rows to {out / 'ablation.csv'}")
    return 0


def _run_method_comparison(config: RunConfig, panel: SeriesPanel, split: SplitSpec, out: Path) -> None:
    """Side-by-side of embedded cleaning vs. two-stage preprocessing baselines."""
    rows = []

    def measure(method: str, work: SeriesPanel, arm_config: RunConfig, positions=None):
        result = run_training(work, SplitSpec(split.train_end, split.valid_end, split.test_end), arm_config)
        _, _, test = make_windows(work, result.split, arm_config.window)
        report = evaluate(result.model, test, result.selection, "test")
        f1 = np.nan
        flagged = positions
        if flagged is None and result.reports:
            flagged = set().union(*(r.positions for r in result.reports))
        if work.anomaly_labels is not None and flagged is not None:
            f1 = detection_quality(flagged, work.anomaly_labels).f1
        rows.append({"method": method, "rmse": report.rmse, "mae": report.mae, "detection_f1": f1})

    plain = _arm_config(config, ead_enabled=False)
    measure("stts", panel.copy(), plain, positions=set())
    measure("stts_ead", panel.copy(), config)
    cleaned, pos3 = three_sigma_clean(panel.copy(), split.train_end, config.fill_strategy)
    measure("stts_3sigma", cleaned, plain, positions=pos3)
    cleanedw, posw = ewma_clean(
        panel.copy(), split.train_end,
        alpha=config.ewma_alpha, k=config.ewma_k, fill_strategy=config.fill_strategy,
    )
    measure("stts_ewma", cleanedw, plain, positions=posw)
    pd.DataFrame(rows, columns=["method", "rmse", "mae", "detection_f1"]).to_csv(out / "comparison.csv", index=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cleants", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_checkpoint in (
        ("generate", False),
        ("train", False),
        ("evaluate", True),
        ("detect", True),
        ("ablate", False),
    ):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=None, help="flat key=value config file")
        cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config key (repeatable)")
        if needs_checkpoint:
            cmd.add_argument("--checkpoint", required=True)
        if name == "train":
            cmd.add_argument("--no-ead", action="store_true", help="disable embedded anomaly detection")
        if name == "ablate":
            cmd.add_argument("--arms", default="components,delta,fill",
                             help="comma list from: components,delta,fill,methods")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.from_sources(args.config, args.set)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "train":
            if args.no_ead:
                config.ead_enabled = False
            return cmd_train(config)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.checkpoint)
        if args.command == "detect":
            return cmd_detect(config, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(config, args.arms)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, PanelError, DivergenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
