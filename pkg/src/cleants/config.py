"""Run configuration: defaults, flat key=value files, and CLI overrides.

Precedence is CLI overrides > config file > defaults. Every key is validated
with an explicit range; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .filling import FILL_STRATEGIES
from .synthetic import AnomalySpec, GraphSpec, SyntheticSpec


class ConfigError(ValueError):
    """Raised for unknown keys, malformed values or out-of-range settings."""


@dataclasses.dataclass
class RunConfig:
    # data
    panel_path: str = ""
    graph_path: str = ""
    labels_path: str = ""
    out_dir: str = "runs/default"
    missing_policy: str = "reject"
    train_frac: float = 0.7
    valid_frac: float = 0.1
    # model dimensions
    window: int = 16
    n_selected: int = 8
    d_time: int = 32
    d_spat: int = 16
    d_attn: int = 32
    encoder_hidden: int = 64
    hidden: int = 64
    # optimization
    gamma: float = 0.9
    beta: float = 0.5
    lr: float = 1e-3
    batch_size: int = 128
    n_epochs: int = 20
    seed: int = 0
    # embedded anomaly detection
    ead_enabled: bool = True
    ead_period: int = 5
    ead_offset: int = 0
    delta: float = 0.5
    threshold_mode: str = "global"
    threshold_prune: bool = False
    fill_strategy: str = "mean"
    fill_k: int = 3
    lowess_span: int = 10
    period: int = 7
    remove_mode: str = "label_only"
    # ablation switches
    use_selection: bool = True
    use_temporal_attention: bool = True
    use_spatial_attention: bool = True
    use_transformer: bool = True
    use_recurrent: bool = True
    # preprocessing baselines
    ewma_alpha: float = 0.1
    ewma_k: float = 3.0
    # synthetic generation
    syn_n_series: int = 20
    syn_n_timestamps: int = 400
    syn_period: int = 7
    syn_trend_scale: float = 0.5
    syn_noise_scale: float = 0.3
    syn_cross_corr: float = 0.4
    syn_seasonal_scale: float = 2.0
    syn_communities: int = 4
    syn_p_in: float = 1.0
    syn_p_out: float = 0.0
    syn_anomalies: str = "spike:6:28,dip:6:28"

    def validate(self) -> "RunConfig":
        checks = [
            (self.window >= 2, "window must be >= 2"),
            (self.n_selected >= 1, "n_selected must be >= 1"),
            (all(getattr(self, k) >= 1 for k in ("d_time", "d_spat", "d_attn", "encoder_hidden", "hidden")),
             "model dimensions must be >= 1"),
            (0.0 <= self.gamma <= 1.0, "gamma must be in [0, 1]"),
            (0.0 <= self.beta <= 1.0, "beta must be in [0, 1]"),
            (0.0 <= self.delta <= 1.0, "delta must be in [0, 1]"),
            (self.lr > 0, "lr must be positive"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.n_epochs >= 1, "n_epochs must be >= 1"),
            (self.ead_period >= 1, "ead_period must be >= 1"),
            (self.ead_offset >= 0, "ead_offset must be >= 0"),
            (0.0 < self.train_frac < 1.0, "train_frac must be in (0, 1)"),
            (0.0 < self.valid_frac < 1.0, "valid_frac must be in (0, 1)"),
            (self.train_frac + self.valid_frac < 1.0, "train_frac + valid_frac must be < 1"),
            (self.threshold_mode in ("global", "per_series"), "threshold_mode must be global or per_series"),
            (self.fill_strategy in FILL_STRATEGIES, f"fill_strategy must be one of {FILL_STRATEGIES}"),
            (self.remove_mode in ("label_only", "full_purge"), "remove_mode must be label_only or full_purge"),
            (self.missing_policy in ("reject", "ffill"), "missing_policy must be reject or ffill"),
            (self.fill_k >= 1, "fill_k must be >= 1"),
            (self.lowess_span >= 1, "lowess_span must be >= 1"),
            (self.period >= 2, "period must be >= 2"),
            (0.0 < self.ewma_alpha <= 1.0, "ewma_alpha must be in (0, 1]"),
            (self.ewma_k > 0, "ewma_k must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    # -- construction ---------------------------------------------------------

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: f.type if isinstance(f.type, type) else _resolve(f.type) for f in dataclasses.fields(cls)}

    @classmethod
    def from_sources(cls, config_path: str | None = None, overrides: list[str] | None = None) -> "RunConfig":
        values: dict[str, str] = {}
        if config_path:
            values.update(parse_flat_file(config_path))
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, _, raw = item.partition("=")
            values[key.strip()] = raw.strip()
        config = cls()
        types = cls.field_types()
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(config, key, _coerce(key, raw, types[key]))
        return config.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, path) -> None:
        lines = [f"{key} = {value}" for key, value in self.to_dict().items()]
        Path(path).write_text("\n".join(lines) + "\n")

    # -- derived objects --------------------------------------------------------

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            n_series=self.syn_n_series,
            n_timestamps=self.syn_n_timestamps,
            period=self.syn_period,
            trend_scale=self.syn_trend_scale,
            noise_scale=self.syn_noise_scale,
            cross_corr_strength=self.syn_cross_corr,
            seasonal_scale=self.syn_seasonal_scale,
            train_frac=self.train_frac,
            graph_spec=GraphSpec(self.syn_communities, self.syn_p_in, self.syn_p_out),
            anomaly_spec=parse_anomaly_list(self.syn_anomalies),
        )


def parse_flat_file(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = raw.strip()
    return values


def parse_anomaly_list(text: str) -> list[AnomalySpec]:
    """Parse ``kind:magnitude:count`` entries separated by commas; empty means none."""
    entries = []
    for part in filter(None, (chunk.strip() for chunk in text.split(","))):
        pieces = part.split(":")
        if len(pieces) != 3:
            raise ConfigError(f"anomaly entry {part!r} must be kind:magnitude:count")
        kind, magnitude, count = pieces
        entries.append(AnomalySpec(kind=kind.strip(), magnitude=float(magnitude), count=int(count)))
    return entries


def _resolve(annotation) -> type:
    mapping = {"int": int, "float": float, "bool": bool, "str": str}
    name = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
    if name not in mapping:
        raise ConfigError(f"unsupported config field type {annotation!r}")
    return mapping[name]


def _coerce(key: str, raw: str, target: type):
    if target is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return target(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {target.__name__}, got {raw!r}") from exc
