"""Multivariate time-series panels: ingestion, normalization, splits, persistence.

A panel is an N x T value matrix (one row per series) plus per-series ids,
an optional undirected entity graph, train-range z-normalization stats and,
for synthetic data, ground-truth anomaly labels.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pandas as pd

DEFAULT_TRAIN_FRAC = 0.7
DEFAULT_VALID_FRAC = 0.1


class PanelError(ValueError):
    """Raised for malformed panel data or violated panel invariants."""


@dataclasses.dataclass
class SplitSpec:
    """Chronological split boundaries: [0, train_end) / [train_end, valid_end) / [valid_end, test_end)."""

    train_end: int
    valid_end: int
    test_end: int

    def validate(self, window: int, n_timestamps: int) -> None:
        # valid/test ranges may be empty (train_end == valid_end == test_end), but never reordered
        if not window < self.train_end <= self.valid_end <= self.test_end <= n_timestamps:
            raise PanelError(
                f"invalid split: need window({window}) < train_end({self.train_end}) "
                f"<= valid_end({self.valid_end}) <= test_end({self.test_end}) <= T({n_timestamps})"
            )

    @classmethod
    def from_fractions(
        cls,
        n_timestamps: int,
        train_frac: float = DEFAULT_TRAIN_FRAC,
        valid_frac: float = DEFAULT_VALID_FRAC,
    ) -> "SplitSpec":
        train_end = int(round(train_frac * n_timestamps))
        valid_end = int(round((train_frac + valid_frac) * n_timestamps))
        return cls(train_end=train_end, valid_end=valid_end, test_end=n_timestamps)


class SeriesPanel:
    """Raw or z-normalized N x T panel with metadata.

    Mutation (anomaly fills) is only legal inside the training range and only
    at epoch boundaries; everything else treats ``values`` as read-only.
    """

    def __init__(
        self,
        values: np.ndarray,
        series_ids: list[str],
        graph: np.ndarray | None = None,
        anomaly_labels: np.ndarray | None = None,
    ):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise PanelError(f"panel values must be 2-D (N x T), got shape {values.shape}")
        if len(series_ids) != values.shape[0]:
            raise PanelError(
                f"{len(series_ids)} series ids for {values.shape[0]} rows"
            )
        if np.isnan(values).any():
            raise PanelError("panel values contain missing entries after ingestion")
        if not np.isfinite(values).all():
            raise PanelError("panel values contain non-finite entries")
        self.values = values
        self.series_ids = list(series_ids)
        self.graph = None if graph is None else self._check_graph(np.asarray(graph, dtype=np.float64))
        self.anomaly_labels = None if anomaly_labels is None else np.asarray(anomaly_labels, dtype=bool)
        if self.anomaly_labels is not None and self.anomaly_labels.shape != values.shape:
            raise PanelError("anomaly_labels shape must match values shape")
        # train-range z-normalization stats, set by normalize()
        self.norm_means: np.ndarray | None = None
        self.norm_stds: np.ndarray | None = None
        # samples whose label timestamp was dropped by the "remove" fill strategy
        self.train_exclusions: np.ndarray = np.zeros(values.shape, dtype=bool)

    # -- basic introspection ------------------------------------------------

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def n_timestamps(self) -> int:
        return self.values.shape[1]

    @property
    def is_normalized(self) -> bool:
        return self.norm_means is not None

    def index_of(self, series_id: str) -> int:
        try:
            return self.series_ids.index(series_id)
        except ValueError:
            raise PanelError(f"unknown series id {series_id!r}") from None

    def copy(self) -> "SeriesPanel":
        dup = SeriesPanel(
            self.values.copy(),
            list(self.series_ids),
            graph=None if self.graph is None else self.graph.copy(),
            anomaly_labels=None if self.anomaly_labels is None else self.anomaly_labels.copy(),
        )
        dup.norm_means = None if self.norm_means is None else self.norm_means.copy()
        dup.norm_stds = None if self.norm_stds is None else self.norm_stds.copy()
        dup.train_exclusions = self.train_exclusions.copy()
        return dup

    # -- graph --------------------------------------------------------------

    def _check_graph(self, graph: np.ndarray) -> np.ndarray:
        n = self.values.shape[0]
        if graph.shape != (n, n):
            raise PanelError(f"graph must be {n}x{n}, got {graph.shape}")
        if (graph < 0).any():
            raise PanelError("graph weights must be nonnegative")
        graph = np.maximum(graph, graph.T)  # symmetrize
        np.fill_diagonal(graph, 0.0)
        return graph

    # -- normalization ------------------------------------------------------

    def normalize(self, train_end: int) -> "SeriesPanel":
        """Z-normalize every series in place using mean/std of its [0, train_end) range."""
        if self.is_normalized:
            raise PanelError("panel is already normalized")
        if not 1 <= train_end <= self.n_timestamps:
            raise PanelError(f"train_end {train_end} out of range for T={self.n_timestamps}")
        train = self.values[:, :train_end]
        means = train.mean(axis=1)
        stds = train.std(axis=1)
        bad = np.flatnonzero(stds <= 0)
        if bad.size:
            raise PanelError(
                f"constant series (train-range std = 0): {[self.series_ids[i] for i in bad]}"
            )
        self.values -= means[:, None]
        self.values /= stds[:, None]
        self.norm_means = means
        self.norm_stds = stds
        return self

    def denormalize(self, series_index: int, values: np.ndarray | float) -> np.ndarray | float:
        """Map normalized values of one series back to raw units."""
        if not self.is_normalized:
            raise PanelError("panel was never normalized")
        return values * self.norm_stds[series_index] + self.norm_means[series_index]

    def denormalized_values(self) -> np.ndarray:
        if not self.is_normalized:
            return self.values.copy()
        return self.values * self.norm_stds[:, None] + self.norm_means[:, None]


# -- file I/O ----------------------------------------------------------------

def _read_panel_frame(path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={"series_id": str})
    except Exception as exc:
        raise PanelError(f"malformed panel file {path}: {exc}") from exc
    if "series_id" not in frame.columns:
        raise PanelError(f"panel file {path} is missing the series_id header column")
    if frame["series_id"].duplicated().any():
        raise PanelError("duplicate series ids in panel file")
    return frame


def load_panel(
    path,
    graph_path=None,
    labels_path=None,
    train_end: int | None = None,
    missing_policy: str = "reject",
) -> SeriesPanel:
    """Load a panel CSV (header ``series_id,t0,t1,...``), normalize, attach graph/labels.

    ``train_end`` bounds the range used for the z-normalization stats; when not
    given the default 70% train fraction is used. ``missing_policy`` is
    ``reject`` (default) or ``ffill``.
    """
    frame = _read_panel_frame(path)
    ids = frame["series_id"].tolist()
    values = frame.drop(columns=["series_id"]).to_numpy(dtype=np.float64)
    if values.shape[1] == 0:
        raise PanelError("panel file has no timestamp columns")
    if np.isnan(values).any():
        if missing_policy == "reject":
            n_missing = int(np.isnan(values).sum())
            raise PanelError(f"{n_missing} missing entries (missing_policy=reject)")
        if missing_policy == "ffill":
            values = pd.DataFrame(values).ffill(axis=1).to_numpy()
            if np.isnan(values).any():
                raise PanelError("missing entries at series start cannot be forward-filled")
        else:
            raise PanelError(f"unknown missing_policy {missing_policy!r}")

    graph = None
    if graph_path is not None:
        graph = load_graph(graph_path, ids)
    labels = None
    if labels_path is not None:
        labels = load_labels(labels_path, ids, values.shape[1])
    panel = SeriesPanel(values, ids, graph=graph, anomaly_labels=labels)
    if train_end is None:
        train_end = SplitSpec.from_fractions(panel.n_timestamps).train_end
    panel.normalize(train_end)
    return panel


def save_panel(panel: SeriesPanel, path, denormalized: bool = True) -> None:
    """Write a panel CSV with header ``series_id,t0,t1,...``."""
    values = panel.denormalized_values() if denormalized else panel.values
    frame = pd.DataFrame(values, columns=[f"t{j}" for j in range(panel.n_timestamps)])
    frame.insert(0, "series_id", panel.series_ids)
    frame.to_csv(path, index=False)


def load_graph(path, series_ids: list[str]) -> np.ndarray:
    """Load an undirected edge list ``id_a,id_b[,weight]`` into an adjacency matrix."""
    try:
        frame = pd.read_csv(path, dtype={"id_a": str, "id_b": str})
    except Exception as exc:
        raise PanelError(f"malformed graph file {path}: {exc}") from exc
    for col in ("id_a", "id_b"):
        if col not in frame.columns:
            raise PanelError(f"graph file {path} is missing the {col} column")
    index = {sid: i for i, sid in enumerate(series_ids)}
    n = len(series_ids)
    adj = np.zeros((n, n), dtype=np.float64)
    weights = frame["weight"] if "weight" in frame.columns else np.ones(len(frame))
    for a, b, w in zip(frame["id_a"], frame["id_b"], weights):
        if a not in index or b not in index:
            raise PanelError(f"graph edge ({a},{b}) references an unknown series id")
        i, j = index[a], index[b]
        if i == j:
            continue
        w = 1.0 if pd.isna(w) else float(w)
        adj[i, j] = max(adj[i, j], w)
        adj[j, i] = adj[i, j]
    return adj


def save_graph(graph: np.ndarray, series_ids: list[str], path) -> None:
    rows = []
    n = len(series_ids)
    for i in range(n):
        for j in range(i + 1, n):
            if graph[i, j] > 0:
                rows.append((series_ids[i], series_ids[j], graph[i, j]))
    pd.DataFrame(rows, columns=["id_a", "id_b", "weight"]).to_csv(path, index=False)


def load_labels(path, series_ids: list[str], n_timestamps: int) -> np.ndarray:
    """Load an anomaly label CSV of ``series_id,timestamp`` rows into a boolean matrix."""
    try:
        frame = pd.read_csv(path, dtype={"series_id": str})
    except Exception as exc:
        raise PanelError(f"malformed label file {path}: {exc}") from exc
    for col in ("series_id", "timestamp"):
        if col not in frame.columns:
            raise PanelError(f"label file {path} is missing the {col} column")
    index = {sid: i for i, sid in enumerate(series_ids)}
    labels = np.zeros((len(series_ids), n_timestamps), dtype=bool)
    for sid, t in zip(frame["series_id"], frame["timestamp"].astype(int)):
        if sid not in index:
            raise PanelError(f"label references an unknown series id {sid!r}")
        if not 0 <= t < n_timestamps:
            raise PanelError(f"label timestamp {t} out of range")
        labels[index[sid], t] = True
    return labels


def save_labels(labels: np.ndarray, series_ids: list[str], path) -> None:
    rows = [(series_ids[i], int(t)) for i, t in zip(*np.nonzero(labels))]
    pd.DataFrame(rows, columns=["series_id", "timestamp"]).to_csv(path, index=False)
