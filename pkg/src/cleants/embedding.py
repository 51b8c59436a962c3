"""Per-series spatiotemporal embeddings.

The temporal part is a momentum-updated state: each update blends the stored
vector with the window encoder's output for that series. The spatial part is
a two-layer graph convolution over learnable node features. Downstream
similarity ranking selects auxiliary series by cosine similarity.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
import torch
from torch import nn

ZERO_NORM_EPS = 1e-12


class WindowEncoder(nn.Module):
    """One-hidden-layer map from a length-P window to a d1-dim local summary."""

    def __init__(self, window_len: int, d_time: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(window_len, hidden),
            nn.ReLU(),
            nn.Linear(hidden, d_time),
        )

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        out = self.net(windows)
        if not torch.isfinite(out).all():
            raise FloatingPointError("window encoder produced non-finite output")
        return out


class SpatialEncoder(nn.Module):
    """Two graph-convolution layers over learnable node features.

    Uses the symmetric-normalized adjacency with self-loops,
    A_hat = D^{-1/2} (A + I) D^{-1/2}; self-loops keep isolated nodes
    well-defined (degree never zero).
    """

    def __init__(self, graph: np.ndarray, d_spat: int):
        super().__init__()
        n = graph.shape[0]
        self.node_features = nn.Parameter(0.1 * torch.randn(n, d_spat))
        self.w1 = nn.Linear(d_spat, d_spat, bias=False)
        self.w2 = nn.Linear(d_spat, d_spat, bias=False)
        self.register_buffer(
            "a_hat", torch.as_tensor(normalized_adjacency(graph), dtype=torch.get_default_dtype())
        )

    def forward(self) -> torch.Tensor:
        a_hat = self.a_hat.to(self.node_features.dtype)
        h = torch.relu(a_hat @ self.w1(self.node_features))
        return a_hat @ self.w2(h)


def normalized_adjacency(graph: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}."""
    a = np.asarray(graph, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if not np.allclose(a, a.T):
        raise ValueError("adjacency must be symmetric")
    if np.diagonal(a).any():
        raise ValueError("adjacency must have a zero diagonal")
    a = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return d_inv_sqrt[:, None] * a * d_inv_sqrt[None, :]


class MomentumBank(nn.Module):
    """Stored temporal embeddings, one row per series, with momentum updates.

    ``update`` moves the buffer toward the encoder means with fixed weight
    gamma and never participates in gradient computation; ``blend`` returns
    the in-graph mixture used by a forward pass, where only the fresh encoder
    term carries gradients.
    """

    def __init__(self, n_series: int, d_time: int, gamma: float = 0.9, init_scale: float = 0.1):
        super().__init__()
        if not 0.0 <= gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {gamma}")
        self.gamma = gamma
        self.register_buffer("state", init_scale * torch.randn(n_series, d_time))

    @torch.no_grad()
    def update(self, series_idx: torch.Tensor, encoded_means: torch.Tensor) -> None:
        """state[i] <- gamma * state[i] + (1 - gamma) * encoded_means row for each series."""
        if not torch.isfinite(encoded_means).all():
            raise FloatingPointError("non-finite encoder output in momentum update")
        state = self.state
        state[series_idx] = self.gamma * state[series_idx] + (1 - self.gamma) * encoded_means.to(state.dtype)

    @torch.no_grad()
    def update_from_windows(self, encoder: WindowEncoder, series_idx: torch.Tensor,
                            windows: torch.Tensor) -> None:
        """Group a batch's windows by series, encode, and update with per-series means."""
        encoded = encoder(windows)
        uniq, inverse = torch.unique(series_idx, return_inverse=True)
        sums = torch.zeros(uniq.size(0), encoded.size(1), dtype=encoded.dtype)
        sums.index_add_(0, inverse, encoded)
        counts = torch.zeros(uniq.size(0), dtype=encoded.dtype).index_add_(
            0, inverse, torch.ones(series_idx.size(0), dtype=encoded.dtype)
        )
        self.update(uniq, sums / counts[:, None])

    def blend(self, series_idx: torch.Tensor, encoded: torch.Tensor) -> torch.Tensor:
        """gamma * stored (detached) + (1 - gamma) * fresh encoder output, in-graph."""
        stored = self.state[series_idx].detach().to(encoded.dtype)
        return self.gamma * stored + (1 - self.gamma) * encoded


def similarity(e_i: np.ndarray, e_j: np.ndarray) -> float:
    """Cosine similarity of two embedding vectors."""
    e_i = np.asarray(e_i, dtype=np.float64)
    e_j = np.asarray(e_j, dtype=np.float64)
    ni, nj = np.linalg.norm(e_i), np.linalg.norm(e_j)
    if ni < ZERO_NORM_EPS or nj < ZERO_NORM_EPS:
        raise ValueError("cannot rank a zero-norm embedding")
    return float(np.dot(e_i, e_j) / (ni * nj))


def similarity_matrix(embeddings: np.ndarray) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    if (norms < ZERO_NORM_EPS).any():
        bad = int(np.argmin(norms))
        raise ValueError(f"embedding row {bad} has zero norm")
    unit = e / norms[:, None]
    return unit @ unit.T


def select_auxiliary(target: int, embeddings: np.ndarray, n_selected: int) -> np.ndarray:
    """Indices of the selected block: target first, then the most similar series.

    Ties break toward the lower series index, so selection is deterministic.
    """
    n = embeddings.shape[0]
    if not 1 <= n_selected <= n:
        raise ValueError(f"need 1 <= M <= N, got M={n_selected}, N={n}")
    sims = similarity_matrix(embeddings)[target]
    others = np.array([j for j in range(n) if j != target], dtype=np.int64)
    order = others[np.lexsort((others, -sims[others]))]
    return np.concatenate(([target], order[: n_selected - 1])).astype(np.int64)


def selection_table(embeddings: np.ndarray, n_selected: int) -> np.ndarray:
    """Stacked select_auxiliary results for every target series (N x M)."""
    return np.stack([select_auxiliary(i, embeddings, n_selected) for i in range(embeddings.shape[0])])


def export_embeddings(embeddings: np.ndarray, series_ids: list[str], path) -> None:
    """Write embeddings as CSV with header ``series_id,e_0,...,e_{d-1}``."""
    d = embeddings.shape[1]
    frame = pd.DataFrame(embeddings, columns=[f"e_{k}" for k in range(d)])
    frame.insert(0, "series_id", series_ids)
    frame.to_csv(path, index=False)
