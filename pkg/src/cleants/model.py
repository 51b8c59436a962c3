"""Forecast network over a selected series block.

Pipeline per sample: blend per-series embeddings, run attention over the
window's timestamp columns and over its series rows, stack the input block
with both representations, mix them with a feature-wise transformer block,
integrate along time with an LSTM, then emit a next-step prediction and a
reconstruction of the target window.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from torch import nn

from .embedding import MomentumBank, SpatialEncoder, WindowEncoder

LEAKY_SLOPE = 0.2


class PairAttention(nn.Module):
    """Attention over a set of units u_1..u_K.

    Scores follow the attentive form: p_ij = a . leaky_relu(W [u_i, u_j]),
    alpha_i = softmax_j(p_ij), out_i = elu(sum_j alpha_ij u_j). ``w`` holds
    the full (d_attn x 2 d_unit) matrix; the two halves act on the query and
    key unit respectively.
    """

    def __init__(self, d_unit: int, d_attn: int):
        super().__init__()
        self.d_unit = d_unit
        self.w = nn.Parameter(torch.empty(d_attn, 2 * d_unit))
        self.a = nn.Parameter(torch.empty(d_attn))
        nn.init.xavier_uniform_(self.w)
        nn.init.uniform_(self.a, -1 / np.sqrt(d_attn), 1 / np.sqrt(d_attn))

    def forward(self, units: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """units: (B, K, d_unit) -> (attended (B, K, d_unit), alpha (B, K, K))."""
        if units.size(-1) != self.d_unit:
            raise ValueError(f"unit dim {units.size(-1)} != expected {self.d_unit}")
        w_query, w_key = self.w[:, : self.d_unit], self.w[:, self.d_unit :]
        left = units @ w_query.T          # (B, K, d_attn)
        right = units @ w_key.T
        pre = left.unsqueeze(2) + right.unsqueeze(1)   # (B, K, K, d_attn)
        scores = torch.nn.functional.leaky_relu(pre, LEAKY_SLOPE) @ self.a
        if not torch.isfinite(scores).all():
            raise FloatingPointError("non-finite attention scores")
        alpha = torch.softmax(scores, dim=2)
        attended = torch.nn.functional.elu(alpha @ units)
        return attended, alpha


class TemporalAttention(nn.Module):
    """Attention across the P timestamp columns of the block (units are M-vectors)."""

    def __init__(self, n_selected: int, d_attn: int):
        super().__init__()
        self.attn = PairAttention(n_selected, d_attn)

    def forward(self, block: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """block: (B, M, P) -> (H_time (B, M, P), alpha (B, P, P))."""
        columns = block.transpose(1, 2)           # (B, P, M)
        attended, alpha = self.attn(columns)
        return attended.transpose(1, 2), alpha


class SpatialAttention(nn.Module):
    """Attention across the M series rows, each row concatenated with its embedding.

    The aggregated unit has length P + d; a learned affine projection brings
    it back to length P so the result stacks with the other representations.
    """

    def __init__(self, window_len: int, d_embed: int, d_attn: int):
        super().__init__()
        self.d_embed = d_embed
        self.attn = PairAttention(window_len + d_embed, d_attn)
        self.project = nn.Linear(window_len + d_embed, window_len)

    def forward(self, block: torch.Tensor, embeddings: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """block: (B, M, P), embeddings: (B, M, d) -> (H_spat (B, M, P), alpha (B, M, M))."""
        if embeddings.size(-1) != self.d_embed:
            raise ValueError(f"embedding dim {embeddings.size(-1)} != expected {self.d_embed}")
        units = torch.cat([block, embeddings], dim=2)
        attended, alpha = self.attn(units)
        return self.project(attended), alpha


class FeatureMixer(nn.Module):
    """One transformer block over the stacked rows, treated as an unordered token set.

    Tokens have width P; no positional encoding, so the block is equivariant
    to token permutations. Uses 2 heads when P is even, 1 otherwise.
    """

    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.n_heads = 2 if width % 2 == 0 else 1
        self.q = nn.Linear(width, width)
        self.k = nn.Linear(width, width)
        self.v = nn.Linear(width, width)
        self.out = nn.Linear(width, width)
        self.norm1 = nn.LayerNorm(width)
        self.norm2 = nn.LayerNorm(width)
        self.ffn = nn.Sequential(nn.Linear(width, 4 * width), nn.ReLU(), nn.Linear(4 * width, width))

    def attention(self, tokens: torch.Tensor) -> torch.Tensor:
        """Multi-head self-attention sublayer output, before the residual path."""
        b, k, w = tokens.shape
        h, hd = self.n_heads, w // self.n_heads

        def split(x):
            return x.view(b, k, h, hd).transpose(1, 2)  # (B, h, K, hd)

        q, kk, v = split(self.q(tokens)), split(self.k(tokens)), split(self.v(tokens))
        scores = q @ kk.transpose(2, 3) / np.sqrt(hd)
        mixed = torch.softmax(scores, dim=3) @ v
        mixed = mixed.transpose(1, 2).reshape(b, k, w)
        return self.out(mixed)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.size(-1) != self.width:
            raise ValueError(f"token width {tokens.size(-1)} != expected {self.width}")
        x = self.norm1(tokens + self.attention(tokens))
        return self.norm2(x + self.ffn(x))


@dataclasses.dataclass
class NetworkConfig:
    """Build-time dimensions and ablation switches for the forecast network."""

    window_len: int
    n_selected: int
    n_series: int
    d_time: int = 32
    d_spat: int = 16
    d_attn: int = 32
    encoder_hidden: int = 64
    hidden: int = 64
    gamma: float = 0.9
    use_temporal_attention: bool = True
    use_spatial_attention: bool = True
    use_transformer: bool = True
    use_recurrent: bool = True

    def validate(self) -> None:
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if not 1 <= self.n_selected <= self.n_series:
            raise ValueError(f"need 1 <= M <= N, got M={self.n_selected}, N={self.n_series}")
        for name in ("d_time", "d_spat", "d_attn", "encoder_hidden", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclasses.dataclass
class ModelOutput:
    prediction: torch.Tensor      # (B,)
    reconstruction: torch.Tensor  # (B, P)
    hidden: torch.Tensor          # (B, hidden)


class ForecastNetwork(nn.Module):
    """Full model over a pre-selected block: embeddings, dual attention, integration, heads."""

    def __init__(self, config: NetworkConfig, graph: np.ndarray | None = None):
        super().__init__()
        config.validate()
        self.config = config
        p, m = config.window_len, config.n_selected

        self.encoder = WindowEncoder(p, config.d_time, config.encoder_hidden)
        self.bank = MomentumBank(config.n_series, config.d_time, config.gamma)
        self.spatial_encoder = None if graph is None else SpatialEncoder(graph, config.d_spat)
        self.d_embed = config.d_time + (config.d_spat if graph is not None else 0)

        self.temporal_attention = TemporalAttention(m, config.d_attn) if config.use_temporal_attention else None
        self.spatial_attention = SpatialAttention(p, self.d_embed, config.d_attn) if config.use_spatial_attention else None

        n_stack = 1 + int(config.use_temporal_attention) + int(config.use_spatial_attention)
        self.n_tokens = n_stack * m
        self.mixer = FeatureMixer(p) if config.use_transformer else None
        if config.use_recurrent:
            self.integrator = nn.LSTM(self.n_tokens, config.hidden, batch_first=True)
            self.pool = None
        else:
            self.integrator = None
            self.pool = nn.Linear(self.n_tokens, config.hidden)
        self.predictor = nn.Linear(config.hidden, 1)
        self.decoder = nn.LSTM(config.hidden, config.hidden, batch_first=True)
        self.decoder_out = nn.Linear(config.hidden, 1)

    # -- embedding access ----------------------------------------------------

    def blended_embeddings(self, block: torch.Tensor, series_sel: torch.Tensor) -> torch.Tensor:
        """Per-row embedding for the block: momentum-blended temporal part (the
        fresh encoder term stays in-graph) plus the spatial part when a graph
        was provided."""
        b, m, p = block.shape
        encoded = self.encoder(block.reshape(b * m, p)).reshape(b, m, -1)
        e_time = self.bank.blend(series_sel.reshape(-1), encoded.reshape(b * m, -1)).reshape(b, m, -1)
        if self.spatial_encoder is None:
            return e_time
        e_spat = self.spatial_encoder()[series_sel]
        return torch.cat([e_time, e_spat], dim=2)

    def full_embeddings(self) -> np.ndarray:
        """Current stored embeddings for every series (selection-time view)."""
        with torch.no_grad():
            e_time = self.bank.state
            if self.spatial_encoder is None:
                e = e_time
            else:
                e = torch.cat([e_time, self.spatial_encoder()], dim=1)
        return e.detach().cpu().numpy()

    # -- forward -------------------------------------------------------------

    def integrate(self, stacked: torch.Tensor) -> torch.Tensor:
        """(B, n_tokens, P) -> (B, hidden) by transformer mixing then time integration."""
        if stacked.size(1) != self.n_tokens:
            raise ValueError(f"expected {self.n_tokens} stacked rows, got {stacked.size(1)}")
        mixed = self.mixer(stacked) if self.mixer is not None else stacked
        steps = mixed.transpose(1, 2)  # (B, P, n_tokens)
        if self.integrator is not None:
            _, (h_n, _) = self.integrator(steps)
            return h_n[-1]
        return self.pool(steps.mean(dim=1))

    def decode(self, hidden: torch.Tensor) -> torch.Tensor:
        """Unroll the reconstruction decoder P steps from the integrated state."""
        b = hidden.size(0)
        context = hidden.unsqueeze(1).expand(b, self.config.window_len, hidden.size(1))
        out, _ = self.decoder(context)
        return self.decoder_out(out).squeeze(-1)

    def forward(self, block: torch.Tensor, series_sel: torch.Tensor) -> ModelOutput:
        """block: (B, M, P) selected windows, row 0 the target; series_sel: (B, M) panel indices."""
        b, m, p = block.shape
        if (m, p) != (self.config.n_selected, self.config.window_len):
            raise ValueError(
                f"block shape {(m, p)} incompatible with model (M={self.config.n_selected}, "
                f"P={self.config.window_len})"
            )
        parts = [block]
        if self.temporal_attention is not None:
            h_time, _ = self.temporal_attention(block)
            parts.append(h_time)
        if self.spatial_attention is not None:
            embeddings = self.blended_embeddings(block, series_sel)
            h_spat, _ = self.spatial_attention(block, embeddings)
            parts.append(h_spat)
        stacked = torch.cat(parts, dim=1)
        hidden = self.integrate(stacked)
        prediction = self.predictor(hidden).squeeze(-1)
        reconstruction = self.decode(hidden)
        return ModelOutput(prediction=prediction, reconstruction=reconstruction, hidden=hidden)


def joint_loss(
    output: ModelOutput,
    labels: torch.Tensor,
    target_windows: torch.Tensor,
    beta: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-sample L = beta * |Y - Y_hat| + (1 - beta) * window RMSE, averaged over the batch."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    l_pred = (labels - output.prediction).abs()
    l_rec = ((target_windows - output.reconstruction) ** 2).mean(dim=1).sqrt()
    loss = (beta * l_pred + (1 - beta) * l_rec).mean()
    return loss, l_pred.mean(), l_rec.mean()
