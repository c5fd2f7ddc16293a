"""The full forecaster: dual branches, fusion, encoder, masked decoder and head."""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .cde import CrossDomainEnhancement
from .config import RunConfig
from .data import FEATURE_DIM
from .mspe import MultiScalePatchEmbedding, Selection
from .msff import FeaturePyramid
from .patching import validate_scales
from .spectral import frequency_branch


class RawEmbedding(nn.Module):
    """Per-timestep projection of the feature block with a residual MLP."""

    def __init__(self, channels: int, dim: int, length: int):
        super().__init__()
        self.inp = nn.Linear(channels, dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, dim))
        self.pos = nn.Parameter(torch.randn(length, dim) * 0.02)

    def embed(self, x):
        h = self.inp(x)
        return h + self.mlp(h)

    def forward(self, x):
        return self.embed(x) + self.pos


class Encoder(nn.Module):
    def __init__(self, dim: int, num_heads: int, num_blocks: int):
        super().__init__()
        self.blocks = nn.ModuleList([
            nn.TransformerEncoderLayer(dim, num_heads, 4 * dim, dropout=0.0, activation="gelu",
                                       batch_first=True, norm_first=True)
            for _ in range(num_blocks)
        ])
        self.norm = nn.LayerNorm(dim) if num_blocks else nn.Identity()

    def forward(self, tokens):
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens)


def causal_mask(length: int, device=None) -> torch.Tensor:
    """Boolean mask, ``True`` where position ``t`` may not see position ``s > t``."""
    return torch.triu(torch.ones(length, length, dtype=torch.bool, device=device), diagonal=1)


class Decoder(nn.Module):
    """Decodes ``K`` learnable token banks against the encoder memory.

    Every bank shares the decoder and head weights; banks differ only in their
    tokens. A causal mask keeps step ``t`` blind to later steps.
    """

    def __init__(self, dim: int, num_heads: int, num_blocks: int, t_pred: int, num_hypotheses: int):
        super().__init__()
        self.tokens = nn.Parameter(torch.randn(num_hypotheses, t_pred, dim) * 0.02)
        self.blocks = nn.ModuleList([
            nn.TransformerDecoderLayer(dim, num_heads, 4 * dim, dropout=0.0, activation="gelu",
                                       batch_first=True, norm_first=True)
            for _ in range(num_blocks)
        ])
        self.norm = nn.LayerNorm(dim) if num_blocks else nn.Identity()

    def forward(self, memory: torch.Tensor, tokens: torch.Tensor | None = None) -> torch.Tensor:
        """``memory`` (B, N, D) -> (B, K, T_pred, D)."""
        bank = self.tokens if tokens is None else tokens
        k, t, d = bank.shape
        b = memory.shape[0]
        x = bank.unsqueeze(0).expand(b, k, t, d).reshape(b * k, t, d)
        mem = memory.unsqueeze(1).expand(b, k, *memory.shape[1:]).reshape(b * k, *memory.shape[1:])
        mask = causal_mask(t, memory.device)
        for block in self.blocks:
            x = block(x, mem, tgt_mask=mask, tgt_is_causal=True)
        return self.norm(x).view(b, k, t, d)


class Head(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.hidden = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, 2)

    def forward(self, x):
        return self.out(F.gelu(self.hidden(x)))


class ForwardOutput(NamedTuple):
    trajectories: torch.Tensor  # (B, K, T_pred, 2), centred coordinates
    time_selection: Selection
    freq_selection: Selection
    encoder_tokens: int


class PatchTraj(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.time_scales = validate_scales(config.scales, config.t_obs)
        self.freq_scales = validate_scales(config.scales, config.spectral_len)
        self.time_mspe = MultiScalePatchEmbedding(self.time_scales, FEATURE_DIM, d, config.num_experts, config.top_k)
        self.freq_mspe = MultiScalePatchEmbedding(self.freq_scales, FEATURE_DIM, d, config.num_experts, config.top_k)
        self.time_fpn = FeaturePyramid(len(self.time_scales), d)
        self.freq_fpn = FeaturePyramid(len(self.freq_scales), d)
        self.cde = CrossDomainEnhancement(self.time_scales.counts[-1], d, config.num_heads,
                                          freq_tokens=self.freq_scales.counts[-1])
        self.raw = RawEmbedding(FEATURE_DIM, d, config.t_obs)
        self.encoder = Encoder(d, config.num_heads, config.num_blocks)
        self.decoder = Decoder(d, config.num_heads, config.num_blocks, config.t_pred, config.num_hypotheses)
        self.head = Head(d)

    @property
    def encoder_token_count(self) -> int:
        return self.time_scales.counts[-1] + self.freq_scales.counts[-1] + self.config.t_obs

    def branch(self, mspe: MultiScalePatchEmbedding, fpn: FeaturePyramid, x: torch.Tensor):
        per_scale, selection = mspe(x)
        return fpn.fuse(per_scale, selection.weights, x.shape[0]), selection

    def encode(self, features: torch.Tensor):
        spectrum = frequency_branch(features, self.config.t_pred, self.config.spectral_len)
        f_time, sel_t = self.branch(self.time_mspe, self.time_fpn, features)
        f_freq, sel_f = self.branch(self.freq_mspe, self.freq_fpn, spectrum)
        fused = self.cde(f_time, f_freq).fused
        tokens = torch.cat([fused, self.raw(features)], dim=1)
        return self.encoder(tokens), sel_t, sel_f

    def run(self, features: torch.Tensor) -> ForwardOutput:
        memory, sel_t, sel_f = self.encode(features)
        return ForwardOutput(self.head(self.decoder(memory)), sel_t, sel_f, memory.shape[1])

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """``features`` (B, T_obs, 6) -> hypotheses (B, K, T_pred, 2)."""
        return self.run(features).trajectories
