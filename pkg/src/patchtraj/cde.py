"""Cross-domain enhancement between the time and frequency branch tokens."""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
import torch.nn as nn

from .errors import ConfigError, ContractError


class EnhancedPair(NamedTuple):
    time_tokens: torch.Tensor
    freq_tokens: torch.Tensor
    fused: torch.Tensor  # token-axis concatenation [time; freq]


class CrossAttention(nn.Module):
    """Multi-head scaled dot-product attention from ``queries`` onto ``keys_values``.

    Scores use the per-head width ``D / H``. The output projection has no bias so
    that zero value projections give a zero output.
    """

    def __init__(self, dim: int, num_heads: int = 4):
        super().__init__()
        if dim % num_heads:
            raise ConfigError(f"model width {dim} is not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim, bias=False)

    def _heads(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.num_heads, self.head_dim).transpose(1, 2)

    def attention(self, queries, keys_values):
        """Attention probabilities ``(B, H, P_q, P_kv)``."""
        q, k = self._heads(self.q(queries)), self._heads(self.k(keys_values))
        return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)

    def forward(self, queries, keys_values):
        if queries.shape[-1] != keys_values.shape[-1]:
            raise ContractError("query and key/value widths differ")
        probs = self.attention(queries, keys_values)
        mixed = probs @ self._heads(self.v(keys_values))
        b, _, n, _ = mixed.shape
        return self.out(mixed.transpose(1, 2).reshape(b, n, -1))


class CrossDomainEnhancement(nn.Module):
    """Learnable per-branch positions, then bidirectional cross-attention with residuals.

    ``freq_tokens`` defaults to ``time_tokens``; they differ only when the
    truncated spectrum is not as long as the observation.
    """

    def __init__(self, time_tokens: int, dim: int, num_heads: int = 4, freq_tokens: int | None = None):
        super().__init__()
        self.num_tokens = {"time": time_tokens, "freq": freq_tokens or time_tokens}
        self.time_pos = nn.Parameter(torch.zeros(time_tokens, dim))
        self.freq_pos = nn.Parameter(torch.zeros(self.num_tokens["freq"], dim))
        self.time_to_freq = CrossAttention(dim, num_heads)
        self.freq_to_time = CrossAttention(dim, num_heads)

    def add_positional(self, tokens: torch.Tensor, branch: str) -> torch.Tensor:
        if branch not in self.num_tokens:
            raise ValueError(f"unknown branch {branch!r}")
        if tokens.shape[1] != self.num_tokens[branch]:
            raise ContractError(f"expected {self.num_tokens[branch]} {branch} tokens, got {tokens.shape[1]}")
        if branch == "time":
            return tokens + self.time_pos
        return tokens + self.freq_pos

    def enhance_pair(self, f_time: torch.Tensor, f_freq: torch.Tensor) -> EnhancedPair:
        t = f_time + self.time_to_freq(f_time, f_freq)
        f = f_freq + self.freq_to_time(f_freq, f_time)
        return EnhancedPair(t, f, torch.cat([t, f], dim=1))

    def forward(self, f_time, f_freq) -> EnhancedPair:
        return self.enhance_pair(self.add_positional(f_time, "time"), self.add_positional(f_freq, "freq"))
