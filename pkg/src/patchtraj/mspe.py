"""Multi-scale patch embedding with a sparsely routed bank of experts.

A gate looks at the whole (unpatched) branch sequence and produces, for every
patch scale, a distribution over experts. Only the top-k experts per scale run;
each owns a projection and a positional table for that scale alone.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractError
from .patching import PatchScaleSet, multi_partition


class Selection(NamedTuple):
    mask: torch.Tensor     # (B, N_e, M) bool
    weights: torch.Tensor  # (B, N_e, M), renormalised over the selected experts, zero elsewhere


class ExpertTokens(NamedTuple):
    expert: int
    rows: torch.Tensor    # batch indices routed to this expert
    tokens: torch.Tensor  # (len(rows), P_m, D)


class GatingNetwork(nn.Module):
    """Flatten -> Linear -> GELU -> Linear -> softmax over experts, per scale."""

    def __init__(self, length: int, channels: int, hidden: int, num_experts: int, num_scales: int):
        super().__init__()
        self.num_experts = num_experts
        self.num_scales = num_scales
        self.hidden = nn.Linear(length * channels, hidden)
        self.out = nn.Linear(hidden, num_experts * num_scales)
        # routing starts uniform
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        h = F.gelu(self.hidden(x.flatten(1)))
        return self.out(h).view(-1, self.num_experts, self.num_scales)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=1)


def select_topk(weights: torch.Tensor, k: int) -> Selection:
    """Keep the ``k`` largest gate weights per (sequence, scale).

    Ties go to the lower expert index. The kept weights are renormalised to sum
    to one; gradients flow through the renormalisation.
    """
    num_experts = weights.shape[1]
    if not 1 <= k <= num_experts:
        raise ConfigError(f"top-k must be in [1, {num_experts}], got {k}")
    order = torch.sort(weights.detach(), dim=1, descending=True, stable=True).indices
    mask = torch.zeros_like(weights, dtype=torch.bool)
    mask.scatter_(1, order[:, :k], True)
    kept = weights * mask
    return Selection(mask, kept / kept.sum(dim=1, keepdim=True))


class ExpertBank(nn.Module):
    """One projection ``S_m * d -> D`` and one ``P_m x D`` positional table per (expert, scale)."""

    def __init__(self, scales: PatchScaleSet, channels: int, dim: int, num_experts: int):
        super().__init__()
        self.scales = scales
        self.channels = channels
        self.num_experts = num_experts
        self.proj = nn.ModuleList([
            nn.ModuleList([nn.Linear(size * channels, dim) for _ in range(num_experts)])
            for size in scales.sizes
        ])
        self.pos = nn.ParameterList([
            nn.Parameter(torch.randn(num_experts, count, dim) * 0.02) for count in scales.counts
        ])

    def embed_scale(self, patches: torch.Tensor, mask: torch.Tensor, m: int) -> list[ExpertTokens]:
        """Run the experts selected in ``mask`` (B, N_e) on the scale-``m`` patches."""
        size, count = self.scales.sizes[m], self.scales.counts[m]
        if patches.shape[1:] != (count, size, self.channels):
            raise ContractError(
                f"scale {m} expects patches (B, {count}, {size}, {self.channels}), got {tuple(patches.shape)}")
        flat = patches.flatten(2)
        out = []
        for n in range(self.num_experts):
            rows = mask[:, n].nonzero(as_tuple=True)[0]
            if rows.numel() == 0:
                continue
            tokens = self.proj[m][n](flat[rows]) + self.pos[m][n]
            out.append(ExpertTokens(n, rows, tokens))
        return out


class MultiScalePatchEmbedding(nn.Module):
    def __init__(self, scales: PatchScaleSet, channels: int, dim: int, num_experts: int = 4, top_k: int = 2):
        super().__init__()
        if not 1 <= top_k <= num_experts:
            raise ConfigError(f"top-k must be in [1, {num_experts}], got {top_k}")
        self.scales = scales
        self.top_k = top_k
        self.dim = dim
        self.gate = GatingNetwork(scales.length, channels, dim, num_experts, len(scales))
        self.experts = ExpertBank(scales, channels, dim, num_experts)

    def forward(self, x: torch.Tensor):
        """Return per-scale expert tokens and the routing used.

        Output is a list over scales of ``list[ExpertTokens]`` together with the
        :class:`Selection`; feature fusion combines them.
        """
        selection = select_topk(self.gate(x), self.top_k)
        per_scale = [
            self.experts.embed_scale(patches, selection.mask[:, :, m], m)
            for m, patches in enumerate(multi_partition(x, self.scales))
        ]
        return per_scale, selection
