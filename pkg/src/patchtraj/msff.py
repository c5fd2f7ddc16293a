"""Multi-scale feature fusion: expert averaging and a 1-D feature pyramid.

Scale features are ordered coarse to fine (largest patch size, fewest tokens
first). The top-down pass feeds each coarser result into the next finer level;
the enhancement pass then resamples back from the finest level, and the finest
enhanced level is the branch output.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError
from .mspe import ExpertTokens


def average_experts(experts: Sequence[ExpertTokens], weights: torch.Tensor, batch: int) -> torch.Tensor:
    """Gate-weighted mean of the selected experts' tokens for one scale.

    ``weights`` is ``(B, N_e)`` and is already renormalised over the selected
    experts, so equal weights give the plain mean.
    """
    if not experts:
        raise ContractError("no expert produced tokens for this scale")
    first = experts[0].tokens
    out = first.new_zeros((batch,) + tuple(first.shape[1:]))
    for e in experts:
        w = weights[e.rows, e.expert].view(-1, 1, 1)
        out = out.index_add(0, e.rows, w * e.tokens)
    return out


def fit_length(x: torch.Tensor, count: int) -> torch.Tensor:
    """Right-pad by edge replication or right-truncate ``(B, N, D)`` to ``count`` tokens."""
    n = x.shape[1]
    if n == count:
        return x
    if n > count:
        return x[:, :count]
    return torch.cat([x, x[:, -1:].expand(-1, count - n, -1)], dim=1)


def resample(x: torch.Tensor, count: int) -> torch.Tensor:
    """Linear interpolation of ``(B, N, D)`` along tokens to ``count`` tokens."""
    if x.shape[1] == count:
        return x
    y = F.interpolate(x.transpose(1, 2), size=count, mode="linear", align_corners=False)
    return fit_length(y.transpose(1, 2), count)


class TokenConv(nn.Module):
    """Same-length Conv1d over the token axis of ``(B, N, D)``."""

    def __init__(self, dim: int, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        return self.conv(x.transpose(1, 2)).transpose(1, 2)

    def set_identity(self):
        with torch.no_grad():
            self.conv.weight.zero_()
            centre = self.conv.kernel_size[0] // 2
            self.conv.weight[:, :, centre] = torch.eye(self.conv.out_channels)
            self.conv.bias.zero_()


def top_down(lateral: Sequence[torch.Tensor], convs: Sequence[TokenConv]) -> list[torch.Tensor]:
    out = []
    for i, (feat, conv) in enumerate(zip(lateral, convs)):
        if i == 0:
            out.append(conv(feat))
        else:
            out.append(conv(feat + resample(out[-1], feat.shape[1])))
    return out


def enhance(levels: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    out = [None] * len(levels)
    out[-1] = levels[-1]
    for i in range(len(levels) - 2, -1, -1):
        out[i] = levels[i] + resample(out[i + 1], levels[i].shape[1])
    return out


def select_output(levels: Sequence[torch.Tensor]) -> torch.Tensor:
    return max(levels, key=lambda t: t.shape[1])


class FeaturePyramid(nn.Module):
    def __init__(self, num_scales: int, dim: int, kernel_size: int = 3):
        super().__init__()
        self.lateral = nn.ModuleList([TokenConv(dim, kernel_size) for _ in range(num_scales)])
        self.smooth = nn.ModuleList([TokenConv(dim, kernel_size) for _ in range(num_scales)])

    def forward(self, scale_features: Sequence[torch.Tensor]) -> torch.Tensor:
        lateral = [conv(f) for conv, f in zip(self.lateral, scale_features)]
        return select_output(enhance(top_down(lateral, self.smooth)))

    def fuse(self, per_scale: Sequence[Sequence[ExpertTokens]], weights: torch.Tensor, batch: int) -> torch.Tensor:
        """Average experts per scale, then run the pyramid. ``weights`` is (B, N_e, M)."""
        feats = [average_experts(e, weights[:, :, m], batch) for m, e in enumerate(per_scale)]
        return self(feats)
