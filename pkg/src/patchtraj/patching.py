"""Non-overlapping multi-scale partitioning of branch sequences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ConfigError


@dataclass(frozen=True)
class PatchScaleSet:
    sizes: tuple[int, ...]  # strictly decreasing
    length: int

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(self.length // s for s in self.sizes)

    def __len__(self):
        return len(self.sizes)


def validate_scales(sizes: Iterable[int], length: int) -> PatchScaleSet:
    """Check every size divides ``length`` and order sizes coarse to fine."""
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ConfigError("at least one patch size is required")
    if length < 1:
        raise ConfigError(f"sequence length must be positive, got {length}")
    seen = set()
    for s in sizes:
        if s in seen:
            raise ConfigError(f"duplicate patch size {s}")
        seen.add(s)
        if s < 1:
            raise ConfigError(f"patch size must be positive, got {s}")
        if length % s:
            raise ConfigError(f"patch size {s} does not divide sequence length {length}")
    return PatchScaleSet(tuple(sorted(sizes, reverse=True)), length)


def partition(seq, size: int):
    """Reshape ``(..., L, d)`` to ``(..., L // size, size, d)``."""
    length = seq.shape[-2]
    if size < 1 or length % size:
        raise ConfigError(f"patch size {size} does not divide sequence length {length}")
    return seq.reshape(*seq.shape[:-2], length // size, size, seq.shape[-1])


def unpartition(patches):
    return patches.reshape(*patches.shape[:-3], patches.shape[-3] * patches.shape[-2], patches.shape[-1])


def multi_partition(seq, scales: PatchScaleSet) -> list:
    if seq.shape[-2] != scales.length:
        raise ConfigError(f"sequence length {seq.shape[-2]} does not match scale set length {scales.length}")
    return [partition(seq, s) for s in scales.sizes]
