"""Frequency-branch transforms: last-step padding, orthonormal DCT-II, truncation.

All functions operate on the second-to-last axis (time) and accept numpy arrays
or torch tensors of shape ``(..., T, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class SpectralSequence:
    coeffs: object  # (..., l, d)
    source_length: int

    @property
    def length(self) -> int:
        return self.coeffs.shape[-2]


@lru_cache(maxsize=64)
def _dct_matrix_np(length: int) -> np.ndarray:
    n = np.arange(length)[:, None]
    t = np.arange(length)[None, :]
    mat = np.cos(np.pi / (2 * length) * (2 * t + 1) * n) * np.sqrt(2.0 / length)
    mat[0] /= np.sqrt(2.0)
    mat.setflags(write=False)
    return mat


def dct_matrix(length: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``G`` with ``coeffs = G @ x``.

    Row ``n`` is ``s_n cos(pi (2t+1) n / 2T)`` with ``s_0 = sqrt(1/T)`` and
    ``s_n = sqrt(2/T)`` otherwise, so ``G.T @ G = I``.
    """
    if length < 1:
        raise ConfigError(f"transform length must be >= 1, got {length}")
    return _dct_matrix_np(length)


def _apply(mat: np.ndarray, seq):
    if isinstance(seq, torch.Tensor):
        return torch.tensor(mat, dtype=seq.dtype, device=seq.device) @ seq
    return mat @ np.asarray(seq)


def pad_last(seq, t_pred: int):
    """Append ``t_pred`` copies of the final row along the time axis."""
    if seq.shape[-2] < 1:
        raise ConfigError("cannot pad an empty sequence")
    if t_pred < 0:
        raise ConfigError(f"t_pred must be non-negative, got {t_pred}")
    if t_pred == 0:
        return seq
    last = seq[..., -1:, :]
    if isinstance(seq, torch.Tensor):
        reps = [1] * (seq.dim() - 2) + [t_pred, 1]
        return torch.cat([seq, last.repeat(*reps)], dim=-2)
    reps = [1] * (seq.ndim - 2) + [t_pred, 1]
    return np.concatenate([seq, np.tile(last, reps)], axis=-2)


def dct(seq):
    return _apply(dct_matrix(seq.shape[-2]), seq)


def idct(coeffs):
    return _apply(dct_matrix(coeffs.shape[-2]).T, coeffs)


def truncate(coeffs, length: int) -> SpectralSequence:
    total = coeffs.shape[-2]
    if not 1 <= length <= total:
        raise ConfigError(f"truncation length must be in [1, {total}], got {length}")
    return SpectralSequence(coeffs[..., :length, :], total)


def zero_fill(spectrum: SpectralSequence):
    """Restore a truncated spectrum to full length with zeros for idct."""
    coeffs = spectrum.coeffs
    missing = spectrum.source_length - spectrum.length
    if missing == 0:
        return coeffs
    shape = list(coeffs.shape)
    shape[-2] = missing
    if isinstance(coeffs, torch.Tensor):
        return torch.cat([coeffs, coeffs.new_zeros(shape)], dim=-2)
    return np.concatenate([coeffs, np.zeros(shape, dtype=coeffs.dtype)], axis=-2)


def frequency_branch(features, t_pred: int, length: int):
    """Pad, transform and truncate an observed feature block in one call."""
    return truncate(dct(pad_last(features, t_pred)), length).coeffs
