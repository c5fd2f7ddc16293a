"""Best-of-K training losses and displacement metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError


@dataclass(frozen=True)
class LossBreakdown:
    marginal: torch.Tensor
    joint: torch.Tensor
    total: torch.Tensor
    lam: float


@dataclass(frozen=True)
class MetricReport:
    ade: float
    fde: float
    min_ade: float
    min_fde: float
    k: int
    horizon: int
    count: int = 0

    def csv_row(self, split: str, epoch: int) -> str:
        return f"{split},{epoch},{self.k},{self.ade:.6f},{self.fde:.6f},{self.min_ade:.6f},{self.min_fde:.6f}"


CSV_HEADER = "split,epoch,k,ade,fde,min_ade,min_fde"


def _check(truth, pred):
    if truth.ndim != 3 or pred.ndim != 4 or truth.shape[-1] != 2 or pred.shape[-1] != 2:
        raise ContractError(f"expected truth (N, T, 2) and predictions (N, K, T, 2), got "
                            f"{tuple(truth.shape)} and {tuple(pred.shape)}")
    if truth.shape[0] != pred.shape[0] or truth.shape[1] != pred.shape[2]:
        raise ContractError(f"truth {tuple(truth.shape)} and predictions {tuple(pred.shape)} disagree")


def hypothesis_distances(truth: torch.Tensor, pred: torch.Tensor, norm: str = "block") -> torch.Tensor:
    """Distance of every hypothesis to the truth, shape (N, K).

    ``block`` takes the L2 norm of the whole ``T x 2`` residual; ``per_step``
    sums the per-step Euclidean errors instead.
    """
    _check(truth, pred)
    residual = pred - truth.unsqueeze(1)
    if norm == "block":
        return residual.flatten(2).norm(dim=-1)
    if norm == "per_step":
        return residual.norm(dim=-1).sum(dim=-1)
    raise ContractError(f"unknown norm {norm!r}")


def marginal_loss(truth, pred, norm: str = "block") -> torch.Tensor:
    """Sum over agents of each agent's closest hypothesis."""
    dist = hypothesis_distances(truth, pred, norm)
    best = dist.argmin(dim=1, keepdim=True)  # first minimum on ties
    return dist.gather(1, best).sum()


def joint_loss(truth, pred, norm: str = "block") -> torch.Tensor:
    """Best single hypothesis index shared by all agents."""
    per_k = hypothesis_distances(truth, pred, norm).sum(dim=0)
    return per_k[per_k.argmin()]


def total_loss(truth, pred, lam: float = 0.5, norm: str = "block") -> LossBreakdown:
    if lam < 0:
        raise ContractError(f"lambda must be non-negative, got {lam}")
    dist = hypothesis_distances(truth, pred, norm)
    marginal = dist.gather(1, dist.argmin(dim=1, keepdim=True)).sum()
    per_k = dist.sum(dim=0)
    joint = per_k[per_k.argmin()]
    return LossBreakdown(marginal, joint, marginal + lam * joint, lam)


def displacement_errors(truth, pred) -> np.ndarray:
    """Per-step Euclidean errors (N, K, T) as float64.

    Uses ``sqrt(dx*dx + dy*dy)`` so every entry is fixed by IEEE rounding alone.
    """
    truth = torch.as_tensor(truth, dtype=torch.float64)
    pred = torch.as_tensor(pred, dtype=torch.float64)
    _check(truth, pred)
    return step_errors(pred.detach().numpy(), truth.detach().numpy()[:, None])


def step_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    dx = pred[..., 0] - truth[..., 0]
    dy = pred[..., 1] - truth[..., 1]
    return np.sqrt(dx * dx + dy * dy)


def _mean(values) -> float:
    # exactly rounded, so results do not depend on reduction order
    return math.fsum(values) / len(values)


def metrics(truth, pred, hypothesis: int = 0) -> MetricReport:
    """ADE/FDE of one hypothesis plus best-of-K minADE/minFDE.

    The best hypothesis is chosen separately for minADE and minFDE.
    """
    err = displacement_errors(truth, pred)
    return report_from_errors(err, hypothesis)


def report_from_errors(err: np.ndarray, hypothesis: int = 0) -> MetricReport:
    n, k, t = err.shape
    if n == 0:
        raise ContractError("cannot compute metrics over zero samples")
    err = np.asarray(err, dtype=np.float64)
    ade_k = np.array([[_mean(row) for row in agent] for agent in err.tolist()]).reshape(n, k)
    fde_k = err[:, :, -1]
    return MetricReport(
        ade=_mean(ade_k[:, hypothesis].tolist()),
        fde=_mean(fde_k[:, hypothesis].tolist()),
        min_ade=_mean(ade_k.min(axis=1).tolist()),
        min_fde=_mean(fde_k.min(axis=1).tolist()),
        k=k,
        horizon=t,
        count=n,
    )
