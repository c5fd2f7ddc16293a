"""Central finite-difference check of the analytic gradients of the total loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import RunConfig
from .data import generate_synthetic
from .model import PatchTraj
from .objectives import total_loss
from .training import make_batch

# top-level module prefix -> reported group
GROUPS = (
    ("time_mspe.gate", "gate"),
    ("freq_mspe.gate", "gate"),
    ("time_mspe.experts", "experts"),
    ("freq_mspe.experts", "experts"),
    ("time_fpn", "pyramid"),
    ("freq_fpn", "pyramid"),
    ("cde", "cross_attention"),
    ("raw", "raw_embedding"),
    ("encoder", "encoder"),
    ("decoder", "decoder"),
    ("head", "head"),
)


def group_of(name: str) -> str:
    for prefix, group in GROUPS:
        if name.startswith(prefix + "."):
            return group
    raise KeyError(name)


@dataclass
class GroupResult:
    group: str
    size: int
    analytic_norm: float
    rel_error: float
    passed: bool


def randomize(model: PatchTraj, generator: torch.Generator, scale: float = 0.2):
    """Perturb every parameter so routing and hypothesis choice are free of ties."""
    with torch.no_grad():
        for name, p in model.named_parameters():
            noise = torch.randn(p.shape, generator=generator, dtype=p.dtype)
            if name.endswith("gate.out.weight") or name.endswith("gate.out.bias"):
                p.copy_(noise)
            else:
                p.add_(scale * noise)


def tiny_problem(config: RunConfig, samples: int = 3, seed: int = 0):
    windows = generate_synthetic(samples, "constant-velocity,sinusoid,turn", seed,
                                 config.t_obs, config.t_pred, config.dt)
    return make_batch(windows, torch.float64)


def check_gradients(config: RunConfig, h: float = 1e-5, tol: float = 1e-4, seed: int = 0,
                    samples: int = 3, floor: float = 1e-6) -> list[GroupResult]:
    """Compare backprop against central differences for every parameter entry.

    The relative error of a group is ``|fd - an| / max(|fd|, |an|, floor)``
    over the group's flattened gradient. ``floor`` keeps groups whose true
    gradient is zero (the gate when ``top_k == 1``) from dividing round-off by
    round-off.
    """
    config = config.replace(precision="double")
    torch.manual_seed(seed)
    model = PatchTraj(config).double()
    randomize(model, torch.Generator().manual_seed(seed + 1))
    model.train()
    batch = tiny_problem(config, samples, seed)

    def loss_fn():
        return total_loss(batch.future, model(batch.features), config.lambda_joint, config.loss_norm).total

    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    params = dict(model.named_parameters())
    analytic = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for n, p in params.items()}

    numeric = {}
    with torch.no_grad():
        for name, p in params.items():
            fd = torch.zeros_like(p)
            flat, out = p.view(-1), fd.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                out[i] = (up - down) / (2 * h)
            numeric[name] = fd

    results = []
    for group in dict.fromkeys(g for _, g in GROUPS):
        names = [n for n in params if group_of(n) == group]
        an = torch.cat([analytic[n].flatten() for n in names])
        fd = torch.cat([numeric[n].flatten() for n in names])
        scale = max(an.norm().item(), fd.norm().item(), floor)
        rel = (an - fd).norm().item() / scale
        results.append(GroupResult(group, an.numel(), an.norm().item(), rel, rel < tol))
    return results
