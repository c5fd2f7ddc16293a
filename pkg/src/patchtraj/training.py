"""Training loop, checkpoints, evaluation and prediction export."""

from __future__ import annotations

import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import RunConfig
from .data import (SceneConfig, TrajectoryWindow, build_windows, center_window, contiguous_runs, featurize,
                   generate_synthetic, group_by_agent, parse_trajectory_file, read_trajectory_path,
                   train_val_split)
from .errors import ConfigError, TrainingDiverged
from .model import PatchTraj
from .objectives import CSV_HEADER, LossBreakdown, MetricReport, report_from_errors, step_errors, total_loss

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "patchtraj-checkpoint"
CHECKPOINT_VERSION = 1


def configure_threads() -> int:
    """Cap torch worker threads from ``PATCHTRAJ_THREADS`` (default 1)."""
    raw = os.environ.get("PATCHTRAJ_THREADS", "1")
    try:
        n = max(1, int(raw))
    except ValueError:
        raise ConfigError(f"PATCHTRAJ_THREADS must be an integer, got {raw!r}") from None
    torch.set_num_threads(n)
    return n


def dtype_for(config: RunConfig) -> torch.dtype:
    return torch.float64 if config.precision == "double" else torch.float32


def learning_rate(epoch: int, base_lr: float, interval: int) -> float:
    """Rate for a zero-based ``epoch``: halved once per completed interval."""
    return base_lr * 2.0 ** -(epoch // interval)


@dataclass
class Batch:
    features: torch.Tensor  # (N, T_obs, 6), centred
    future: torch.Tensor    # (N, T_pred, 2), centred
    offsets: torch.Tensor   # (N, 2), world position of the last observation

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.features[idx], self.future[idx], self.offsets[idx])


def make_batch(windows: Sequence[TrajectoryWindow], dtype=torch.float32) -> Batch:
    feats, futs, offs = [], [], []
    for w in windows:
        centred, offset = center_window(w)
        feats.append(featurize(centred))
        futs.append(centred.fut)
        offs.append(offset)
    if not windows:
        raise ConfigError("no trajectory windows available")
    as_t = lambda a: torch.tensor(np.stack(a), dtype=dtype)
    return Batch(as_t(feats), as_t(futs), as_t(offs))


def load_windows(config: RunConfig, data: str | None = None) -> list[TrajectoryWindow]:
    """Windows from ``data`` (or ``config.data``), falling back to the synthetic corpus."""
    source = config.data if data is None else data
    if source:
        scene = SceneConfig(config.t_obs, config.t_pred, config.dt, config.stride, config.frame_step)
        return build_windows(read_trajectory_path(source), scene)
    return generate_synthetic(config.synthetic_count, config.synthetic_kind, config.synthetic_seed,
                              config.t_obs, config.t_pred, config.dt)


def split_windows(config: RunConfig, windows) -> dict[str, list]:
    train, val = train_val_split(windows, config.val_fraction)
    return {"train": train, "val": val, "all": list(windows)}


@torch.no_grad()
def predict_world(model: PatchTraj, batch: Batch, chunk: int = 256) -> torch.Tensor:
    """Hypotheses in world coordinates, (N, K, T_pred, 2)."""
    model.eval()
    outs = [model(batch.features[i:i + chunk]) for i in range(0, len(batch), chunk)]
    return torch.cat(outs) + batch.offsets[:, None, None, :]


def evaluate_batch(model: PatchTraj, batch: Batch, k: int | None = None) -> MetricReport:
    pred = predict_world(model, batch)
    if k is not None:
        if not 1 <= k <= pred.shape[1]:
            raise ConfigError(f"k must be in [1, {pred.shape[1]}], got {k}")
        pred = pred[:, :k]
    truth = batch.future + batch.offsets[:, None, :]
    err = step_errors(pred.double().numpy(), truth.double().numpy()[:, None])
    return report_from_errors(err)


@dataclass
class History:
    metrics: list[str] = field(default_factory=list)  # CSV rows
    losses: list[tuple] = field(default_factory=list)  # (epoch, lr, loss, marginal, joint)


class Trainer:
    """Owns the model, optimizer and shuffling RNG for one run."""

    def __init__(self, config: RunConfig, out_dir: str | Path | None = None):
        config.validate()
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.dtype = dtype_for(config)
        torch.manual_seed(config.seed)
        self.model = PatchTraj(config).to(self.dtype)
        self.optimizer = torch.optim.AdamW(
            self.model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2),
            eps=config.eps, weight_decay=config.weight_decay)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.epoch = 0
        self.best = math.inf
        self.history = History()

    # -- single steps -------------------------------------------------

    def step(self, batch: Batch, epoch: int = 0, batch_index: int = 0) -> LossBreakdown:
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        pred = self.model(batch.features)
        loss = total_loss(batch.future, pred, self.config.lambda_joint, self.config.loss_norm)
        if not torch.isfinite(loss.total):
            raise TrainingDiverged(epoch, batch_index, self.config.seed, self._dump(batch, epoch, batch_index))
        loss.total.backward()
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        self.optimizer.step()
        return loss

    def _dump(self, batch: Batch, epoch: int, batch_index: int):
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"diverged_e{epoch}_b{batch_index}.pt"
        torch.save({"features": batch.features, "future": batch.future, "offsets": batch.offsets,
                    "epoch": epoch, "batch_index": batch_index, "seed": self.config.seed}, path)
        return path

    def train_epoch(self, batch: Batch) -> tuple[float, float, float]:
        lr = learning_rate(self.epoch, self.config.lr, self.config.lr_interval)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        order = torch.randperm(len(batch), generator=self.generator)
        total = marginal = joint = 0.0
        for i, start in enumerate(range(0, len(batch), self.config.batch_size)):
            loss = self.step(batch.subset(order[start:start + self.config.batch_size]), self.epoch, i)
            total += loss.total.item()
            marginal += loss.marginal.item()
            joint += loss.joint.item()
        self.history.losses.append((self.epoch, lr, total, marginal, joint))
        self.epoch += 1
        return total, marginal, joint

    # -- full run -----------------------------------------------------

    def fit(self, train: Batch, val: Batch | None = None, progress=None) -> History:
        select_split, select_batch = ("val", val) if val is not None and len(val) else ("train", train)
        while self.epoch < self.config.epochs:
            epoch = self.epoch
            loss = self.train_epoch(train)
            report = evaluate_batch(self.model, select_batch)
            self.history.metrics.append(report.csv_row(select_split, epoch))
            if progress is not None:
                progress(epoch, loss, report)
            if self.out_dir is not None:
                self._write_logs()
                if report.min_ade < self.best:
                    self.best = report.min_ade
                    self.save(self.out_dir / "best.pt")
            elif report.min_ade < self.best:
                self.best = report.min_ade
        if self.out_dir is not None:
            self.save(self.out_dir / "final.pt")
        return self.history

    def _write_logs(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "metrics.csv").write_text("\n".join([CSV_HEADER, *self.history.metrics]) + "\n")
        rows = ["epoch,lr,loss,marginal,joint"] + [
            f"{e},{lr!r},{t!r},{m!r},{j!r}" for e, lr, t, m, j in self.history.losses]
        (self.out_dir / "loss.csv").write_text("\n".join(rows) + "\n")

    # -- checkpoints --------------------------------------------------

    def state(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "byteorder": "little",
            "config": self.config.to_dict(),
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "epoch": self.epoch,
            "best_min_ade": self.best,
            "rng": self.generator.get_state(),
            "history": {"metrics": list(self.history.metrics), "losses": [list(r) for r in self.history.losses]},
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state(), path)
        return path

    def load_state(self, state: dict):
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.epoch = int(state["epoch"])
        self.best = float(state["best_min_ade"])
        self.generator.set_state(state["rng"])
        self.history = History(list(state["history"]["metrics"]),
                               [tuple(r) for r in state["history"]["losses"]])

    @classmethod
    def from_checkpoint(cls, path: str | Path, out_dir=None, **overrides) -> "Trainer":
        state = read_checkpoint(path)
        config = RunConfig.from_dict(state["config"])
        if overrides:
            config = config.replace(**overrides)
        trainer = cls(config, out_dir)
        trainer.load_state(state)
        return trainer


def read_checkpoint(path: str | Path) -> dict:
    if sys.byteorder != "little":
        raise RuntimeError("checkpoints are little-endian; big-endian hosts are not supported")
    state = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(state, dict) or state.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a patchtraj checkpoint")
    if state.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {state.get('version')!r}")
    return state


def load_model(path: str | Path) -> PatchTraj:
    state = read_checkpoint(path)
    config = RunConfig.from_dict(state["config"])
    model = PatchTraj(config).to(dtype_for(config))
    model.load_state_dict(state["model"])
    model.eval()
    return model


def train(config: RunConfig, out_dir: str | Path | None = None, resume: str | Path | None = None,
          progress=None) -> Trainer:
    """Train from scratch (or resume) and return the finished trainer."""
    config.validate()
    windows = load_windows(config)
    splits = split_windows(config, windows)
    if not splits["train"]:
        raise ConfigError("training split is empty")
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, out_dir, epochs=config.epochs)
    else:
        trainer = Trainer(config, out_dir)
    dtype = trainer.dtype
    val = make_batch(splits["val"], dtype) if splits["val"] else None
    trainer.fit(make_batch(splits["train"], dtype), val, progress)
    return trainer


def evaluate(checkpoint: str | Path, data: str | None = None, split: str = "all",
             k: int | None = None) -> MetricReport:
    """Metrics of a checkpoint on a data path or, with ``data=None``, its own corpus split."""
    model = load_model(checkpoint)
    config = model.config
    windows = load_windows(config, data) if data else split_windows(config, load_windows(config))[split]
    if not windows:
        raise ConfigError(f"no windows of length {config.t_obs}+{config.t_pred} in the requested data")
    return evaluate_batch(model, make_batch(windows, dtype_for(config)), k)


def predict_file(checkpoint: str | Path, input_path: str | Path, out_path: str | Path) -> dict:
    """Forecast every agent of an ingest-format file from its last ``t_obs`` frames.

    Writes ``agent_id hypothesis frame x y`` records and returns the per-agent
    observations and forecasts (world coordinates).
    """
    model = load_model(checkpoint)
    config = model.config

    histories = {}
    with open(input_path) as fh:
        detections = parse_trajectory_file(fh)
    for agent, track in sorted(group_by_agent(detections).items()):
        run = contiguous_runs(track, config.frame_step)[-1]
        if len(run) < config.t_obs:
            log.warning("agent %d: only %d contiguous frames, need %d; skipped", agent, len(run), config.t_obs)
            continue
        tail = run[-config.t_obs:]
        histories[agent] = (np.array([(d.x, d.y) for d in tail]), tail[-1].frame_id)

    results = {}
    lines = []
    if histories:
        windows = [TrajectoryWindow(obs, np.zeros((config.t_pred, 2)), agent, config.dt)
                   for agent, (obs, _) in histories.items()]
        pred = predict_world(model, make_batch(windows, dtype_for(config))).double().numpy()
        for (agent, (obs, last_frame)), hyps in zip(histories.items(), pred):
            results[agent] = (obs, hyps)
            for h, traj in enumerate(hyps):
                for step, (x, y) in enumerate(traj, start=1):
                    lines.append(f"{agent} {h} {last_frame + step * config.frame_step} {x:.6f} {y:.6f}")
    Path(out_path).write_text("\n".join(lines) + ("\n" if lines else ""))
    return results
