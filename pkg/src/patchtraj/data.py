"""Trajectory ingestion: text parsing, windowing, features and synthetic scenes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import ConfigError, ParseError

log = logging.getLogger(__name__)

FEATURE_DIM = 6
SYNTHETIC_KINDS = ("constant-velocity", "sinusoid", "turn")


@dataclass(frozen=True)
class RawDetection:
    frame_id: int
    agent_id: int
    x: float
    y: float


@dataclass(frozen=True)
class SceneConfig:
    """Window geometry.

    ``frame_step`` is the frame-id increment between consecutive samples of the
    same agent (1 for dense annotations, 10 for the raw ETH-UCY releases).
    """

    t_obs: int = 8
    t_pred: int = 12
    dt: float = 0.4
    stride: int = 1
    frame_step: int = 1

    def __post_init__(self):
        for name in ("t_obs", "t_pred", "stride", "frame_step"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")

    @property
    def total(self) -> int:
        return self.t_obs + self.t_pred


@dataclass(frozen=True, eq=False)
class TrajectoryWindow:
    obs: np.ndarray  # (t_obs, 2)
    fut: np.ndarray  # (t_pred, 2)
    agent_id: int
    dt: float
    start_frame: int = 0

    def __post_init__(self):
        if self.obs.ndim != 2 or self.obs.shape[1] != 2 or self.obs.shape[0] < 1:
            raise ConfigError(f"obs must be (T_obs, 2), got {self.obs.shape}")
        if self.fut.ndim != 2 or self.fut.shape[1] != 2:
            raise ConfigError(f"fut must be (T_pred, 2), got {self.fut.shape}")

    def translated(self, offset) -> "TrajectoryWindow":
        offset = np.asarray(offset, dtype=np.float64)
        return replace(self, obs=self.obs + offset, fut=self.fut + offset)


def parse_trajectory_file(stream: TextIO | Iterable[str]) -> list[RawDetection]:
    """Read ``frame_id agent_id x y`` records, one per non-empty line.

    Frame and agent ids may be written as floats (``780.0``) as long as they are
    integral. Lines starting with ``#`` are comments.
    """
    detections = []
    for line_no, line in enumerate(stream, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = text.split()
        if len(fields) != 4:
            raise ParseError(line_no, f"expected 4 fields, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise ParseError(line_no, f"non-numeric field in {text!r}") from None
        frame, agent, x, y = values
        if not all(np.isfinite(values)):
            raise ParseError(line_no, "non-finite value")
        if frame != int(frame) or agent != int(agent):
            raise ParseError(line_no, "frame_id and agent_id must be integers")
        if frame < 0:
            raise ParseError(line_no, "frame_id must be non-negative")
        detections.append(RawDetection(int(frame), int(agent), x, y))
    return detections


def read_trajectory_path(path: str | Path) -> list[RawDetection]:
    """Parse a file, or every ``*.txt`` file of a directory in sorted order."""
    path = Path(path)
    files = sorted(path.glob("*.txt")) if path.is_dir() else [path]
    detections = []
    for f in files:
        with open(f) as fh:
            detections.extend(parse_trajectory_file(fh))
    return detections


def group_by_agent(detections: Sequence[RawDetection]) -> dict[int, list[RawDetection]]:
    tracks: dict[int, list[RawDetection]] = {}
    for det in detections:
        tracks.setdefault(det.agent_id, []).append(det)
    for agent, track in tracks.items():
        track.sort(key=lambda d: d.frame_id)
        frames = [d.frame_id for d in track]
        if len(set(frames)) != len(frames):
            raise ConfigError(f"agent {agent} has duplicate frame ids")
    return tracks


def contiguous_runs(track: Sequence[RawDetection], frame_step: int) -> list[list[RawDetection]]:
    runs: list[list[RawDetection]] = []
    for det in track:
        if runs and det.frame_id - runs[-1][-1].frame_id == frame_step:
            runs[-1].append(det)
        else:
            runs.append([det])
    return runs


def build_windows(detections: Sequence[RawDetection], config: SceneConfig) -> list[TrajectoryWindow]:
    """Cut every agent's contiguous runs into obs/future windows.

    Windows start every ``config.stride`` samples within a run. Spans that would
    cross a gap are skipped.
    """
    windows = []
    for agent, track in sorted(group_by_agent(detections).items()):
        for run in contiguous_runs(track, config.frame_step):
            if len(run) < config.total:
                continue
            xy = np.array([(d.x, d.y) for d in run], dtype=np.float64)
            for start in range(0, len(run) - config.total + 1, config.stride):
                span = xy[start:start + config.total]
                windows.append(TrajectoryWindow(
                    obs=span[:config.t_obs].copy(),
                    fut=span[config.t_obs:].copy(),
                    agent_id=agent,
                    dt=config.dt,
                    start_frame=run[start].frame_id,
                ))
    return windows


def featurize(window: TrajectoryWindow) -> np.ndarray:
    """Return the (T_obs, 6) feature block ``x, y, dx, dy, vx, vy``.

    Displacement at the first step is zero; velocity is displacement over ``dt``
    in meters per second.
    """
    if not window.dt > 0:
        raise ConfigError(f"dt must be positive, got {window.dt}")
    pos = window.obs
    disp = np.zeros_like(pos)
    disp[1:] = pos[1:] - pos[:-1]
    return np.concatenate([pos, disp, disp / window.dt], axis=1)


def center_window(window: TrajectoryWindow) -> tuple[TrajectoryWindow, np.ndarray]:
    """Translate so the last observed position sits at the origin."""
    offset = window.obs[-1].copy()
    return window.translated(-offset), offset


def uncenter(window: TrajectoryWindow, offset) -> TrajectoryWindow:
    return window.translated(offset)


def uncenter_points(points: np.ndarray, offset) -> np.ndarray:
    return np.asarray(points) + np.asarray(offset)


def _law(kind: str, rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
    origin = rng.uniform(-5.0, 5.0, size=2)
    heading = rng.uniform(0.0, 2 * np.pi)
    speed = rng.uniform(0.5, 1.5)
    direction = np.array([np.cos(heading), np.sin(heading)])
    if kind == "constant-velocity":
        return origin + np.outer(t, speed * direction)
    if kind == "sinusoid":
        normal = np.array([-direction[1], direction[0]])
        amp = rng.uniform(0.2, 0.8)
        omega = rng.uniform(0.5, 1.5)
        phase = rng.uniform(0.0, 2 * np.pi)
        sway = amp * (np.sin(omega * t + phase) - np.sin(phase))
        return origin + np.outer(t, speed * direction) + np.outer(sway, normal)
    if kind == "turn":
        rate = rng.uniform(0.1, 0.4) * rng.choice([-1.0, 1.0])
        radius = speed / rate
        angle = heading + rate * t
        center = origin + radius * np.array([-direction[1], direction[0]])
        return center + radius * np.stack([np.sin(angle), -np.cos(angle)], axis=1)
    raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")


def generate_synthetic(count: int, kind: str, seed: int, t_obs: int = 8, t_pred: int = 12,
                       dt: float = 0.4) -> list[TrajectoryWindow]:
    """Sample ``count`` windows from a closed-form motion law.

    ``kind`` may also be a comma-separated list of kinds, assigned round-robin.
    Observation and future are evaluated from the same law, so the future is an
    exact continuation of the observed motion.
    """
    kinds = [k.strip() for k in kind.split(",")]
    for k in kinds:
        if k not in SYNTHETIC_KINDS:
            raise ConfigError(f"unknown synthetic kind {k!r}; expected one of {SYNTHETIC_KINDS}")
    if count < 0:
        raise ConfigError(f"count must be non-negative, got {count}")
    rng = np.random.default_rng(seed)
    t = np.arange(t_obs + t_pred, dtype=np.float64) * dt
    windows = []
    for i in range(count):
        xy = _law(kinds[i % len(kinds)], rng, t)
        windows.append(TrajectoryWindow(obs=xy[:t_obs], fut=xy[t_obs:], agent_id=i, dt=dt))
    return windows


def train_val_split(windows: Sequence, val_fraction: float = 0.2) -> tuple[list, list]:
    """Deterministic split by window index: the trailing fraction goes to validation."""
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in [0, 1), got {val_fraction}")
    n_val = int(round(len(windows) * val_fraction))
    cut = len(windows) - n_val
    return list(windows[:cut]), list(windows[cut:])
