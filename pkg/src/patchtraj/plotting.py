"""Figures written next to the CSV reports: forecasts and training curves."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

OBS_COLOR = "#1f4e79"
TRUTH_COLOR = "#2e7d32"
HYP_COLOR = "#c62828"


def figsize(columns: int, rows: int, panel: float = 2.6):
    return (panel * columns, panel * rows)


def _trajectory_axes(ax, obs, hyps, truth=None, title=None):
    for i, h in enumerate(hyps):
        path = np.vstack([obs[-1:], h])
        ax.plot(path[:, 0], path[:, 1], color=HYP_COLOR, lw=0.7, alpha=0.35,
                label="hypotheses" if i == 0 else None)
    ax.plot(obs[:, 0], obs[:, 1], "-o", color=OBS_COLOR, ms=2, lw=1.2, label="observed")
    if truth is not None:
        path = np.vstack([obs[-1:], truth])
        ax.plot(path[:, 0], path[:, 1], "-", color=TRUTH_COLOR, lw=1.2, label="future")
    ax.set_aspect("equal", adjustable="datalim")
    if title:
        ax.set_title(title)


def plot_forecasts(observed: Sequence[np.ndarray], hypotheses: Sequence[np.ndarray], path: str | Path,
                   truth: Sequence[np.ndarray] | None = None, titles: Sequence[str] | None = None,
                   max_panels: int = 9) -> Path:
    """Grid of panels, one per agent: history, all hypotheses and (optionally) the true future."""
    n = min(len(observed), max_panels)
    cols = min(3, max(n, 1))
    rows = max(1, math.ceil(n / cols))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=figsize(cols, rows), squeeze=False)
        for i, ax in enumerate(axes.flat):
            if i >= n:
                ax.axis("off")
                continue
            _trajectory_axes(ax, observed[i], hypotheses[i], None if truth is None else truth[i],
                             None if titles is None else titles[i])
        axes.flat[0].legend(loc="best", frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_training_curve(losses: Sequence[tuple], metric_rows: Sequence[str], path: str | Path) -> Path:
    """Loss (log scale) and minADE over epochs, side by side."""
    epochs = [r[0] for r in losses]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_ade) = plt.subplots(1, 2, figsize=figsize(2, 1, 3.0))
        ax_loss.semilogy(epochs, [r[2] for r in losses], color=OBS_COLOR, lw=1.0)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("total loss")
        if metric_rows:
            parsed = [row.split(",") for row in metric_rows]
            ax_ade.plot([int(p[1]) for p in parsed], [float(p[5]) for p in parsed], color=HYP_COLOR, lw=1.0)
            ax_ade.set_title(f"{parsed[-1][0]} split")
        ax_ade.set_xlabel("epoch")
        ax_ade.set_ylabel("minADE (m)")
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
