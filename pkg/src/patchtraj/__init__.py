"""Dual-branch (time/DCT) patch-based pedestrian trajectory forecasting."""

from .config import RunConfig, load_config, parse_config
from .model import PatchTraj

__all__ = ["PatchTraj", "RunConfig", "load_config", "parse_config"]
__version__ = "0.1.0"
