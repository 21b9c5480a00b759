"""Window displacement statistics and the dual-threshold state decision."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SD_COMBINERS = ("max", "mean", "norm")


class MotionState(str, enum.Enum):
    STATIC = "static"
    VIBRATION = "vibration"
    MOVING = "moving"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class DecisionThresholds:
    cumulative_thresh: float = 2.05
    sd_thresh: float = 0.23

    def __post_init__(self):
        if not (self.cumulative_thresh > 0 and self.sd_thresh > 0):
            raise ConfigError("decision thresholds must be positive")


@dataclass(frozen=True)
class WindowStats:
    mean_disp: float = 0.0
    sd_x: float = 0.0
    sd_y: float = 0.0
    mean_dx: float = 0.0
    mean_dy: float = 0.0
    n_tracks: int = 0


def _positions(traj):
    positions = traj.positions if hasattr(traj, "positions") else traj
    if len(positions) < 2:
        raise ValueError("displacement needs at least two positions")
    return positions


def trajectory_displacement(traj) -> float:
    """Straight-line distance between the earliest and latest retained positions."""
    positions = _positions(traj)
    (x0, y0), (x1, y1) = positions[0], positions[-1]
    return math.hypot(x1 - x0, y1 - y0)


def compute_window_stats(tracks) -> WindowStats:
    """Group mean displacement and per-axis population standard deviations."""
    if len(tracks) == 0:
        return WindowStats()
    seqs = [_positions(t) for t in tracks]
    first = np.array([p[0] for p in seqs], dtype=np.float64)
    last = np.array([p[-1] for p in seqs], dtype=np.float64)
    dx = last[:, 0] - first[:, 0]
    dy = last[:, 1] - first[:, 1]
    mean_dx = dx.mean()
    mean_dy = dy.mean()
    return WindowStats(
        mean_disp=float(np.hypot(dx, dy).mean()),
        sd_x=float(np.sqrt(np.mean((dx - mean_dx) ** 2))),
        sd_y=float(np.sqrt(np.mean((dy - mean_dy) ** 2))),
        mean_dx=float(mean_dx),
        mean_dy=float(mean_dy),
        n_tracks=len(tracks),
    )


def combined_sd(stats: WindowStats, how: str = "max") -> float:
    if how == "max":
        return max(stats.sd_x, stats.sd_y)
    if how == "mean":
        return 0.5 * (stats.sd_x + stats.sd_y)
    if how == "norm":
        return math.hypot(stats.sd_x, stats.sd_y)
    raise ConfigError(f"sd_combine must be one of {SD_COMBINERS}, got {how!r}")


def classify(stats: WindowStats, th: DecisionThresholds = DecisionThresholds(),
             min_tracks: int = 5, sd_combine: str = "max") -> MotionState:
    """Moving above the displacement threshold, else Vibration above the spread threshold.

    Equality at either threshold falls on the non-moving / static side.
    Fewer than ``min_tracks`` trajectories yields Indeterminate.
    """
    if stats.n_tracks < min_tracks:
        return MotionState.INDETERMINATE
    if stats.mean_disp > th.cumulative_thresh:
        return MotionState.MOVING
    if combined_sd(stats, sd_combine) > th.sd_thresh:
        return MotionState.VIBRATION
    return MotionState.STATIC
