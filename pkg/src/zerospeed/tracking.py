"""Trajectory lifecycle over a sliding window: create, update, eliminate, reset."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import SequencingError

WINDOW_SIZE = 5
LINK_RADIUS = 1.0
MAX_MISSES = 2


@dataclass
class Trajectory:
    id: int
    positions: deque
    last_frame: int
    miss_count: int = 0

    @property
    def endpoint(self) -> tuple[float, float]:
        return self.positions[-1]

    @property
    def start(self) -> tuple[float, float]:
        return self.positions[0]


@dataclass
class TrackStore:
    """Live trajectories of one camera stream. Single writer."""

    window: int = WINDOW_SIZE
    link_radius: float = LINK_RADIUS
    current: int = 0
    next_id: int = 0
    tracks: dict[int, Trajectory] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tracks)

    def _new_track(self, points, frame: int) -> Trajectory:
        traj = Trajectory(self.next_id, deque(points, maxlen=self.window), frame)
        self.tracks[traj.id] = traj
        self.next_id += 1
        return traj

    def step(self, inlier_matches, kps_prev, kps_curr, frame: int) -> "TrackStore":
        """Fold the inlier matches between ``frame - 1`` and ``frame`` into the store.

        A match extends the trajectory whose endpoint lies within
        ``link_radius`` (strictly) of its frame t-1 keypoint; pairs are taken
        greedily by distance, then trajectory id, then match order, each side
        used at most once. Each unclaimed match starts a new trajectory at its
        frame-t point. Trajectories not extended accrue a miss and are dropped
        after two consecutive misses.

        ``kps_prev`` / ``kps_curr`` are ``(n, 2)`` point arrays or objects
        with a ``points()`` method.
        """
        if frame != self.current + 1:
            raise SequencingError(f"tracker at frame {self.current}, got step for frame {frame}")
        prev_pts = _as_points(kps_prev)
        curr_pts = _as_points(kps_curr)
        matches = np.asarray(inlier_matches)
        q = np.asarray(matches["query_index"], dtype=np.int64)
        t = np.asarray(matches["train_index"], dtype=np.int64)
        p_pts = prev_pts[q] if len(q) else np.zeros((0, 2))
        c_pts = curr_pts[t] if len(t) else np.zeros((0, 2))

        live = list(self.tracks.values())
        claimed = [False] * len(q)
        extended = [False] * len(live)
        curr_list = c_pts.tolist()
        if live and len(q):
            ends = np.array([tr.positions[-1] for tr in live], dtype=np.float64)
            tree = cKDTree(ends)
            pairs = tree.sparse_distance_matrix(cKDTree(p_pts), self.link_radius, output_type="ndarray")
            pairs = pairs[pairs["v"] < self.link_radius]
            if len(pairs):
                ids = np.array([tr.id for tr in live], dtype=np.int64)[pairs["i"]]
                order = np.lexsort((pairs["j"], ids, pairs["v"]))
                for ti, mj in zip(pairs["i"][order].tolist(), pairs["j"][order].tolist()):
                    if claimed[mj] or extended[ti]:
                        continue
                    claimed[mj] = True
                    extended[ti] = True
                    tr = live[ti]
                    tr.positions.append(tuple(curr_list[mj]))
                    tr.last_frame = frame
                    tr.miss_count = 0

        for tr, ext in zip(live, extended):
            if not ext:
                tr.miss_count += 1
                if tr.miss_count >= MAX_MISSES:
                    del self.tracks[tr.id]

        for mj, taken in enumerate(claimed):
            if not taken:
                self._new_track([tuple(curr_list[mj])], frame)
        self.current = frame
        return self

    def reset(self, frame: int | None = None) -> "TrackStore":
        """Drop every trajectory; the id counter is kept.

        ``frame`` re-anchors the store so the next step is ``frame + 1``.
        """
        self.tracks.clear()
        if frame is not None:
            self.current = frame
        return self

    def valid_trajectories(self, min_len: int = 2) -> list[Trajectory]:
        """Trajectories updated at the current frame with at least ``min_len`` positions."""
        return [
            tr for tr in self.tracks.values()
            if len(tr.positions) >= min_len and tr.miss_count == 0 and tr.last_frame == self.current
        ]


def _as_points(kps) -> np.ndarray:
    if hasattr(kps, "points"):
        return kps.points()
    return np.asarray(kps, dtype=np.float64).reshape(-1, 2)


def reset(store: TrackStore) -> TrackStore:
    return store.reset()


def valid_trajectories(store: TrackStore, min_len: int = 2) -> list[Trajectory]:
    return store.valid_trajectories(min_len)
