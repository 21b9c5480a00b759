"""Per-frame orchestration and the JSON-lines decision stream.

grayscale -> ROI crop -> CLAHE -> SIFT -> KNN + ratio -> RANSAC -> track step
-> window statistics -> state decision.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from bisect import bisect_right
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from . import decision, matching, sift
from ._alloc import retain_freed_memory
from .decision import DecisionThresholds, MotionState
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    InputError,
    InsufficientMatchesError,
    SequencingError,
    SignalParseError,
)
from .frames import list_frames, read_frame
from .imgproc import RoiSpec, apply_clahe, crop_roi, to_grayscale
from .matching import RansacParams
from .sift import SiftParams
from .tracking import TrackStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoiProfile:
    max_speed_kmh: float  # inf for the catch-all band
    roi: RoiSpec


@dataclass(frozen=True)
class PipelineConfig:
    roi_profiles: tuple[RoiProfile, ...] = (RoiProfile(math.inf, RoiSpec()),)
    sift: SiftParams = SiftParams()
    ransac: RansacParams = RansacParams()
    ratio: float = 0.75
    thresholds: DecisionThresholds = DecisionThresholds()
    window: int = 5
    min_track_len: int = 2
    min_tracks: int = 5
    sd_combine: str = "max"
    clahe_tiles: tuple[int, int] = (8, 8)
    clahe_clip: float = 2.0

    def __post_init__(self):
        if not self.roi_profiles:
            raise ConfigError("at least one ROI profile is required")
        speeds = [p.max_speed_kmh for p in self.roi_profiles]
        if speeds != sorted(speeds) or len(set(speeds)) != len(speeds):
            raise ConfigError("roi_profiles must be sorted by strictly ascending max_speed_kmh")
        if not math.isinf(speeds[-1]):
            raise ConfigError("the last ROI profile must cover all speeds (max_speed_kmh: null)")
        if not 0 < self.ratio <= 1:
            raise ConfigError("ratio must lie in (0, 1]")
        if self.window < 2 or self.min_track_len < 2 or self.min_track_len > self.window:
            raise ConfigError("need 2 <= min_track_len <= window")
        if self.min_tracks < 1:
            raise ConfigError("min_tracks must be >= 1")
        decision.combined_sd(decision.WindowStats(), self.sd_combine)
        if min(self.clahe_tiles) < 1 or not self.clahe_clip > 0:
            raise ConfigError("invalid CLAHE settings")

    def roi_for_speed(self, speed_kmh: float | None) -> RoiSpec:
        if speed_kmh is None:
            return self.roi_profiles[0].roi
        for profile in self.roi_profiles:
            if speed_kmh <= profile.max_speed_kmh:
                return profile.roi
        return self.roi_profiles[-1].roi

    def with_seed(self, seed: int) -> "PipelineConfig":
        return _replace(self, ransac=_replace(self.ransac, rng_seed=int(seed)))

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = {k: v for k, v in data.items() if not k.startswith("_")}
        known = {"roi_profiles", "sift", "ransac", "ratio", "thresholds", "window",
                 "min_track_len", "min_tracks", "sd_combine", "clahe"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        try:
            if "roi_profiles" in data:
                kw["roi_profiles"] = tuple(
                    RoiProfile(
                        math.inf if p.get("max_speed_kmh") is None else float(p["max_speed_kmh"]),
                        RoiSpec.from_sequence(p["roi"]),
                    )
                    for p in data["roi_profiles"]
                )
            if "sift" in data:
                kw["sift"] = SiftParams(**_section(data["sift"], SiftParams))
            if "ransac" in data:
                kw["ransac"] = RansacParams(**_section(data["ransac"], RansacParams))
            if "thresholds" in data:
                kw["thresholds"] = DecisionThresholds(**_section(data["thresholds"], DecisionThresholds))
            for key in ("ratio",):
                if key in data:
                    kw[key] = float(data[key])
            for key in ("window", "min_track_len", "min_tracks"):
                if key in data:
                    kw[key] = int(data[key])
            if "sd_combine" in data:
                kw["sd_combine"] = str(data["sd_combine"])
            if "clahe" in data:
                clahe = {k: v for k, v in data["clahe"].items() if not k.startswith("_")}
                if set(clahe) - {"tiles", "clip_limit"}:
                    raise ConfigError(f"unknown clahe keys: {sorted(set(clahe) - {'tiles', 'clip_limit'})}")
                tiles = clahe.get("tiles", [8, 8])
                kw["clahe_tiles"] = (int(tiles[0]), int(tiles[1]))
                kw["clahe_clip"] = float(clahe.get("clip_limit", 2.0))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from exc
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "roi_profiles": [
                {"max_speed_kmh": None if math.isinf(p.max_speed_kmh) else p.max_speed_kmh,
                 "roi": p.roi.as_list()}
                for p in self.roi_profiles
            ],
            "sift": asdict(self.sift),
            "ransac": asdict(self.ransac),
            "ratio": self.ratio,
            "thresholds": asdict(self.thresholds),
            "window": self.window,
            "min_track_len": self.min_track_len,
            "min_tracks": self.min_tracks,
            "sd_combine": self.sd_combine,
            "clahe": {"tiles": list(self.clahe_tiles), "clip_limit": self.clahe_clip},
        }


def _section(data, cls) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} section must be an object")
    data = {k: v for k, v in data.items() if not k.startswith("_")}
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return data


def _replace(obj, **changes):
    from dataclasses import replace
    return replace(obj, **changes)


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(data)


# -- speed signal -----------------------------------------------------------------


class SpeedSignal:
    """Step-hold speed series indexed by frame; 0 km/h before the first sample."""

    def __init__(self, frames: Iterable[int] = (), speeds: Iterable[float] = ()):
        pairs = sorted(zip(frames, speeds))
        self._frames = [f for f, _ in pairs]
        self._speeds = [s for _, s in pairs]

    def __call__(self, frame: int) -> float:
        i = bisect_right(self._frames, frame)
        return self._speeds[i - 1] if i else 0.0

    def __len__(self) -> int:
        return len(self._frames)


def load_speed_signal(path) -> SpeedSignal:
    """Parse a ``frame,speed_kmh`` CSV into a :class:`SpeedSignal`."""
    frames, speeds = [], []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read speed signal {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["frame", "speed_kmh"]:
            raise SignalParseError(f"{path}:1: expected header 'frame,speed_kmh', got {header!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise SignalParseError(f"{path}:{line}: expected 2 fields, got {len(row)}")
            try:
                frame = int(row[0])
                speed = float(row[1])
            except ValueError as exc:
                raise SignalParseError(f"{path}:{line}: {exc}") from exc
            if frame < 0 or not math.isfinite(speed):
                raise SignalParseError(f"{path}:{line}: invalid values {row!r}")
            frames.append(frame)
            speeds.append(speed)
    return SpeedSignal(frames, speeds)


# -- per-frame decisions ----------------------------------------------------------


def _sig6(v: float) -> float:
    return float(f"{v:.6g}")


@dataclass
class FrameDecision:
    frame: int
    state: MotionState
    mean_displacement_px: float = 0.0
    sd_x_px: float = 0.0
    sd_y_px: float = 0.0
    active_tracks: int = 0
    matched_points: int = 0
    latency_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "frame": int(self.frame),
            "state": MotionState(self.state).value,
            "mean_displacement_px": _sig6(self.mean_displacement_px),
            "sd_x_px": _sig6(self.sd_x_px),
            "sd_y_px": _sig6(self.sd_y_px),
            "active_tracks": int(self.active_tracks),
            "matched_points": int(self.matched_points),
            "latency_ms": _sig6(self.latency_ms),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "FrameDecision":
        return cls(
            frame=int(d["frame"]),
            state=MotionState(d["state"]),
            mean_displacement_px=float(d.get("mean_displacement_px", 0.0)),
            sd_x_px=float(d.get("sd_x_px", 0.0)),
            sd_y_px=float(d.get("sd_y_px", 0.0)),
            active_tracks=int(d.get("active_tracks", 0)),
            matched_points=int(d.get("matched_points", 0)),
            latency_ms=float(d.get("latency_ms", 0.0)),
        )


@dataclass
class _Features:
    frame: int
    keypoints: sift.Keypoints  # full-frame coordinates
    descriptors: np.ndarray


@dataclass
class MotionPipeline:
    """Stateful per-stream detector; feed frames in increasing index order."""

    config: PipelineConfig = field(default_factory=PipelineConfig)
    store: TrackStore = None
    _prev: _Features | None = None
    _last_frame: int | None = None
    last_window: decision.WindowStats | None = None

    def __post_init__(self):
        retain_freed_memory()
        if self.store is None:
            self.store = TrackStore(window=self.config.window)

    def features(self, pixels, speed_kmh: float | None = None) -> tuple[sift.Keypoints, np.ndarray]:
        cfg = self.config
        gray = to_grayscale(pixels)
        crop, (ox, oy) = crop_roi(gray, cfg.roi_for_speed(speed_kmh))
        enhanced = apply_clahe(crop, cfg.clahe_tiles[0], cfg.clahe_tiles[1], cfg.clahe_clip)
        kps, desc = sift.detect_and_describe(enhanced, cfg.sift)
        return kps.shifted(ox, oy), desc

    def process_frame(self, pixels, frame_index: int, speed_kmh: float | None = None) -> FrameDecision:
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise SequencingError(f"frame {frame_index} after frame {self._last_frame}")
        t0 = time.perf_counter()
        cfg = self.config
        kps, desc = self.features(pixels, speed_kmh)
        prev = self._prev
        contiguous = prev is not None and prev.frame == frame_index - 1
        result = FrameDecision(frame_index, MotionState.INDETERMINATE)
        self.last_window = None

        if not contiguous:
            self.store.reset(frame_index)
        else:
            try:
                good = matching.ratio_filter(matching.knn_match(prev.descriptors, desc, 2), cfg.ratio)
                rng = np.random.default_rng([cfg.ransac.rng_seed, frame_index])
                _, mask = matching.ransac_affine(
                    prev.keypoints.points()[good["query_index"]],
                    kps.points()[good["train_index"]],
                    cfg.ransac,
                    rng=rng,
                )
            except (InsufficientMatchesError, DegenerateGeometryError) as exc:
                log.debug("frame %d: %s; resetting tracks", frame_index, exc)
                self.store.reset(frame_index)
            else:
                inliers = good[mask]
                self.store.step(inliers, prev.keypoints, kps, frame_index)
                valid = self.store.valid_trajectories(cfg.min_track_len)
                stats = decision.compute_window_stats(valid)
                self.last_window = stats
                result.state = decision.classify(stats, cfg.thresholds, cfg.min_tracks, cfg.sd_combine)
                result.mean_displacement_px = stats.mean_disp
                result.sd_x_px = stats.sd_x
                result.sd_y_px = stats.sd_y
                result.active_tracks = stats.n_tracks
                result.matched_points = int(mask.sum())

        self._prev = _Features(frame_index, kps, desc)
        self._last_frame = frame_index
        result.latency_ms = (time.perf_counter() - t0) * 1e3
        return result

    def skip_frame(self, frame_index: int) -> FrameDecision:
        """Record an unusable frame: tracks are reset and the decision is Indeterminate."""
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise SequencingError(f"frame {frame_index} after frame {self._last_frame}")
        self._prev = None
        self._last_frame = frame_index
        self.store.reset(frame_index)
        return FrameDecision(frame_index, MotionState.INDETERMINATE)


@dataclass
class RunSummary:
    frames: int
    counts: dict[str, int]
    latency_mean_ms: float
    latency_std_ms: float
    errors: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(decisions: list[FrameDecision], errors: int = 0) -> RunSummary:
    counts = {s.value: 0 for s in MotionState}
    for d in decisions:
        counts[MotionState(d.state).value] += 1
    lat = np.array([d.latency_ms for d in decisions], dtype=np.float64)
    return RunSummary(
        frames=len(decisions),
        counts=counts,
        latency_mean_ms=float(lat.mean()) if len(lat) else 0.0,
        latency_std_ms=float(lat.std()) if len(lat) else 0.0,
        errors=errors,
    )


def iter_frames(source):
    """Yield ``(index, pixels_or_path)`` from a directory or an iterable of pairs/arrays."""
    if isinstance(source, (str, Path)):
        yield from list_frames(source)
        return
    for i, item in enumerate(source):
        if isinstance(item, tuple):
            yield item
        else:
            yield i, item


def run(source, config: PipelineConfig = PipelineConfig(), sink=None,
        speed_signal: SpeedSignal | None = None, strict: bool = False) -> RunSummary:
    """Process every frame of ``source``, emitting one decision per frame.

    ``sink`` is a text stream (one JSON object per line) or a callable taking
    a :class:`FrameDecision`. Unreadable frames abort when ``strict``;
    otherwise they are logged and reported Indeterminate.
    """
    pipe = MotionPipeline(config)
    decisions: list[FrameDecision] = []
    errors = 0
    any_frame = False
    for index, item in iter_frames(source):
        any_frame = True
        try:
            pixels = read_frame(item) if isinstance(item, (str, Path)) else item
        except InputError:
            if strict:
                raise
            log.warning("skipping unreadable frame %s", item, exc_info=True)
            errors += 1
            dec = pipe.skip_frame(index)
        else:
            speed = speed_signal(index) if speed_signal is not None else None
            dec = pipe.process_frame(pixels, index, speed)
        decisions.append(dec)
        if sink is not None:
            if callable(sink):
                sink(dec)
            else:
                sink.write(dec.to_json() + "\n")
    if not any_frame:
        raise InputError("input contains no frames")
    return summarize(decisions, errors)
