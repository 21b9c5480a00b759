"""Scoring (confusion matrices, P/R/F1, two-class merge) and latency benchmarks."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decision import MotionState
from .errors import AlignmentError, InputError

LABELS = (MotionState.STATIC.value, MotionState.VIBRATION.value, MotionState.MOVING.value)
MERGED_LABELS = ("unmoving", "moving")


@dataclass
class ConfusionMatrix:
    """Counts indexed ``[truth, predicted]``.

    ``indeterminate[i]`` counts frames of truth class ``i`` predicted
    Indeterminate after warm-up; ``warmup`` counts the excluded warm-up
    frames. Neither enters ``counts``.
    """

    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))
    labels: tuple[str, ...] = LABELS
    indeterminate: np.ndarray = None
    warmup: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if self.counts.shape != (n, n):
            raise ValueError(f"counts must be {n}x{n}")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")
        if self.indeterminate is None:
            self.indeterminate = np.zeros(n, dtype=np.int64)
        self.indeterminate = np.asarray(self.indeterminate, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if tuple(other.labels) != tuple(self.labels):
            raise ValueError("label sets differ")
        return ConfusionMatrix(self.counts + other.counts, self.labels,
                               self.indeterminate + other.indeterminate, self.warmup + other.warmup)

    def row_fraction(self, label: str, predicted: str | None = None, include_indeterminate: bool = True) -> float:
        """Share of ``label`` frames predicted ``predicted`` (default: correctly).

        With ``include_indeterminate`` the denominator also counts that
        class's Indeterminate frames.
        """
        i = self.labels.index(label)
        j = self.labels.index(predicted or label)
        denom = self.counts[i].sum() + (self.indeterminate[i] if include_indeterminate else 0)
        return float(self.counts[i, j] / denom) if denom else 0.0

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "counts": self.counts.tolist(),
            "indeterminate": dict(zip(self.labels, self.indeterminate.tolist())),
            "warmup_excluded": int(self.warmup),
            "total": self.total,
        }


@dataclass(frozen=True)
class ClassMetrics:
    labels: tuple[str, ...]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float

    def __getitem__(self, label: str) -> dict:
        i = self.labels.index(label)
        return {"precision": float(self.precision[i]), "recall": float(self.recall[i]), "f1": float(self.f1[i])}

    def to_dict(self) -> dict:
        return {"per_class": {lab: self[lab] for lab in self.labels}, "accuracy": self.accuracy}


def metrics(cm: ConfusionMatrix) -> ClassMetrics:
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    pred = c.sum(axis=0)
    true = c.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    s = precision + recall
    f1 = np.divide(2 * precision * recall, s, out=np.zeros_like(tp), where=s > 0)
    total = c.sum()
    return ClassMetrics(tuple(cm.labels), precision, recall, f1, float(tp.sum() / total) if total else 0.0)


def _state_of(d) -> tuple[int, str]:
    if isinstance(d, dict):
        return int(d["frame"]), MotionState(d["state"]).value
    return int(d.frame), MotionState(d.state).value


def _truth_map(truth) -> dict[int, str]:
    if isinstance(truth, dict):
        items = truth.items()
    else:
        items = ((int(t["frame"]), t["label"]) for t in truth)
    out = {}
    for frame, label in items:
        frame = int(frame)
        if frame in out:
            raise AlignmentError(f"duplicate truth record for frame {frame}")
        if label not in LABELS:
            raise AlignmentError(f"frame {frame}: unknown truth label {label!r}")
        out[frame] = label
    return out


def score(decisions, truth, warmup: int | None = None) -> tuple[ConfusionMatrix, ClassMetrics]:
    """Confusion matrix and per-class metrics of one decision stream.

    ``decisions`` holds FrameDecision objects or ``{"frame", "state"}``
    dicts; ``truth`` holds ``{"frame", "label"}`` dicts or a frame -> label
    mapping. Both must cover exactly the same frames.

    Warm-up: with ``warmup=None`` the leading run of Indeterminate frames is
    excluded; with an integer, the first ``warmup`` frames (by index) are
    excluded whatever their state. Later Indeterminate frames are counted
    per truth class and kept out of P/R/F1.
    """
    preds = {}
    for d in decisions:
        frame, state = _state_of(d)
        if frame in preds:
            raise AlignmentError(f"duplicate decision for frame {frame}")
        preds[frame] = state
    tmap = _truth_map(truth)
    if preds.keys() != tmap.keys():
        missing = sorted(tmap.keys() - preds.keys())[:5]
        extra = sorted(preds.keys() - tmap.keys())[:5]
        raise AlignmentError(f"frame indices differ: no decision for {missing}, no truth for {extra}")

    cm = ConfusionMatrix()
    frames = sorted(preds)
    if warmup is None:
        skip = 0
        while skip < len(frames) and preds[frames[skip]] == MotionState.INDETERMINATE.value:
            skip += 1
    else:
        skip = min(int(warmup), len(frames))
    cm.warmup = skip
    for frame in frames[skip:]:
        i = LABELS.index(tmap[frame])
        state = preds[frame]
        if state == MotionState.INDETERMINATE.value:
            cm.indeterminate[i] += 1
        else:
            cm.counts[i, LABELS.index(state)] += 1
    return cm, metrics(cm)


def merge_two_class(cm: ConfusionMatrix) -> tuple[ConfusionMatrix, ClassMetrics]:
    """Fold Static and Vibration into a single "unmoving" class."""
    if tuple(cm.labels) != LABELS:
        raise ValueError("merge_two_class expects a static/vibration/moving matrix")
    fold = np.array([[1, 1, 0], [0, 0, 1]], dtype=np.int64)
    merged = ConfusionMatrix(fold @ cm.counts @ fold.T, MERGED_LABELS, fold @ cm.indeterminate, cm.warmup)
    return merged, metrics(merged)


# -- I/O helpers ------------------------------------------------------------------


def read_jsonl(path) -> list[dict]:
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    with fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{n}: invalid JSON: {exc}") from exc
    return records


def evaluation_report(cm: ConfusionMatrix, m: ClassMetrics) -> dict:
    merged_cm, merged_m = merge_two_class(cm)
    return {
        "three_class": {"confusion": cm.to_dict(), **m.to_dict()},
        "two_class": {"confusion": merged_cm.to_dict(), **merged_m.to_dict()},
    }


def format_table(cm: ConfusionMatrix, m: ClassMetrics) -> str:
    lines = [f"{'state':<10} {'precision':>10} {'recall':>10} {'f1':>10} {'indet.':>7}"]
    for i, lab in enumerate(m.labels):
        lines.append(f"{lab:<10} {m.precision[i]:>10.5f} {m.recall[i]:>10.5f} {m.f1[i]:>10.5f} "
                     f"{int(cm.indeterminate[i]):>7d}")
    lines.append(f"accuracy {m.accuracy:.5f} over {cm.total} frames ({cm.warmup} warm-up excluded)")
    return "\n".join(lines)


# -- latency ----------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyReport:
    width: int
    height: int
    frames: int
    mean_ms: float
    std_ms: float
    p99_ms: float
    cpu_ms_per_frame: float

    @property
    def resolution(self) -> str:
        return f"{self.width}x{self.height}"

    def to_dict(self) -> dict:
        return {"resolution": self.resolution, "frames": self.frames, "mean_ms": self.mean_ms,
                "std_ms": self.std_ms, "p99_ms": self.p99_ms, "cpu_ms_per_frame": self.cpu_ms_per_frame}

    def row(self) -> str:
        return f"{self.resolution:>10}  {self.mean_ms:7.1f} ± {self.std_ms:5.1f} ms  (p99 {self.p99_ms:.1f}, cpu {self.cpu_ms_per_frame:.1f})"


def bench_frames(frames, config=None, reps: int = 1, warmup: int = 2) -> list[LatencyReport]:
    """Per-frame wall-clock latency of the full stage chain, one report per repetition.

    ``frames`` is a list of gray (or RGB) arrays. Each repetition runs a fresh
    pipeline; the first ``warmup`` frames of each repetition are not timed
    into the statistics.
    """
    from .pipeline import MotionPipeline, PipelineConfig

    config = config or PipelineConfig()
    if len(frames) <= warmup:
        raise InputError(f"need more than {warmup} frames to benchmark")
    h, w = np.asarray(frames[0]).shape[:2]
    reports = []
    for _ in range(reps):
        pipe = MotionPipeline(config)
        lat = []
        cpu0 = None
        for k, img in enumerate(frames):
            if k == warmup:
                cpu0 = time.process_time()
            lat.append(pipe.process_frame(img, k).latency_ms)
        cpu = time.process_time() - cpu0
        timed = np.asarray(lat[warmup:], dtype=np.float64)
        reports.append(LatencyReport(
            width=int(w), height=int(h), frames=len(timed),
            mean_ms=float(timed.mean()), std_ms=float(timed.std()),
            p99_ms=float(np.percentile(timed, 99)),
            cpu_ms_per_frame=1e3 * cpu / len(timed),
        ))
    return reports


def bench(input_dir, config=None, reps: int = 1, warmup: int = 2) -> list[LatencyReport]:
    """:func:`bench_frames` over a directory of frame files (read up front)."""
    from .frames import list_frames, read_frame

    frames = [read_frame(p) for _, p in list_frames(Path(input_dir))]
    return bench_frames(frames, config, reps, warmup)
