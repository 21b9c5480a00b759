"""Synthetic static / vibration / moving sequences with per-frame ground truth.

Frames sample a fixed background texture bilinearly at sub-pixel offsets.
A moving scene translates the background by ``k * motion`` at frame ``k``.
A vibration scene combines a slow, zero-mean global oscillation with an
independent random displacement per tile node each frame (interpolated
bilinearly between nodes); the incoherent part gives different trajectories
different displacements, which a rigid shake would not.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage, special

from .errors import ConfigError

KINDS = ("static", "vibration", "moving")
TEXTURES = ("value_noise", "checker", "low_texture")


@dataclass(frozen=True)
class Intruder:
    """Textured rectangle moving independently of the background."""

    width: int = 80
    height: int = 60
    x0: float = 100.0
    y0: float = 100.0
    velocity: tuple[float, float] = (4.0, 0.0)


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "static"
    width: int = 704
    height: int = 576
    n_frames: int = 60
    texture: str = "value_noise"
    texture_density: float = 0.5
    pixel_noise_sigma: float = 2.0
    motion: tuple[float, float] = (0.0, 0.0)
    osc_amplitude: float = 0.0
    osc_period: float = 64.0
    osc_direction: tuple[float, float] = (1.0, 0.0)
    jitter_amplitude: float = 0.0
    jitter_tiles: tuple[int, int] = (8, 8)
    illumination_ramp: float = 0.0
    intruder: Intruder | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if self.texture not in TEXTURES:
            raise ConfigError(f"texture must be one of {TEXTURES}")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be >= 2")
        if self.width < 16 or self.height < 16:
            raise ConfigError("frames must be at least 16x16")
        if not 0 < self.texture_density <= 1:
            raise ConfigError("texture_density must lie in (0, 1]")
        if min(self.pixel_noise_sigma, self.osc_amplitude, self.jitter_amplitude) < 0:
            raise ConfigError("noise and amplitudes must be >= 0")
        if self.osc_period <= 0 or min(self.jitter_tiles) < 1:
            raise ConfigError("osc_period and jitter_tiles must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        data = dict(data)
        try:
            for key in ("motion", "osc_direction", "jitter_tiles"):
                if key in data:
                    data[key] = tuple(data[key])
            if data.get("intruder") is not None:
                intr = dict(data["intruder"])
                if "velocity" in intr:
                    intr["velocity"] = tuple(intr["velocity"])
                data["intruder"] = Intruder(**intr)
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"invalid scene spec: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def moving_spec(seed: int = 0, **kw) -> SceneSpec:
    kw.setdefault("motion", (3.0, 0.0))
    return SceneSpec(kind="moving", seed=seed, **kw)


def static_spec(seed: int = 0, **kw) -> SceneSpec:
    return SceneSpec(kind="static", seed=seed, **kw)


def vibration_spec(seed: int = 0, **kw) -> SceneSpec:
    """Calibrated vibration scene: 1 px slow oscillation plus 0.5 px tile jitter."""
    kw.setdefault("osc_amplitude", 1.0)
    kw.setdefault("jitter_amplitude", 0.5)
    return SceneSpec(kind="vibration", seed=seed, **kw)


# -- textures ---------------------------------------------------------------------


@numba.njit(cache=True)
def _upsample_axis0(src, cell, n_out):
    # Catmull-Rom interpolation along axis 0; sample i sits at lattice coordinate i / cell
    n_in, m = src.shape
    out = np.empty((n_out, m))
    for i in range(n_out):
        u = i / cell
        k = int(u)
        t = u - k
        t2 = t * t
        t3 = t2 * t
        w0 = 0.5 * (-t3 + 2 * t2 - t)
        w1 = 0.5 * (3 * t3 - 5 * t2 + 2)
        w2 = 0.5 * (-3 * t3 + 4 * t2 + t)
        w3 = 0.5 * (t3 - t2)
        a = src[min(k, n_in - 1)]
        b = src[min(k + 1, n_in - 1)]
        c = src[min(k + 2, n_in - 1)]
        d = src[min(k + 3, n_in - 1)]
        for j in range(m):
            out[i, j] = w0 * a[j] + w1 * b[j] + w2 * c[j] + w3 * d[j]
    return out


def _value_noise(rng, h, w, cell, octaves=4):
    """Sum of smoothly interpolated random lattices, rescaled to [0, 1]."""
    tex = np.zeros((h, w))
    amp = 1.0
    for _ in range(octaves):
        c = max(2, int(round(cell)))
        lattice = rng.random((h // c + 4, w // c + 4))
        rows = _upsample_axis0(lattice, float(c), h)
        tex += amp * _upsample_axis0(np.ascontiguousarray(rows.T), float(c), w).T
        cell *= 2
        amp *= 0.8
    lo, hi = tex.min(), tex.max()
    return (tex - lo) / max(hi - lo, 1e-12)


def make_texture(kind: str, density: float, h: int, w: int, rng) -> np.ndarray:
    """Background as float64 gray levels in [0, 255]."""
    if kind == "value_noise":
        return 25.0 + 205.0 * _value_noise(rng, h, w, 2.0 / density)
    if kind == "checker":
        size = max(2, int(round(8.0 / density)))
        yy, xx = np.mgrid[:h, :w]
        board = ((yy // size + xx // size) % 2).astype(np.float64)
        board = ndimage.gaussian_filter(board, 0.7)
        return 40.0 + 170.0 * board
    # nearly flat: a broad gradient with faint large-scale blobs
    yy, xx = np.mgrid[:h, :w]
    base = 110.0 + 20.0 * (xx / max(w - 1, 1))
    blobs = _value_noise(rng, h, w, 96.0, octaves=2)
    return base + 6.0 * density * blobs


# -- rendering --------------------------------------------------------------------


@numba.njit(cache=True)
def _render(tex, out, ox, oy, node_dx, node_dy):
    """out[y, x] = tex(y + oy - fy(x, y), x + ox - fx(x, y)), bilinear.

    ``node_dx`` / ``node_dy`` hold a per-node displacement field on a
    regular (ty+1) x (tx+1) grid spanning the frame.
    """
    h, w = out.shape
    ny, nx = node_dx.shape
    sy = (ny - 1) / max(h - 1, 1)
    sx = (nx - 1) / max(w - 1, 1)
    th, tw = tex.shape
    warp = nx > 1 and ny > 1
    col_i = np.zeros(w, dtype=np.int64)
    col_w = np.zeros(w)
    if warp:
        for x in range(w):
            gx = x * sx
            col_i[x] = min(int(gx), nx - 2)
            col_w[x] = gx - col_i[x]
    row_dx = np.zeros(nx)
    row_dy = np.zeros(nx)
    for y in range(h):
        if warp:
            # the node field interpolated down to this row, then along it
            gy = y * sy
            iy = min(int(gy), ny - 2)
            wy = gy - iy
            for i in range(nx):
                row_dx[i] = (1 - wy) * node_dx[iy, i] + wy * node_dx[iy + 1, i]
                row_dy[i] = (1 - wy) * node_dy[iy, i] + wy * node_dy[iy + 1, i]
        for x in range(w):
            fx = 0.0
            fy = 0.0
            if warp:
                ix = col_i[x]
                wx = col_w[x]
                fx = (1 - wx) * row_dx[ix] + wx * row_dx[ix + 1]
                fy = (1 - wx) * row_dy[ix] + wx * row_dy[ix + 1]
            sxp = x + ox - fx
            syp = y + oy - fy
            x0 = int(math.floor(sxp))
            y0 = int(math.floor(syp))
            tx = sxp - x0
            ty = syp - y0
            x0 = min(max(x0, 0), tw - 2)
            y0 = min(max(y0, 0), th - 2)
            if tx == 0.0 and ty == 0.0:
                out[y, x] = tex[y0, x0]
            else:
                out[y, x] = ((1 - ty) * ((1 - tx) * tex[y0, x0] + tx * tex[y0, x0 + 1])
                             + ty * ((1 - tx) * tex[y0 + 1, x0] + tx * tex[y0 + 1, x0 + 1]))


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


# standard normal quantiles at the 2^16 bin midpoints: indexing with uniform
# uint16 draws is inverse-transform sampling (tails cut at about 4.2 sigma)
_NORMAL_TABLE = special.ndtri((np.arange(1 << 16) + 0.5) / (1 << 16)).astype(np.float32)


@numba.njit(cache=True)
def _quantize_noisy(img, codes, table, sigma):
    out = np.empty(img.shape, dtype=np.uint8)
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            v = math.floor(img[y, x] + sigma * table[codes[y, x]] + 0.5)
            out[y, x] = min(max(v, 0.0), 255.0)
    return out


def global_offsets(spec: SceneSpec) -> np.ndarray:
    """Rigid background displacement (dx, dy) per frame, shape ``(n_frames, 2)``."""
    k = np.arange(spec.n_frames, dtype=np.float64)
    if spec.kind == "moving":
        return k[:, None] * np.asarray(spec.motion, dtype=np.float64)[None, :]
    if spec.kind == "vibration":
        d = np.asarray(spec.osc_direction, dtype=np.float64)
        norm = np.hypot(*d)
        d = d / norm if norm > 0 else np.array([1.0, 0.0])
        s = spec.osc_amplitude * np.sin(2.0 * np.pi * k / spec.osc_period)
        return s[:, None] * d[None, :]
    return np.zeros((spec.n_frames, 2))


def generate(spec: SceneSpec) -> tuple[list[np.ndarray], list[dict]]:
    """Render ``spec`` into uint8 frames and per-frame truth records."""
    ss = np.random.SeedSequence(spec.seed)
    tex_rng, jit_rng, noise_rng, intr_rng = (np.random.default_rng(s) for s in ss.spawn(4))

    offsets = global_offsets(spec)
    jitter_reach = 4.0 * spec.jitter_amplitude if spec.kind == "vibration" else 0.0
    margin = int(math.ceil(np.abs(offsets).max() + jitter_reach)) + 4
    th, tw = spec.height + 2 * margin, spec.width + 2 * margin
    tex = make_texture(spec.texture, spec.texture_density, th, tw, tex_rng)

    tiles_x, tiles_y = spec.jitter_tiles
    if spec.kind == "vibration" and spec.jitter_amplitude > 0:
        shape = (tiles_y + 1, tiles_x + 1)
    else:
        shape = (1, 1)

    intr_tex = None
    if spec.intruder is not None:
        it = spec.intruder
        intr_tex = 25.0 + 205.0 * _value_noise(intr_rng, it.height, it.width, 3.0)

    frames, truth = [], []
    canvas = np.empty((spec.height, spec.width), dtype=np.float64)
    for k in range(spec.n_frames):
        if shape != (1, 1):
            ndx = jit_rng.normal(0.0, spec.jitter_amplitude, shape)
            ndy = jit_rng.normal(0.0, spec.jitter_amplitude, shape)
        else:
            ndx = ndy = np.zeros(shape)
        dx, dy = offsets[k]
        _render(tex, canvas, margin - dx, margin - dy, ndx, ndy)
        img = canvas
        if intr_tex is not None:
            _paste_intruder(img, intr_tex, spec.intruder, k)
        if spec.illumination_ramp:
            img += spec.illumination_ramp * k / (spec.n_frames - 1)
        if spec.pixel_noise_sigma > 0:
            codes = noise_rng.integers(0, 1 << 16, img.shape, dtype=np.uint16)
            frames.append(_quantize_noisy(img, codes, _NORMAL_TABLE, spec.pixel_noise_sigma))
        else:
            frames.append(_quantize(img))
        truth.append({"frame": k, "label": spec.kind})
    return frames, truth


def _paste_intruder(img, patch, intr: Intruder, k: int) -> None:
    x = int(round(intr.x0 + k * intr.velocity[0]))
    y = int(round(intr.y0 + k * intr.velocity[1]))
    h, w = img.shape
    ph, pw = patch.shape
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + pw, w), min(y + ph, h)
    if x0 < x1 and y0 < y1:
        img[y0:y1, x0:x1] = patch[y0 - y:y1 - y, x0 - x:x1 - x]


def write_sequence(spec: SceneSpec, out_dir, ext: str = "pgm") -> Path:
    """Write frames, ``truth.jsonl`` and ``spec.json`` into ``out_dir``."""
    from .frames import frame_name, write_frame

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames, truth = generate(spec)
    for k, img in enumerate(frames):
        write_frame(out / frame_name(k, ext), img)
    with open(out / "truth.jsonl", "w", encoding="utf-8") as fh:
        for rec in truth:
            fh.write(json.dumps(rec) + "\n")
    with open(out / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
    return out


def load_spec(path) -> SceneSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            return SceneSpec.from_dict(json.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read scene spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scene spec {path} is not valid JSON: {exc}") from exc
