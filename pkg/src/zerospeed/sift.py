"""Scale-invariant feature detector and descriptor.

Difference-of-Gaussians keypoints with quadratic sub-pixel refinement,
gradient-histogram orientations and 4x4x8 descriptors, following Lowe's
construction. Images are processed at native resolution (no initial
upsampling). Hot loops are compiled with numba and run single-threaded, so
results are bit-identical between runs.

Coordinates are ``(x, y)`` with ``x`` to the right and ``y`` down; angles are
measured in that frame, ``atan2(dy, dx)``, in ``[0, 2*pi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numba
import numpy as np

from .errors import ConfigError, DimensionError

IMG_BORDER = 5
MAX_REFINE_STEPS = 5
ORI_BINS = 36
ORI_PEAK_RATIO = 0.8
ORI_SIGMA_FACTOR = 1.5
DESC_WIDTH = 4
DESC_BINS = 8
DESC_SCALE_FACTOR = 3.0
DESC_MAG_CLAMP = 0.2
DESCRIPTOR_SIZE = DESC_WIDTH * DESC_WIDTH * DESC_BINS


@dataclass(frozen=True)
class SiftParams:
    max_features: int = 1000
    contrast_threshold: float = 0.04
    edge_ratio: float = 15.0
    scales_per_octave: int = 3
    sigma0: float = 1.6
    assumed_input_blur: float = 0.5

    def __post_init__(self):
        if int(self.max_features) < 1:
            raise ConfigError("max_features must be >= 1")
        if int(self.scales_per_octave) < 1:
            raise ConfigError("scales_per_octave must be >= 1")
        for name in ("contrast_threshold", "edge_ratio", "sigma0", "assumed_input_blur"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


class Keypoint(NamedTuple):
    x: float
    y: float
    octave: int
    scale_index: int
    sigma: float
    orientation: float
    response: float


@dataclass
class Keypoints:
    """Structure-of-arrays keypoint set; ``x``/``y``/``sigma`` in base-image pixels."""

    x: np.ndarray
    y: np.ndarray
    octave: np.ndarray
    scale_index: np.ndarray
    sigma: np.ndarray
    orientation: np.ndarray
    response: np.ndarray

    @classmethod
    def empty(cls) -> "Keypoints":
        f = np.zeros(0, dtype=np.float64)
        i = np.zeros(0, dtype=np.int64)
        return cls(f, f.copy(), i, i.copy(), f.copy(), f.copy(), f.copy())

    @classmethod
    def from_list(cls, kps) -> "Keypoints":
        if not kps:
            return cls.empty()
        cols = list(zip(*kps))
        return cls(
            np.asarray(cols[0], dtype=np.float64),
            np.asarray(cols[1], dtype=np.float64),
            np.asarray(cols[2], dtype=np.int64),
            np.asarray(cols[3], dtype=np.int64),
            np.asarray(cols[4], dtype=np.float64),
            np.asarray(cols[5], dtype=np.float64),
            np.asarray(cols[6], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i: int) -> Keypoint:
        return Keypoint(
            float(self.x[i]), float(self.y[i]), int(self.octave[i]), int(self.scale_index[i]),
            float(self.sigma[i]), float(self.orientation[i]), float(self.response[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def select(self, idx) -> "Keypoints":
        return Keypoints(
            self.x[idx], self.y[idx], self.octave[idx], self.scale_index[idx],
            self.sigma[idx], self.orientation[idx], self.response[idx],
        )

    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def shifted(self, dx: float, dy: float) -> "Keypoints":
        return replace(self, x=self.x + dx, y=self.y + dy)


def concat(parts: list[Keypoints]) -> Keypoints:
    if not parts:
        return Keypoints.empty()
    return Keypoints(*(np.concatenate([getattr(p, f) for p in parts]) for f in Keypoint._fields))


# -- scale space ---------------------------------------------------------------


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(4.0 * sigma)))
    k = np.exp(-(np.arange(-radius, radius + 1, dtype=np.float64) ** 2) / (2.0 * sigma * sigma))
    return (k / k.sum()).astype(np.float32)


@numba.njit(cache=True)
def _reflect101(i, n):
    if n == 1:
        return 0
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * n - 2 - i
    return i


@numba.njit(cache=True)
def _blur_rows(src, kernel):
    # horizontal pass, reflect-101 borders; slice views keep the inner loop vectorizable
    radius = len(kernel) // 2
    h, w = src.shape
    out = np.empty((h, w), dtype=np.float32)
    row = np.empty(w + 2 * radius, dtype=np.float32)
    acc = np.empty(w, dtype=np.float32)
    k0 = kernel[radius]
    for y in range(h):
        for x in range(w):
            row[radius + x] = src[y, x]
        for t in range(1, radius + 1):
            row[radius - t] = src[y, _reflect101(-t, w)]
            row[radius + w - 1 + t] = src[y, _reflect101(w - 1 + t, w)]
        for x in range(w):
            acc[x] = k0 * row[radius + x]
        for t in range(1, radius + 1):
            wt = kernel[radius + t]
            ra = row[radius - t: radius - t + w]
            rb = row[radius + t: radius + t + w]
            for x in range(w):
                acc[x] += wt * (ra[x] + rb[x])
        for x in range(w):
            out[y, x] = acc[x]
    return out


@numba.njit(cache=True)
def _blur_cols(src, kernel):
    radius = len(kernel) // 2
    h, w = src.shape
    out = np.empty((h, w), dtype=np.float32)
    acc = np.empty(w, dtype=np.float32)
    k0 = kernel[radius]
    for y in range(h):
        for x in range(w):
            acc[x] = k0 * src[y, x]
        for t in range(1, radius + 1):
            wt = kernel[radius + t]
            ra = src[_reflect101(y - t, h)]
            rb = src[_reflect101(y + t, h)]
            for x in range(w):
                acc[x] += wt * (ra[x] + rb[x])
        for x in range(w):
            out[y, x] = acc[x]
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur (radius ``ceil(4 sigma)``, reflect-101 borders)."""
    kernel = _gaussian_kernel(sigma)
    return _blur_cols(_blur_rows(np.ascontiguousarray(img, dtype=np.float32), kernel), kernel)


def octave_count(height: int, width: int) -> int:
    return int(math.floor(math.log2(min(height, width)))) - 2


def level_sigmas(params: SiftParams) -> np.ndarray:
    """Octave-relative blur of each Gaussian level."""
    s = params.scales_per_octave
    return params.sigma0 * 2.0 ** (np.arange(s + 3) / s)


def build_gaussian_pyramid(img, params: SiftParams = SiftParams()) -> list[np.ndarray]:
    """Gaussian scale space of an image with intensities in ``[0, 1]``.

    Returns one ``(scales_per_octave + 3, h, w)`` float32 array per octave.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    if min(h, w) < 32:
        raise DimensionError(f"{w}x{h} image too small for a scale space (need min side >= 32)")
    s = params.scales_per_octave
    sig = level_sigmas(params)
    increments = np.sqrt(sig[1:] ** 2 - sig[:-1] ** 2)
    pre = math.sqrt(max(params.sigma0**2 - params.assumed_input_blur**2, 0.01))

    base = gaussian_blur(img, pre)
    octaves = []
    for _ in range(octave_count(h, w)):
        levels = np.empty((s + 3,) + base.shape, dtype=np.float32)
        levels[0] = base
        for i, inc in enumerate(increments, start=1):
            levels[i] = gaussian_blur(levels[i - 1], inc)
        octaves.append(levels)
        base = np.ascontiguousarray(levels[s][::2, ::2])
    return octaves


def build_dog_pyramid(pyramid: list[np.ndarray]) -> list[np.ndarray]:
    return [np.ascontiguousarray(np.diff(levels, axis=0)) for levels in pyramid]


# -- keypoint detection --------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _is_max(dog, s, r, c, v):
    # same layer first: most pixels fail there
    if dog[s, r - 1, c - 1] >= v or dog[s, r - 1, c] >= v or dog[s, r - 1, c + 1] >= v:
        return False
    if dog[s, r, c - 1] >= v or dog[s, r, c + 1] >= v or dog[s, r + 1, c - 1] >= v:
        return False
    if dog[s, r + 1, c] >= v or dog[s, r + 1, c + 1] >= v:
        return False
    if dog[s - 1, r - 1, c - 1] >= v or dog[s - 1, r - 1, c] >= v or dog[s - 1, r - 1, c + 1] >= v:
        return False
    if dog[s - 1, r, c - 1] >= v or dog[s - 1, r, c] >= v or dog[s - 1, r, c + 1] >= v:
        return False
    if dog[s - 1, r + 1, c - 1] >= v or dog[s - 1, r + 1, c] >= v or dog[s - 1, r + 1, c + 1] >= v:
        return False
    if dog[s + 1, r - 1, c - 1] >= v or dog[s + 1, r - 1, c] >= v or dog[s + 1, r - 1, c + 1] >= v:
        return False
    if dog[s + 1, r, c - 1] >= v or dog[s + 1, r, c] >= v or dog[s + 1, r, c + 1] >= v:
        return False
    if dog[s + 1, r + 1, c - 1] >= v or dog[s + 1, r + 1, c] >= v or dog[s + 1, r + 1, c + 1] >= v:
        return False
    return True


@numba.njit(cache=True, inline="always")
def _is_min(dog, s, r, c, v):
    if dog[s, r - 1, c - 1] <= v or dog[s, r - 1, c] <= v or dog[s, r - 1, c + 1] <= v:
        return False
    if dog[s, r, c - 1] <= v or dog[s, r, c + 1] <= v or dog[s, r + 1, c - 1] <= v:
        return False
    if dog[s, r + 1, c] <= v or dog[s, r + 1, c + 1] <= v:
        return False
    if dog[s - 1, r - 1, c - 1] <= v or dog[s - 1, r - 1, c] <= v or dog[s - 1, r - 1, c + 1] <= v:
        return False
    if dog[s - 1, r, c - 1] <= v or dog[s - 1, r, c] <= v or dog[s - 1, r, c + 1] <= v:
        return False
    if dog[s - 1, r + 1, c - 1] <= v or dog[s - 1, r + 1, c] <= v or dog[s - 1, r + 1, c + 1] <= v:
        return False
    if dog[s + 1, r - 1, c - 1] <= v or dog[s + 1, r - 1, c] <= v or dog[s + 1, r - 1, c + 1] <= v:
        return False
    if dog[s + 1, r, c - 1] <= v or dog[s + 1, r, c] <= v or dog[s + 1, r, c + 1] <= v:
        return False
    if dog[s + 1, r + 1, c - 1] <= v or dog[s + 1, r + 1, c] <= v or dog[s + 1, r + 1, c + 1] <= v:
        return False
    return True


@numba.njit(cache=True)
def _box3(layer, out_max, out_min):
    """3x3 max / min of the interior; the outermost ring is left untouched."""
    h, w = layer.shape
    rmax = np.empty((h, w - 2), dtype=np.float32)
    rmin = np.empty((h, w - 2), dtype=np.float32)
    for y in range(h):
        a = layer[y, 0:w - 2]
        b = layer[y, 1:w - 1]
        c = layer[y, 2:w]
        mx = rmax[y]
        mn = rmin[y]
        for x in range(w - 2):
            m = a[x] if a[x] > b[x] else b[x]
            mx[x] = m if m > c[x] else c[x]
            m = a[x] if a[x] < b[x] else b[x]
            mn[x] = m if m < c[x] else c[x]
    for y in range(1, h - 1):
        for src, dst, sign in ((rmax, out_max, 1.0), (rmin, out_min, -1.0)):
            a = src[y - 1]
            b = src[y]
            c = src[y + 1]
            o = dst[y, 1:w - 1]
            if sign > 0:
                for x in range(w - 2):
                    m = a[x] if a[x] > b[x] else b[x]
                    o[x] = m if m > c[x] else c[x]
            else:
                for x in range(w - 2):
                    m = a[x] if a[x] < b[x] else b[x]
                    o[x] = m if m < c[x] else c[x]


@numba.njit(cache=True)
def _screen_row(v, m0, m1, m2, n0, n1, n2, thr, flags):
    # branch-free screen; ties are resolved by the strict check
    for c in range(len(v)):
        is_hi = (v[c] > thr) & (v[c] >= m0[c]) & (v[c] > m1[c]) & (v[c] > m2[c])
        is_lo = (v[c] < -thr) & (v[c] <= n0[c]) & (v[c] < n1[c]) & (v[c] < n2[c])
        flags[c] = is_hi | is_lo


@numba.njit(cache=True)
def _find_extrema(dog, border, prethresh):
    """Pixels strictly above (or below) all 26 scale-space neighbours."""
    n_layers, h, w = dog.shape
    bmax = np.empty((n_layers, h, w), dtype=np.float32)
    bmin = np.empty((n_layers, h, w), dtype=np.float32)
    for s in range(n_layers):
        _box3(dog[s], bmax[s], bmin[s])
    thr = np.float32(prethresh)
    flags = np.zeros((n_layers, h, w), dtype=np.uint8)
    for s in range(1, n_layers - 1):
        for r in range(border, h - border):
            _screen_row(dog[s, r], bmax[s, r], bmax[s - 1, r], bmax[s + 1, r],
                        bmin[s, r], bmin[s - 1, r], bmin[s + 1, r], thr, flags[s, r])
            flags[s, r, :border] = 0
            flags[s, r, w - border:] = 0
    cand = np.flatnonzero(flags)
    n_cand = len(cand)
    keep = np.zeros(n_cand, dtype=np.bool_)
    for k in range(n_cand):
        s = cand[k] // (h * w)
        r = (cand[k] // w) % h
        c = cand[k] % w
        val = dog[s, r, c]
        if val > 0:
            keep[k] = _is_max(dog, s, r, c, val)
        else:
            keep[k] = _is_min(dog, s, r, c, val)
    flat = cand[:n_cand][keep]
    return flat // (h * w), (flat // w) % h, flat % w


@numba.njit(cache=True)
def _localize(dog, cand_s, cand_r, cand_c, border, contrast_thr, edge_ratio, max_steps, check_edges):
    n_layers, h, w = dog.shape
    n = len(cand_s)
    keep = np.zeros(n, dtype=np.bool_)
    out = np.zeros((n, 7), dtype=np.float64)  # s, r, c, ds, dr, dc, contrast
    edge_lim = (edge_ratio + 1.0) ** 2 / edge_ratio
    for k in range(n):
        s = cand_s[k]
        r = cand_r[k]
        c = cand_c[k]
        converged = False
        xs = 0.0
        xr = 0.0
        xc = 0.0
        gs = 0.0
        gr = 0.0
        gc = 0.0
        for _ in range(max_steps):
            v = dog[s, r, c]
            gc = 0.5 * (dog[s, r, c + 1] - dog[s, r, c - 1])
            gr = 0.5 * (dog[s, r + 1, c] - dog[s, r - 1, c])
            gs = 0.5 * (dog[s + 1, r, c] - dog[s - 1, r, c])
            hcc = dog[s, r, c + 1] + dog[s, r, c - 1] - 2.0 * v
            hrr = dog[s, r + 1, c] + dog[s, r - 1, c] - 2.0 * v
            hss = dog[s + 1, r, c] + dog[s - 1, r, c] - 2.0 * v
            hcr = 0.25 * (dog[s, r + 1, c + 1] - dog[s, r + 1, c - 1]
                          - dog[s, r - 1, c + 1] + dog[s, r - 1, c - 1])
            hcs = 0.25 * (dog[s + 1, r, c + 1] - dog[s + 1, r, c - 1]
                          - dog[s - 1, r, c + 1] + dog[s - 1, r, c - 1])
            hrs = 0.25 * (dog[s + 1, r + 1, c] - dog[s + 1, r - 1, c]
                          - dog[s - 1, r + 1, c] + dog[s - 1, r - 1, c])
            # solve H x = -g with H ordered (c, r, s)
            a00, a01, a02 = hcc, hcr, hcs
            a11, a12 = hrr, hrs
            a22 = hss
            det = (a00 * (a11 * a22 - a12 * a12)
                   - a01 * (a01 * a22 - a12 * a02)
                   + a02 * (a01 * a12 - a11 * a02))
            if abs(det) < 1e-20:
                break
            i00 = (a11 * a22 - a12 * a12) / det
            i01 = (a02 * a12 - a01 * a22) / det
            i02 = (a01 * a12 - a02 * a11) / det
            i11 = (a00 * a22 - a02 * a02) / det
            i12 = (a02 * a01 - a00 * a12) / det
            i22 = (a00 * a11 - a01 * a01) / det
            xc = -(i00 * gc + i01 * gr + i02 * gs)
            xr = -(i01 * gc + i11 * gr + i12 * gs)
            xs = -(i02 * gc + i12 * gr + i22 * gs)
            if abs(xc) < 0.5 and abs(xr) < 0.5 and abs(xs) < 0.5:
                converged = True
                break
            if abs(xc) > 1e4 or abs(xr) > 1e4 or abs(xs) > 1e4:
                break
            c += int(np.round(xc))
            r += int(np.round(xr))
            s += int(np.round(xs))
            if s < 1 or s > n_layers - 2 or r < border or r >= h - border or c < border or c >= w - border:
                break
        if not converged:
            continue
        contrast = dog[s, r, c] + 0.5 * (gc * xc + gr * xr + gs * xs)
        if abs(contrast) < contrast_thr:
            continue
        if check_edges:
            v = dog[s, r, c]
            dxx = dog[s, r, c + 1] + dog[s, r, c - 1] - 2.0 * v
            dyy = dog[s, r + 1, c] + dog[s, r - 1, c] - 2.0 * v
            dxy = 0.25 * (dog[s, r + 1, c + 1] - dog[s, r + 1, c - 1]
                          - dog[s, r - 1, c + 1] + dog[s, r - 1, c - 1])
            tr = dxx + dyy
            dt = dxx * dyy - dxy * dxy
            if dt <= 0.0 or tr * tr >= edge_lim * dt:
                continue
        keep[k] = True
        out[k, 0] = s
        out[k, 1] = r
        out[k, 2] = c
        out[k, 3] = xs
        out[k, 4] = xr
        out[k, 5] = xc
        out[k, 6] = abs(contrast)
    return keep, out


def detect_keypoints(dog: list[np.ndarray], params: SiftParams = SiftParams(),
                     check_edges: bool = True) -> Keypoints:
    """Refined scale-space extrema of a DoG pyramid, strongest first.

    Orientation is left at 0; see :func:`assign_orientations`.
    ``check_edges=False`` disables the principal-curvature test (diagnostics).
    """
    s_per = params.scales_per_octave
    prethresh = 0.5 * params.contrast_threshold / s_per
    parts = []
    for octave, layers in enumerate(dog):
        cs, cr, cc = _find_extrema(layers, IMG_BORDER, prethresh)
        if len(cs) == 0:
            continue
        keep, loc = _localize(layers, cs, cr, cc, IMG_BORDER, params.contrast_threshold,
                              params.edge_ratio, MAX_REFINE_STEPS, check_edges)
        loc = loc[keep]
        if len(loc) == 0:
            continue
        # distinct starting pixels may converge onto the same sample
        h, w = layers.shape[1:]
        key = (loc[:, 0].astype(np.int64) * h + loc[:, 1].astype(np.int64)) * w + loc[:, 2].astype(np.int64)
        _, first = np.unique(key, return_index=True)
        loc = loc[np.sort(first)]
        scale = 2.0**octave
        parts.append(Keypoints(
            x=(loc[:, 2] + loc[:, 5]) * scale,
            y=(loc[:, 1] + loc[:, 4]) * scale,
            octave=np.full(len(loc), octave, dtype=np.int64),
            scale_index=loc[:, 0].astype(np.int64),
            sigma=params.sigma0 * 2.0 ** ((loc[:, 0] + loc[:, 3]) / s_per) * scale,
            orientation=np.zeros(len(loc)),
            response=loc[:, 6].copy(),
        ))
    kps = concat(parts)
    order = _strength_order(kps)
    return kps.select(order[: params.max_features])


def _strength_order(kps: Keypoints) -> np.ndarray:
    # response descending, then (y, x) ascending
    return np.lexsort((kps.x, kps.y, -kps.response))


# -- gradients -------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _atan2(y, x):
    # polynomial arctangent, |error| < 1e-5 rad, result in [0, 2*pi)
    ax = abs(x)
    ay = abs(y)
    mx = max(ax, ay)
    if mx == 0.0:
        return 0.0
    a = min(ax, ay) / mx
    s = a * a
    r = ((-0.0464964749 * s + 0.15931422) * s - 0.327622764) * s * a + a
    if ay > ax:
        r = 1.5707963267948966 - r
    if x < 0.0:
        r = 3.141592653589793 - r
    if y < 0.0:
        r = 6.283185307179586 - r
    if r >= 6.283185307179586:
        r -= 6.283185307179586
    return r


@numba.njit(cache=True)
def _gradient_field(img):
    """Central-difference magnitude and angle; zero on the one-pixel border."""
    h, w = img.shape
    mag = np.zeros((h, w), dtype=np.float32)
    ang = np.zeros((h, w), dtype=np.float32)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            dx = img[y, x + 1] - img[y, x - 1]
            dy = img[y + 1, x] - img[y - 1, x]
            mag[y, x] = math.sqrt(dx * dx + dy * dy)
            ang[y, x] = _atan2(dy, dx)
    return mag, ang


class _Gradients:
    """Lazily computed gradient fields per (octave, level)."""

    def __init__(self, pyramid: list[np.ndarray]):
        self.pyramid = pyramid
        self._cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, octave: int, level: int):
        key = (int(octave), int(level))
        if key not in self._cache:
            self._cache[key] = _gradient_field(self.pyramid[key[0]][key[1]])
        return self._cache[key]


def _groups(kps: Keypoints):
    """Indices of keypoints sharing an (octave, level) image, in a fixed order."""
    if len(kps) == 0:
        return
    keys = kps.octave * 1024 + kps.scale_index
    for key in np.unique(keys):
        yield int(key // 1024), int(key % 1024), np.flatnonzero(keys == key)


def _octave_frame(kps: Keypoints):
    """Octave-local (y, x, scale) for each keypoint."""
    scale = 2.0 ** kps.octave.astype(np.float64)
    return kps.y / scale, kps.x / scale, kps.sigma / scale


# -- orientation -----------------------------------------------------------------


@numba.njit(cache=True)
def _orientation_batch(mag, ang, ys, xs, scales):
    h, w = mag.shape
    n = len(ys)
    out_angles = np.empty(n * ORI_BINS, dtype=np.float64)
    out_src = np.empty(n * ORI_BINS, dtype=np.int64)
    n_out = 0
    two_pi = 2.0 * math.pi
    hist = np.empty(ORI_BINS, dtype=np.float64)
    sm = np.empty(ORI_BINS, dtype=np.float64)
    for k in range(n):
        sigma_w = ORI_SIGMA_FACTOR * scales[k]
        radius = int(np.round(3.0 * sigma_w))
        r0 = int(np.round(ys[k]))
        c0 = int(np.round(xs[k]))
        ew = np.empty(2 * radius + 1, dtype=np.float64)
        for i in range(-radius, radius + 1):
            ew[i + radius] = math.exp(-(i * i) / (2.0 * sigma_w * sigma_w))
        hist[:] = 0.0
        for i in range(max(-radius, 1 - r0), min(radius, h - 2 - r0) + 1):
            y = r0 + i
            wy = ew[i + radius]
            mrow = mag[y]
            arow = ang[y]
            for j in range(max(-radius, 1 - c0), min(radius, w - 2 - c0) + 1):
                x = np.uintp(c0 + j)
                m = mrow[x]
                p = arow[x] * (ORI_BINS / two_pi)
                b0 = int(p)
                f = p - b0
                if b0 >= ORI_BINS:
                    b0 -= ORI_BINS
                b1 = b0 + 1
                if b1 == ORI_BINS:
                    b1 = 0
                v = wy * ew[j + radius] * m
                hist[b0] += v * (1.0 - f)
                hist[b1] += v * f
        for i in range(ORI_BINS):
            sm[i] = ((hist[(i - 2) % ORI_BINS] + hist[(i + 2) % ORI_BINS]) * (1.0 / 16.0)
                     + (hist[(i - 1) % ORI_BINS] + hist[(i + 1) % ORI_BINS]) * (4.0 / 16.0)
                     + hist[i] * (6.0 / 16.0))
        maxv = sm.max()
        if maxv <= 0.0:
            continue
        for i in range(ORI_BINS):
            c = sm[i]
            lv = sm[(i - 1) % ORI_BINS]
            rv = sm[(i + 1) % ORI_BINS]
            if c > lv and c >= rv and c >= ORI_PEAK_RATIO * maxv:
                den = lv - 2.0 * c + rv
                off = 0.5 * (lv - rv) / den if den != 0.0 else 0.0
                a = ((i + off) * two_pi / ORI_BINS) % two_pi
                out_angles[n_out] = a
                out_src[n_out] = k
                n_out += 1
    return out_src[:n_out], out_angles[:n_out]


def assign_orientations(kps: Keypoints, pyramid: list[np.ndarray],
                        params: SiftParams = SiftParams(), _grads=None) -> Keypoints:
    """Dominant gradient orientations; one keypoint copy per histogram peak.

    Keypoints whose window carries no gradient are dropped. Output keeps the
    input order, copies of one keypoint ordered by angle.
    """
    grads = _grads or _Gradients(pyramid)
    yo, xo, so = _octave_frame(kps)
    src_all, ang_all = [], []
    for octave, level, idx in _groups(kps):
        mag, ang = grads(octave, level)
        src, angles = _orientation_batch(mag, ang, yo[idx], xo[idx], so[idx])
        src_all.append(idx[src])
        ang_all.append(angles)
    if not src_all:
        return Keypoints.empty()
    src = np.concatenate(src_all)
    angles = np.concatenate(ang_all)
    order = np.lexsort((angles, src))
    out = kps.select(src[order])
    out.orientation = angles[order]
    return out


# -- descriptor ------------------------------------------------------------------


def descriptor_radius(scale):
    """Half-width (octave pixels) of the descriptor sampling window."""
    hist_width = DESC_SCALE_FACTOR * np.asarray(scale, dtype=np.float64)
    return np.round(hist_width * math.sqrt(2.0) * (DESC_WIDTH + 1) * 0.5).astype(np.int64)


def descriptor_fits(kps: Keypoints, pyramid: list[np.ndarray]) -> np.ndarray:
    """Mask of keypoints whose descriptor window lies inside their octave image."""
    yo, xo, so = _octave_frame(kps)
    radius = descriptor_radius(so)
    r0 = np.round(yo).astype(np.int64)
    c0 = np.round(xo).astype(np.int64)
    shapes = np.array([p.shape[1:] for p in pyramid], dtype=np.int64).reshape(-1, 2)
    h = shapes[kps.octave, 0] if len(kps) else np.zeros(0, dtype=np.int64)
    w = shapes[kps.octave, 1] if len(kps) else np.zeros(0, dtype=np.int64)
    return (r0 - radius - 1 >= 0) & (r0 + radius + 1 <= h - 1) & (c0 - radius - 1 >= 0) & (c0 + radius + 1 <= w - 1)


@numba.njit(cache=True)
def _descriptor_batch(mag, ang, ys, xs, scales, angles, radii, out):
    d = DESC_WIDTH
    n = DESC_BINS
    two_pi = 2.0 * math.pi
    bins_per_rad = n / two_pi
    exp_scale = -1.0 / (d * d * 0.5)
    hist = np.empty((d + 2) * (d + 2) * (n + 2), dtype=np.float64)
    one = np.uintp(1)
    s1 = np.uintp(n + 2)
    s2 = np.uintp(n + 3)
    s3 = np.uintp((d + 2) * (n + 2))
    for k in range(len(ys)):
        hist_width = DESC_SCALE_FACTOR * scales[k]
        radius = radii[k]
        r0 = int(np.round(ys[k]))
        c0 = int(np.round(xs[k]))
        angle = angles[k]
        cos_t = math.cos(angle) / hist_width
        sin_t = math.sin(angle) / hist_width
        # rotation preserves the norm, so the Gaussian weight factorizes over (i, j)
        ew = np.empty(2 * radius + 1, dtype=np.float64)
        for i in range(-radius, radius + 1):
            ew[i + radius] = math.exp(i * i * exp_scale / (hist_width * hist_width))
        hist[:] = 0.0
        half = d / 2.0 + 0.5
        for i in range(-radius, radius + 1):
            y = r0 + i
            r_base = i * cos_t + (d / 2.0 - 0.5)
            c_base = i * sin_t + (d / 2.0 - 0.5)
            mrow = mag[y]
            arow = ang[y]
            # j-span where both rotated bin coordinates can lie inside the grid
            j_lo = -radius
            j_hi = radius
            for coef, base in ((-sin_t, i * cos_t), (cos_t, i * sin_t)):
                if abs(coef) > 1e-12:
                    lo = (-half - base) / coef
                    hi = (half - base) / coef
                    if lo > hi:
                        lo, hi = hi, lo
                    j_lo = max(j_lo, int(math.floor(lo)))
                    j_hi = min(j_hi, int(math.ceil(hi)))
                elif abs(base) >= half:
                    j_hi = j_lo - 1
            for j in range(j_lo, j_hi + 1):
                rbin = r_base - j * sin_t
                cbin = c_base + j * cos_t
                if rbin <= -1.0 or rbin >= d or cbin <= -1.0 or cbin >= d:
                    continue
                x = np.uintp(c0 + j)
                m = mrow[x]
                # angle difference lies in (-2pi, 2pi): offset by a full turn
                obin = (arow[x] - angle) * bins_per_rad + n
                # bins are shifted by +1 so truncation equals floor
                ri = int(rbin + 1.0)
                ci = int(cbin + 1.0)
                oi = int(obin)
                fr = rbin + 1.0 - ri
                fc = cbin + 1.0 - ci
                fo = obin - oi
                oi &= n - 1  # n is a power of two; folds the +n offset
                v = m * ew[i + radius] * ew[j + radius]
                v_r1 = v * fr
                v_r0 = v - v_r1
                v_rc11 = v_r1 * fc
                v_rc10 = v_r1 - v_rc11
                v_rc01 = v_r0 * fc
                v_rc00 = v_r0 - v_rc01
                b = np.uintp((ri * (d + 2) + ci) * (n + 2) + oi)
                hist[b] += v_rc00 * (1.0 - fo)
                hist[b + one] += v_rc00 * fo
                hist[b + s1] += v_rc01 * (1.0 - fo)
                hist[b + s2] += v_rc01 * fo
                b = b + s3
                hist[b] += v_rc10 * (1.0 - fo)
                hist[b + one] += v_rc10 * fo
                hist[b + s1] += v_rc11 * (1.0 - fo)
                hist[b + s2] += v_rc11 * fo
        hist3 = hist.reshape((d + 2, d + 2, n + 2))
        q = 0
        for i in range(d):
            for j in range(d):
                hist3[i + 1, j + 1, 0] += hist3[i + 1, j + 1, n]
                hist3[i + 1, j + 1, 1] += hist3[i + 1, j + 1, n + 1]
                for o in range(n):
                    out[k, q] = hist3[i + 1, j + 1, o]
                    q += 1
        norm = 0.0
        for q in range(d * d * n):
            norm += out[k, q] * out[k, q]
        if norm == 0.0:
            continue
        norm = math.sqrt(norm)
        norm2 = 0.0
        for q in range(d * d * n):
            v = out[k, q] / norm
            if v > DESC_MAG_CLAMP:
                v = DESC_MAG_CLAMP
            out[k, q] = v
            norm2 += v * v
        norm2 = math.sqrt(norm2)
        for q in range(d * d * n):
            out[k, q] = out[k, q] / norm2


def compute_descriptors(kps: Keypoints, pyramid: list[np.ndarray],
                        params: SiftParams = SiftParams(), _grads=None) -> tuple[Keypoints, np.ndarray]:
    """128-d descriptors for oriented keypoints.

    4x4 spatial cells x 8 orientation bins over a window rotated to the
    keypoint orientation, trilinear voting, Gaussian weighting, then
    normalize / clamp at 0.2 / renormalize. Keypoints whose window leaves the
    octave image are dropped; returned rows are index-aligned with the
    returned keypoints (float32).
    """
    grads = _grads or _Gradients(pyramid)
    keep = descriptor_fits(kps, pyramid)
    kps = kps.select(keep)
    yo, xo, so = _octave_frame(kps)
    radii = descriptor_radius(so)
    desc = np.zeros((len(kps), DESCRIPTOR_SIZE), dtype=np.float64)
    for octave, level, idx in _groups(kps):
        mag, ang = grads(octave, level)
        block = np.zeros((len(idx), DESCRIPTOR_SIZE), dtype=np.float64)
        _descriptor_batch(mag, ang, yo[idx], xo[idx], so[idx], kps.orientation[idx], radii[idx], block)
        desc[idx] = block
    nonzero = desc.any(axis=1)
    return kps.select(nonzero), desc[nonzero].astype(np.float32)


def compute_descriptor(kp: Keypoint, pyramid: list[np.ndarray],
                       params: SiftParams = SiftParams()) -> np.ndarray | None:
    """Descriptor of a single keypoint, or ``None`` when its window leaves the image."""
    kept, desc = compute_descriptors(Keypoints.from_list([tuple(kp)]), pyramid, params)
    return desc[0] if len(kept) else None


def detect_and_describe(img, params: SiftParams = SiftParams()) -> tuple[Keypoints, np.ndarray]:
    """Detector + descriptor on an 8-bit (or ``[0, 1]`` float) gray image.

    Keypoints whose descriptor window would leave the image are discarded
    before orientation assignment; the result is capped at
    ``params.max_features`` and ordered strongest first.
    """
    arr = np.asarray(img)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise DimensionError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) * np.float32(1.0 / 255.0)
    pyramid = build_gaussian_pyramid(arr, params)
    kps = detect_keypoints(build_dog_pyramid(pyramid), params)
    kps = kps.select(descriptor_fits(kps, pyramid))
    grads = _Gradients(pyramid)
    kps = assign_orientations(kps, pyramid, params, _grads=grads)
    # describe strongest-first and stop once the cap is filled
    kps = kps.select(_strength_order(kps))
    cap = params.max_features
    parts_k, parts_d, have, start = [], [], 0, 0
    while have < cap and start < len(kps):
        stop = start + (cap - have)
        got_k, got_d = compute_descriptors(kps.select(np.arange(start, min(stop, len(kps)))),
                                           pyramid, params, _grads=grads)
        parts_k.append(got_k)
        parts_d.append(got_d)
        have += len(got_k)
        start = stop
    if not parts_k:
        return kps, np.zeros((0, DESCRIPTOR_SIZE), dtype=np.float32)
    return concat(parts_k), np.concatenate(parts_d)
