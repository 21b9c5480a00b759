"""Pixel-level preprocessing: grayscale conversion, CLAHE and ROI cropping.

Gray images are plain ``numpy.uint8`` arrays of shape ``(height, width)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError, DimensionError

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])

MIN_ROI_SIDE = 16


def as_gray(img) -> np.ndarray:
    """Validate ``img`` as a 2-D 8-bit raster and return it as uint8."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D gray image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"zero-sized image {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def to_grayscale(rgb) -> np.ndarray:
    """Convert an interleaved ``(h, w, 3)`` 8-bit raster to gray.

    Already-gray input (2-D) is validated and returned unchanged.
    """
    arr = np.asarray(rgb)
    if arr.ndim == 2:
        return as_gray(arr)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise DimensionError(f"expected (h, w, 3) RGB raster, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"zero-sized image {arr.shape}")
    luma = arr[..., :3].astype(np.float64) @ _LUMA
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class RoiSpec:
    """Fractional region of interest, each bound in ``[0, 1]``."""

    top: float = 0.05
    bottom: float = 0.90
    left: float = 0.15
    right: float = 0.86

    def __post_init__(self):
        if not (0.0 <= self.top < self.bottom <= 1.0):
            raise ConfigError(f"ROI needs 0 <= top < bottom <= 1, got {self.top}, {self.bottom}")
        if not (0.0 <= self.left < self.right <= 1.0):
            raise ConfigError(f"ROI needs 0 <= left < right <= 1, got {self.left}, {self.right}")

    @classmethod
    def from_sequence(cls, values) -> "RoiSpec":
        try:
            top, bottom, left, right = (float(v) for v in values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"ROI must be [top, bottom, left, right], got {values!r}") from exc
        return cls(top, bottom, left, right)

    def as_list(self) -> list[float]:
        return [self.top, self.bottom, self.left, self.right]

    def pixel_bounds(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Return ``(x0, x1, y0, y1)`` half-open pixel bounds (floor rounding)."""
        x0 = int(np.floor(self.left * width))
        x1 = int(np.floor(self.right * width))
        y0 = int(np.floor(self.top * height))
        y1 = int(np.floor(self.bottom * height))
        return x0, x1, y0, y1


def crop_roi(img, roi: RoiSpec) -> tuple[np.ndarray, tuple[int, int]]:
    """Crop ``img`` to ``roi``.

    Returns the crop and the ``(x, y)`` offset of its top-left corner in
    full-frame coordinates, so ``full = roi_point + offset``.
    """
    img = as_gray(img)
    h, w = img.shape
    x0, x1, y0, y1 = roi.pixel_bounds(w, h)
    if x1 - x0 < MIN_ROI_SIDE or y1 - y0 < MIN_ROI_SIDE:
        raise ConfigError(
            f"ROI {roi.as_list()} spans {x1 - x0}x{y1 - y0} px on a {w}x{h} frame; "
            f"need at least {MIN_ROI_SIDE}x{MIN_ROI_SIDE}"
        )
    return img[y0:y1, x0:x1], (x0, y0)


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return (np.arange(tiles + 1) * n) // tiles


def _interp_axis(n: int, edges: np.ndarray):
    """Per-coordinate (lower tile, upper tile, upper weight) for bilinear blending."""
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=np.float64)
    hi = np.searchsorted(centers, pos, side="right")
    lo = np.clip(hi - 1, 0, len(centers) - 1)
    hi = np.clip(hi, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    weight = np.where(span > 0, (pos - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo.astype(np.int64), hi.astype(np.int64), np.clip(weight, 0.0, 1.0)


@numba.njit(cache=True)
def _clahe_interpolate(img, luts, r_lo, r_hi, r_w, c_lo, c_hi, c_w):
    h, w = img.shape
    out = np.empty((h, w), dtype=np.uint8)
    for y in range(h):
        ty0 = r_lo[y]
        ty1 = r_hi[y]
        wy = r_w[y]
        for x in range(w):
            v = img[y, x]
            tx0 = c_lo[x]
            tx1 = c_hi[x]
            wx = c_w[x]
            top = (1.0 - wx) * luts[ty0, tx0, v] + wx * luts[ty0, tx1, v]
            bot = (1.0 - wx) * luts[ty1, tx0, v] + wx * luts[ty1, tx1, v]
            val = (1.0 - wy) * top + wy * bot
            q = np.floor(val + 0.5)
            if q < 0.0:
                q = 0.0
            elif q > 255.0:
                q = 255.0
            out[y, x] = np.uint8(q)
    return out


def tile_luts(img: np.ndarray, tiles_x: int, tiles_y: int, clip_limit: float) -> np.ndarray:
    """Clipped-histogram equalization lookup tables, shape ``(tiles_y, tiles_x, 256)``."""
    h, w = img.shape
    ye = _tile_edges(h, tiles_y)
    xe = _tile_edges(w, tiles_x)
    row_tile = np.repeat(np.arange(tiles_y), np.diff(ye))
    col_tile = np.repeat(np.arange(tiles_x), np.diff(xe))
    tile_id = row_tile[:, None] * tiles_x + col_tile[None, :]
    flat = (tile_id * 256 + img).ravel()
    hist = np.bincount(flat, minlength=tiles_y * tiles_x * 256).astype(np.float64)
    hist = hist.reshape(tiles_y, tiles_x, 256)
    npix = (np.diff(ye)[:, None] * np.diff(xe)[None, :]).astype(np.float64)

    if np.isfinite(clip_limit):
        limit = np.maximum(clip_limit * npix / 256.0, 1.0)[..., None]
        excess = np.maximum(hist - limit, 0.0).sum(axis=2, keepdims=True)
        hist = np.minimum(hist, limit) + excess / 256.0
    cdf = np.cumsum(hist, axis=2)
    return cdf * (255.0 / npix[..., None])


def apply_clahe(img, tiles_x: int = 8, tiles_y: int = 8, clip_limit: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Each tile's histogram is clipped at ``clip_limit * tile_pixels / 256``;
    the clipped mass is spread evenly over all 256 bins. Output pixels blend
    the four nearest tile mappings bilinearly, with edge tiles extended.
    ``clip_limit=inf`` disables clipping.
    """
    img = as_gray(img)
    h, w = img.shape
    if tiles_x < 1 or tiles_y < 1:
        raise ConfigError("tile grid must be at least 1x1")
    if clip_limit <= 0:
        raise ConfigError("clip_limit must be positive")
    if w < tiles_x or h < tiles_y:
        raise DimensionError(f"{w}x{h} image is smaller than the {tiles_x}x{tiles_y} tile grid")
    luts = tile_luts(img, tiles_x, tiles_y, clip_limit)
    r_lo, r_hi, r_w = _interp_axis(h, _tile_edges(h, tiles_y))
    c_lo, c_hi, c_w = _interp_axis(w, _tile_edges(w, tiles_x))
    return _clahe_interpolate(np.ascontiguousarray(img), luts, r_lo, r_hi, r_w, c_lo, c_hi, c_w)
