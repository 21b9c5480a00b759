"""Descriptor correspondence: brute-force KNN, Lowe ratio test, RANSAC affine."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError, DegenerateGeometryError, InsufficientMatchesError

MATCH_DTYPE = np.dtype([("query_index", np.int64), ("train_index", np.int64), ("distance", np.float64)])

MIN_SAMPLE_AREA = 1.0
REFINE_ROUNDS = 3


@dataclass(frozen=True)
class RansacParams:
    inlier_threshold: float = 3.0
    confidence: float = 0.995
    max_iterations: int = 2000
    min_matches: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise ConfigError("inlier_threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence must lie in (0, 1)")
        if self.max_iterations < 1 or self.min_matches < 1:
            raise ConfigError("max_iterations and min_matches must be >= 1")


def knn_match(desc_prev, desc_curr, k: int = 2) -> np.ndarray:
    """Exhaustive k-nearest-neighbour search by Euclidean distance.

    Returns a ``(n_prev, min(k, n_curr))`` array of ``MATCH_DTYPE`` records,
    each row sorted by ascending distance (ties by train index). Either set
    being empty gives an array with no records.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    a = np.asarray(desc_prev, dtype=np.float32)
    b = np.asarray(desc_curr, dtype=np.float32)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), min(k, len(b))), dtype=MATCH_DTYPE)
    kk = min(k, len(b))
    # squared distances via the Gram matrix only shortlist candidates;
    # the final ordering uses distances recomputed exactly from differences;
    # |a|^2 is constant per row and does not affect the shortlist
    short = _shortlist(a @ b.T, (b * b).sum(1), min(kk + 2, len(b)))
    dist = _exact_rerank(a, b, short)
    out = np.empty((len(a), kk), dtype=MATCH_DTYPE)
    out["query_index"] = np.arange(len(a))[:, None]
    out["train_index"] = short[:, :kk]
    out["distance"] = dist[:, :kk]
    return out


@numba.njit(cache=True)
def _exact_rerank(a, b, short):
    """Exact float64 distances to the shortlisted columns; reorders ``short`` in place
    by (distance, index)."""
    n, m = short.shape
    dim = a.shape[1]
    dist = np.empty((n, m), dtype=np.float64)
    for r in range(n):
        for t in range(m):
            c = short[r, t]
            acc = 0.0
            for q in range(dim):
                diff = np.float64(a[r, q]) - np.float64(b[c, q])
                acc += diff * diff
            dist[r, t] = math.sqrt(acc)
        for t in range(1, m):
            dv = dist[r, t]
            cv = short[r, t]
            p = t
            while p > 0 and (dist[r, p - 1] > dv or (dist[r, p - 1] == dv and short[r, p - 1] > cv)):
                dist[r, p] = dist[r, p - 1]
                short[r, p] = short[r, p - 1]
                p -= 1
            dist[r, p] = dv
            short[r, p] = cv
    return dist


@numba.njit(cache=True)
def _shortlist(gram, sq_norms, m):
    """Per row, indices of the ``m`` smallest ``sq_norms[c] - 2 * gram[r, c]``."""
    n, cols = gram.shape
    out = np.empty((n, m), dtype=np.int64)
    best = np.empty(m, dtype=gram.dtype)
    for r in range(n):
        filled = 0
        for c in range(cols):
            v = sq_norms[c] - 2 * gram[r, c]
            if filled == m and v >= best[m - 1]:
                continue
            p = filled if filled < m else m - 1
            while p > 0 and best[p - 1] > v:
                best[p] = best[p - 1]
                out[r, p] = out[r, p - 1]
                p -= 1
            best[p] = v
            out[r, p] = c
            if filled < m:
                filled += 1
    return out


def ratio_filter(knn: np.ndarray, ratio: float = 0.75) -> np.ndarray:
    """Keep each query's best match iff ``d1 < ratio * d2`` (strict).

    Queries with fewer than two candidates are dropped.
    """
    knn = np.asarray(knn, dtype=MATCH_DTYPE)
    if knn.ndim != 2 or knn.shape[1] < 2:
        return np.zeros(0, dtype=MATCH_DTYPE)
    keep = knn["distance"][:, 0] < ratio * knn["distance"][:, 1]
    return knn[keep, 0].copy()


def affine_from_points(src, dst) -> np.ndarray:
    """Least-squares 2x3 affine mapping ``src`` onto ``dst`` (``n >= 3``)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    design = np.column_stack([src, np.ones(len(src))])
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return sol.T.copy()


def apply_affine(model, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ model[:, :2].T + model[:, 2]


def reprojection_errors(model, src, dst) -> np.ndarray:
    return np.linalg.norm(apply_affine(model, src) - np.asarray(dst, dtype=np.float64), axis=1)


@numba.njit(cache=True)
def _ransac_loop(src, dst, samples, thr2, confidence, min_area):
    n = src.shape[0]
    best_count = 0
    best_mask = np.zeros(n, dtype=np.bool_)
    mask = np.zeros(n, dtype=np.bool_)
    bound = samples.shape[0]
    log_fail = math.log(1.0 - confidence)
    it = 0
    while it < bound:
        i0 = samples[it, 0]
        i1 = samples[it, 1]
        i2 = samples[it, 2]
        it += 1
        x0, y0 = src[i0, 0], src[i0, 1]
        x1, y1 = src[i1, 0], src[i1, 1]
        x2, y2 = src[i2, 0], src[i2, 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if 0.5 * abs(det) < min_area:
            continue
        # exact affine through the three correspondences (Cramer's rule)
        m = np.empty((2, 3))
        for row in range(2):
            u0 = dst[i0, row]
            u1 = dst[i1, row]
            u2 = dst[i2, row]
            a = ((u1 - u0) * (y2 - y0) - (u2 - u0) * (y1 - y0)) / det
            b = ((x1 - x0) * (u2 - u0) - (x2 - x0) * (u1 - u0)) / det
            m[row, 0] = a
            m[row, 1] = b
            m[row, 2] = u0 - a * x0 - b * y0
        count = 0
        for p in range(n):
            px = m[0, 0] * src[p, 0] + m[0, 1] * src[p, 1] + m[0, 2] - dst[p, 0]
            py = m[1, 0] * src[p, 0] + m[1, 1] * src[p, 1] + m[1, 2] - dst[p, 1]
            inside = px * px + py * py < thr2
            mask[p] = inside
            count += inside
        if count > best_count:
            best_count = count
            best_mask[:] = mask
            w = count / n
            p_good = w * w * w
            if p_good >= 1.0:
                bound = min(bound, it)
            elif p_good > 0.0:
                need = log_fail / math.log(1.0 - p_good)
                if need < bound:
                    bound = max(it, int(math.ceil(need)))
    return best_mask, best_count, it


def ransac_affine(pts_prev, pts_curr, params: RansacParams = RansacParams(),
                  rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Robust 2-D affine fit from frame t-1 points to frame t points.

    Minimal samples of three non-collinear correspondences (triangle area
    >= 1 px^2) are scored by inlier count at ``inlier_threshold`` px; the
    iteration budget shrinks adaptively to ``log(1-confidence)/log(1-w^3)``.
    The winning consensus set is refit by least squares; points are then
    re-scored against the refit model and the fit repeated (at most
    ``REFINE_ROUNDS`` times) while the consensus grows.

    ``rng`` overrides the generator seeded from ``params.rng_seed``.
    Raises InsufficientMatchesError below ``max(3, min_matches)`` points and
    DegenerateGeometryError when no hypothesis reaches ``min_matches`` inliers.
    """
    src = np.ascontiguousarray(pts_prev, dtype=np.float64).reshape(-1, 2)
    dst = np.ascontiguousarray(pts_curr, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("point sets differ in length")
    n = len(src)
    need = max(3, params.min_matches)
    if n < need:
        raise InsufficientMatchesError(f"{n} correspondences, need at least {need}")
    rng = rng if rng is not None else np.random.default_rng(params.rng_seed)
    samples = rng.integers(0, n, size=(params.max_iterations, 3))
    mask, count, _ = _ransac_loop(src, dst, samples, params.inlier_threshold**2,
                                  params.confidence, MIN_SAMPLE_AREA)
    if count < params.min_matches:
        raise DegenerateGeometryError(f"best consensus {count} < {params.min_matches} inliers")
    model = affine_from_points(src[mask], dst[mask])
    # re-score against the refit model and refit while the consensus grows
    for _ in range(REFINE_ROUNDS):
        err = apply_affine(model, src) - dst
        again = (err * err).sum(axis=1) < params.inlier_threshold**2
        if again.sum() <= count:
            break
        mask, count = again, int(again.sum())
        model = affine_from_points(src[mask], dst[mask])
    if not np.all(np.isfinite(model)) or abs(np.linalg.det(model[:, :2])) <= 1e-8:
        raise DegenerateGeometryError("refit affine model is singular")
    return model, mask
