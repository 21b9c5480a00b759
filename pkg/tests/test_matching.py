import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zerospeed import matching
from zerospeed.errors import ConfigError, DegenerateGeometryError, InsufficientMatchesError
from zerospeed.matching import MATCH_DTYPE, RansacParams


def _unit(rng, n, dim=128):
    v = rng.standard_normal((n, dim)).astype(np.float32)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _knn_oracle(a, b, k):
    # O(n^2) reference: every distance in float64, stable sort by (distance, index)
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    out = []
    for q in a:
        d = np.sqrt(((b - q) ** 2).sum(axis=1))
        order = sorted(range(len(b)), key=lambda j: (d[j], j))[:k]
        out.append([(j, d[j]) for j in order])
    return out


def _records(rows):
    arr = np.zeros((len(rows), 2), dtype=MATCH_DTYPE)
    for i, (d1, d2) in enumerate(rows):
        arr[i] = [(i, 0, d1), (i, 1, d2)]
    return arr


# -- knn ----------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_knn_equals_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = _unit(rng, 100), _unit(rng, 100)
    got = matching.knn_match(a, b, 2)
    ref = _knn_oracle(a, b, 2)
    for i in range(100):
        assert got["train_index"][i].tolist() == [j for j, _ in ref[i]]
        assert np.allclose(got["distance"][i], [d for _, d in ref[i]], rtol=0, atol=1e-12)


def test_knn_oracle_with_duplicated_train_rows():
    rng = np.random.default_rng(11)
    b = _unit(rng, 30)
    b = np.concatenate([b, b[:10]])
    a = b[::3] + rng.normal(0, 1e-3, (14, 128)).astype(np.float32)
    got = matching.knn_match(a, b, 3)
    ref = _knn_oracle(a, b, 3)
    for i in range(len(a)):
        assert got["train_index"][i].tolist() == [j for j, _ in ref[i]]


def test_self_match_is_rank_one_with_zero_distance():
    a = _unit(np.random.default_rng(1), 60)
    got = matching.knn_match(a, a, 2)
    assert (got["train_index"][:, 0] == np.arange(60)).all()
    assert (got["distance"][:, 0] == 0).all()
    assert (got["query_index"][:, 0] == np.arange(60)).all()


def test_k_is_clamped_to_train_size():
    a = _unit(np.random.default_rng(2), 5)
    got = matching.knn_match(a, a[:1], 2)
    assert got.shape == (5, 1)


def test_empty_sets_give_empty_results():
    a = _unit(np.random.default_rng(3), 4)
    assert matching.knn_match(a, np.zeros((0, 128)), 2).shape == (4, 0)
    assert matching.knn_match(np.zeros((0, 128)), a, 2).shape == (0, 2)


@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 4), st.integers(0, 10**6))
def test_knn_rows_sorted_and_in_bounds(n, m, k, seed):
    rng = np.random.default_rng(seed)
    got = matching.knn_match(_unit(rng, n, 16), _unit(rng, m, 16), k)
    assert got.shape == (n, min(k, m))
    assert (got["distance"] >= 0).all()
    assert ((got["train_index"] >= 0) & (got["train_index"] < m)).all()
    assert (np.diff(got["distance"], axis=1) >= 0).all()


# -- ratio test ----------------------------------------------------------------------


def test_ratio_filter_boundaries():
    kept = matching.ratio_filter(_records([(0.3, 0.5), (0.4, 0.5), (0.0, 0.0), (0.375, 0.5)]), 0.75)
    assert kept["query_index"].tolist() == [0]


def test_ratio_filter_needs_two_candidates():
    knn = np.zeros((3, 1), dtype=MATCH_DTYPE)
    assert len(matching.ratio_filter(knn)) == 0


# -- RANSAC ---------------------------------------------------------------------------


def test_exact_translation_recovered():
    rng = np.random.default_rng(0)
    src = rng.uniform(0, 500, (100, 2))
    model, mask = matching.ransac_affine(src, src + [5.0, 0.0])
    assert np.allclose(model[:, :2], np.eye(2), atol=1e-9)
    assert np.allclose(model[:, 2], [5.0, 0.0], atol=1e-9)
    assert mask.all()


def test_two_points_are_insufficient():
    with pytest.raises(InsufficientMatchesError):
        matching.ransac_affine(np.zeros((2, 2)), np.zeros((2, 2)))


def test_below_min_matches_is_insufficient():
    pts = np.random.default_rng(0).uniform(0, 100, (7, 2))
    with pytest.raises(InsufficientMatchesError):
        matching.ransac_affine(pts, pts)


def test_collinear_points_are_degenerate():
    x = np.linspace(0, 100, 30)
    pts = np.column_stack([x, 2 * x + 1])
    with pytest.raises(DegenerateGeometryError):
        matching.ransac_affine(pts, pts + 1)


def test_pure_noise_is_degenerate():
    rng = np.random.default_rng(5)
    with pytest.raises(DegenerateGeometryError):
        matching.ransac_affine(rng.uniform(0, 1000, (12, 2)), rng.uniform(0, 1000, (12, 2)),
                               RansacParams(min_matches=8))


def test_ransac_is_deterministic_for_a_seed():
    rng = np.random.default_rng(8)
    src = rng.uniform(0, 400, (60, 2))
    dst = src @ np.array([[0.98, 0.05], [-0.04, 1.01]]).T + [3, -2] + rng.normal(0, 0.5, (60, 2))
    dst[:18] = rng.uniform(0, 400, (18, 2))
    p = RansacParams(rng_seed=42)
    m1, k1 = matching.ransac_affine(src, dst, p)
    m2, k2 = matching.ransac_affine(src, dst, p)
    assert np.array_equal(m1, m2) and np.array_equal(k1, k2)
    assert k1.sum() >= p.min_matches


def test_ransac_inliers_do_not_depend_on_input_order():
    rng = np.random.default_rng(9)
    src = rng.uniform(0, 400, (80, 2))
    dst = src + [2.0, 1.0] + rng.normal(0, 0.3, (80, 2))
    dst[:20] = rng.uniform(0, 400, (20, 2))
    perm = rng.permutation(80)
    _, mask = matching.ransac_affine(src, dst)
    _, mask_p = matching.ransac_affine(src[perm], dst[perm])
    assert (mask[perm] == mask_p).all()


def test_invalid_ransac_params():
    with pytest.raises(ConfigError):
        RansacParams(inlier_threshold=0)
    with pytest.raises(ConfigError):
        RansacParams(confidence=1.0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.8, 1.2), st.floats(-0.2, 0.2))
def test_affine_from_points_roundtrip(tx, ty, s, shear):
    model = np.array([[s, shear, tx], [-shear, s, ty]])
    src = np.random.default_rng(0).uniform(0, 100, (10, 2))
    fit = matching.affine_from_points(src, matching.apply_affine(model, src))
    assert np.allclose(fit, model, atol=1e-8)
    assert matching.reprojection_errors(fit, src, matching.apply_affine(model, src)).max() < 1e-8
