import math

import numpy as np
import pytest

from zerospeed import matching, sift
from zerospeed.errors import ConfigError, DimensionError
from zerospeed.sift import Keypoints, SiftParams


def _float(img):
    return np.asarray(img, dtype=np.float32) / 255.0


def _blob(size=200, cx=100.0, cy=100.0, sigma=4.0):
    yy, xx = np.mgrid[:size, :size]
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2)).astype(np.float32)


@pytest.mark.parametrize("h, w, n", [(256, 256, 6), (490, 500, 6), (32, 40, 3), (576, 704, 7)])
def test_octave_count(h, w, n):
    assert sift.octave_count(h, w) == n


def test_pyramid_shape_on_default_roi_crop():
    pyr = sift.build_gaussian_pyramid(np.zeros((490, 500), dtype=np.float32))
    assert len(pyr) == 6
    assert all(level.shape[0] == 6 for level in pyr)
    assert pyr[1].shape[1:] == (245, 250)


def test_pyramid_of_constant_image_is_constant():
    pyr = sift.build_gaussian_pyramid(np.full((64, 64), 0.3, dtype=np.float32))
    for levels in pyr:
        assert np.allclose(levels, 0.3, atol=1e-6)
    assert len(sift.detect_keypoints(sift.build_dog_pyramid(pyr))) == 0


def test_pyramid_levels_follow_geometric_sigmas():
    s = sift.level_sigmas(SiftParams())
    assert np.allclose(s[1:] / s[:-1], 2 ** (1 / 3))
    assert s[0] == pytest.approx(1.6)


def test_too_small_image_is_dimension_error():
    with pytest.raises(DimensionError):
        sift.build_gaussian_pyramid(np.zeros((31, 64), dtype=np.float32))
    with pytest.raises(DimensionError):
        sift.detect_and_describe(np.zeros((20, 20), dtype=np.uint8))


def test_invalid_params_are_config_errors():
    with pytest.raises(ConfigError):
        SiftParams(max_features=0)
    with pytest.raises(ConfigError):
        SiftParams(contrast_threshold=-1)


def test_blob_gives_one_keypoint_at_its_centre():
    kps = sift.detect_keypoints(sift.build_dog_pyramid(sift.build_gaussian_pyramid(_blob())))
    assert len(kps) >= 1
    assert math.hypot(kps.x[0] - 100, kps.y[0] - 100) < 1.0
    # nothing else comes close in strength
    assert all(r < 0.5 * kps.response[0] for r in kps.response[1:])


def test_blob_centre_agrees_with_brute_force_extremum_scan():
    img = _blob(cx=90.0, cy=110.0)
    pyr = sift.build_gaussian_pyramid(img)
    dog = sift.build_dog_pyramid(pyr)[0]
    # strongest |DoG| sample over the interior of octave 0, by exhaustive scan
    s, r, c = np.unravel_index(np.argmax(np.abs(dog[1:-1, 5:-5, 5:-5])), dog[1:-1, 5:-5, 5:-5].shape)
    kps = sift.detect_keypoints([dog])
    assert abs(kps.x[0] - (c + 5)) <= 1.0 and abs(kps.y[0] - (r + 5)) <= 1.0


def test_step_edge_is_rejected_by_curvature_test():
    yy, xx = np.mgrid[:128, :128]
    img = (xx + 0.1 * yy > 64).astype(np.float32)
    dog = sift.build_dog_pyramid(sift.build_gaussian_pyramid(img))
    assert len(sift.detect_keypoints(dog)) == 0
    assert len(sift.detect_keypoints(dog, check_edges=False)) > 0


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.5, 4.0, 5.9])
def test_ramp_orientation_matches_gradient_direction(theta):
    yy, xx = np.mgrid[:200, :200]
    ramp = 0.5 + 0.004 * ((xx - 100) * math.cos(theta) + (yy - 100) * math.sin(theta))
    pyr = sift.build_gaussian_pyramid(ramp.astype(np.float32))
    kp = Keypoints.from_list([(100.0, 100.0, 0, 1, 1.6 * 2 ** (1 / 3), 0.0, 0.1)])
    out = sift.assign_orientations(kp, pyr)
    assert len(out) == 1
    diff = (out.orientation[0] - theta + math.pi) % (2 * math.pi) - math.pi
    assert abs(diff) < 0.05


def test_flat_window_drops_keypoint():
    pyr = sift.build_gaussian_pyramid(np.full((64, 64), 0.5, dtype=np.float32))
    kp = Keypoints.from_list([(32.0, 32.0, 0, 1, 2.0, 0.0, 0.1)])
    assert len(sift.assign_orientations(kp, pyr)) == 0


def test_descriptor_outside_image_is_dropped():
    pyr = sift.build_gaussian_pyramid(np.random.default_rng(0).random((64, 64)).astype(np.float32))
    kp = sift.Keypoint(3.0, 3.0, 0, 1, 2.0, 0.0, 0.1)
    assert sift.compute_descriptor(kp, pyr) is None


def test_descriptors_are_unit_norm_and_deterministic(texture):
    img = texture(256, 256, seed=4)
    k1, d1 = sift.detect_and_describe(img)
    k2, d2 = sift.detect_and_describe(img.copy())
    assert len(k1) == len(d1) > 0
    assert d1.shape[1] == 128 and d1.dtype == np.float32
    assert np.allclose(np.linalg.norm(d1.astype(np.float64), axis=1), 1.0, atol=1e-6)
    assert (d1 >= 0).all()
    assert np.array_equal(d1, d2)
    for f in ("x", "y", "sigma", "orientation", "response"):
        assert np.array_equal(getattr(k1, f), getattr(k2, f))
    assert (k1.orientation >= 0).all() and (k1.orientation < 2 * math.pi).all()
    assert (k1.response >= SiftParams().contrast_threshold).all()


def test_descriptor_is_insensitive_to_gain(texture):
    img = _float(texture(256, 256, seed=5))
    kps, d_ref = sift.detect_and_describe(img)
    _, d_half = sift.compute_descriptors(kps, sift.build_gaussian_pyramid(img * 0.5))
    assert len(d_half) == len(d_ref)
    assert np.linalg.norm(d_ref - d_half, axis=1).max() < 0.1


def test_feature_count_is_capped(texture):
    kps, desc = sift.detect_and_describe(texture(512, 512, seed=1))
    assert 1 <= len(kps) <= 1000
    small, _ = sift.detect_and_describe(texture(512, 512, seed=1), SiftParams(max_features=50))
    assert len(small) == 50


def test_cap_keeps_the_strongest(texture):
    dog = sift.build_dog_pyramid(sift.build_gaussian_pyramid(_float(texture(256, 256, seed=2))))
    full = sift.detect_keypoints(dog, SiftParams(max_features=100000))
    capped = sift.detect_keypoints(dog, SiftParams(max_features=40))
    assert len(full) > 40
    assert capped.response.min() >= np.sort(full.response)[::-1][40:].max()
    assert np.array_equal(capped.x, full.x[:40]) and np.array_equal(capped.y, full.y[:40])


@pytest.mark.parametrize("lo, hi", [(0.02, 0.04), (0.04, 0.06), (0.03, 0.1)])
def test_contrast_threshold_is_monotone(texture, lo, hi):
    dog = sift.build_dog_pyramid(sift.build_gaussian_pyramid(_float(texture(192, 192, seed=7))))

    def keyset(t):
        k = sift.detect_keypoints(dog, SiftParams(max_features=100000, contrast_threshold=t))
        return set(zip(k.octave.tolist(), k.scale_index.tolist(), k.x.tolist(), k.y.tolist()))

    strict, loose = keyset(hi), keyset(lo)
    assert strict <= loose
    assert len(loose) > len(strict)


def test_rotation_by_quarter_turn_shifts_orientation(texture):
    img = texture(256, 256, seed=9)
    rot = np.ascontiguousarray(np.rot90(img))  # (x, y) -> (y, W-1-x): angles drop by pi/2
    ka, da = sift.detect_and_describe(img)
    kb, db = sift.detect_and_describe(rot)
    good = matching.ratio_filter(matching.knn_match(da, db, 2), 0.75)
    xa, ya = ka.x[good["query_index"]], ka.y[good["query_index"]]
    xb, yb = kb.x[good["train_index"]], kb.y[good["train_index"]]
    geometric = np.hypot(xb - ya, yb - (img.shape[1] - 1 - xa)) < 1.5
    assert geometric.sum() >= 50
    delta = (ka.orientation[good["query_index"]] - kb.orientation[good["train_index"]]) % (2 * math.pi)
    ok = np.abs(delta[geometric] - math.pi / 2) < 0.1
    assert ok.mean() >= 0.8
