import json

import numpy as np
import pytest

from zerospeed import synth
from zerospeed.errors import ConfigError
from zerospeed.synth import Intruder, SceneSpec


def _small(**kw):
    kw.setdefault("width", 96)
    kw.setdefault("height", 80)
    kw.setdefault("n_frames", 10)
    return kw


def test_same_spec_gives_identical_frames():
    spec = synth.vibration_spec(seed=3, **_small())
    a, ta = synth.generate(spec)
    b, tb = synth.generate(spec)
    assert all(np.array_equal(x, y) for x, y in zip(a, b)) and ta == tb


def test_different_seeds_differ():
    a, _ = synth.generate(synth.static_spec(seed=1, **_small()))
    b, _ = synth.generate(synth.static_spec(seed=2, **_small()))
    assert not np.array_equal(a[0], b[0])


def test_noiseless_static_frames_are_identical():
    frames, truth = synth.generate(synth.static_spec(seed=0, pixel_noise_sigma=0.0, **_small()))
    assert all(np.array_equal(frames[0], f) for f in frames)
    assert [t["label"] for t in truth] == ["static"] * 10
    assert frames[0].dtype == np.uint8 and frames[0].shape == (80, 96)


def test_moving_scene_is_an_exact_integer_shift():
    spec = synth.moving_spec(seed=0, motion=(3.0, 0.0), pixel_noise_sigma=0.0, **_small())
    frames, _ = synth.generate(spec)
    assert np.allclose(synth.global_offsets(spec), [(3.0 * k, 0.0) for k in range(10)])
    for k in range(1, 10):
        assert np.array_equal(frames[k][:, 3 * k:], frames[0][:, : 96 - 3 * k])


def test_diagonal_motion_is_exact():
    spec = synth.moving_spec(seed=4, motion=(2.0, -1.0), pixel_noise_sigma=0.0, **_small())
    frames, _ = synth.generate(spec)
    k = 4
    assert np.array_equal(frames[k][: 80 - k, 2 * k:], frames[0][k:, : 96 - 2 * k])


def test_vibration_window_drift_below_threshold():
    spec = synth.vibration_spec(seed=0, n_frames=200)
    off = synth.global_offsets(spec)
    drift = np.hypot(*(off[4:] - off[:-4]).T)
    assert drift.max() < 0.5
    assert abs(off.mean(axis=0)).max() < 0.1


def test_vibration_frames_are_not_rigid():
    spec = synth.vibration_spec(seed=2, pixel_noise_sigma=0.0, osc_amplitude=0.0, **_small())
    frames, _ = synth.generate(spec)
    assert not np.array_equal(frames[0], frames[1])


def test_intruder_and_illumination():
    spec = synth.static_spec(seed=0, pixel_noise_sigma=0.0, illumination_ramp=20.0,
                             intruder=Intruder(20, 10, 10.0, 10.0, (5.0, 0.0)), **_small())
    frames, _ = synth.generate(spec)
    diff = frames[1].astype(int) - frames[0].astype(int)
    # background brightens uniformly; the intruder region changes differently
    assert np.median(diff) == pytest.approx(20.0 / 9, abs=1.01)
    assert (np.abs(diff[10:20, 10:40] - np.median(diff)) > 3).any()


@pytest.mark.parametrize("texture", synth.TEXTURES)
def test_textures_render(texture):
    frames, _ = synth.generate(synth.static_spec(texture=texture, **_small(n_frames=2)))
    assert frames[0].std() > 0


def test_low_texture_is_nearly_flat():
    tex = synth.make_texture("low_texture", 0.5, 200, 200, np.random.default_rng(0))
    assert np.abs(np.diff(tex, axis=1)).max() < 0.5


@pytest.mark.parametrize("bad", [dict(kind="rolling"), dict(n_frames=1), dict(texture="grass"),
                                 dict(jitter_amplitude=-1), dict(texture_density=0)])
def test_invalid_specs(bad):
    with pytest.raises(ConfigError):
        SceneSpec(**bad)


def test_write_and_reload_sequence(tmp_path):
    spec = synth.moving_spec(seed=5, intruder=Intruder(), **_small(n_frames=3))
    out = synth.write_sequence(spec, tmp_path / "seq", ext="png")
    assert sorted(p.name for p in out.iterdir()) == [
        "frame_000000.png", "frame_000001.png", "frame_000002.png", "spec.json", "truth.jsonl"]
    truth = [json.loads(line) for line in (out / "truth.jsonl").read_text().splitlines()]
    assert truth == [{"frame": k, "label": "moving"} for k in range(3)]
    assert synth.load_spec(out / "spec.json") == spec
