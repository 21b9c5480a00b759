import io
import json
import math
from pathlib import Path

import numpy as np
import pytest

from zerospeed import pipeline, synth
from zerospeed.decision import MotionState
from zerospeed.errors import ConfigError, InputError, SequencingError, SignalParseError
from zerospeed.frames import frame_name, list_frames, read_frame, write_frame
from zerospeed.imgproc import RoiSpec
from zerospeed.pipeline import FrameDecision, MotionPipeline, PipelineConfig, RoiProfile, SpeedSignal

W, H = 352, 288

DEFAULT_CONFIG = str(Path(__file__).resolve().parents[1] / "configs" / "default.json")


def _states(frames):
    pipe = MotionPipeline()
    return [pipe.process_frame(f, k).state for k, f in enumerate(frames)]


def test_static_sequence_classified_static_from_frame_two():
    frames, _ = synth.generate(synth.static_spec(seed=0, width=W, height=H, n_frames=6))
    states = _states(frames)
    assert states[:2] == [MotionState.INDETERMINATE] * 2
    assert states[2:] == [MotionState.STATIC] * 4


def test_translating_sequence_classified_moving():
    frames, _ = synth.generate(synth.moving_spec(seed=0, width=W, height=H, n_frames=6))
    states = _states(frames)
    assert states[0] == MotionState.INDETERMINATE
    assert states[2:] == [MotionState.MOVING] * 4


def test_rgb_frames_are_accepted():
    frames, _ = synth.generate(synth.static_spec(seed=1, width=W, height=H, n_frames=3))
    rgb = [np.repeat(f[..., None], 3, axis=2) for f in frames]
    assert _states(rgb) == _states(frames)


def test_out_of_order_frame_is_rejected():
    frames, _ = synth.generate(synth.static_spec(seed=0, width=W, height=H, n_frames=2))
    pipe = MotionPipeline()
    pipe.process_frame(frames[0], 5)
    with pytest.raises(SequencingError):
        pipe.process_frame(frames[1], 5)


def test_gap_in_frame_indices_restarts_the_window():
    frames, _ = synth.generate(synth.static_spec(seed=0, width=W, height=H, n_frames=5))
    pipe = MotionPipeline()
    out = [pipe.process_frame(f, k).state for k, f in zip((0, 1, 2, 10, 11), frames)]
    assert out == [MotionState.INDETERMINATE, MotionState.INDETERMINATE, MotionState.STATIC,
                   MotionState.INDETERMINATE, MotionState.INDETERMINATE]


def test_featureless_frames_are_indeterminate():
    flat = np.full((H, W), 120, dtype=np.uint8)
    assert set(_states([flat] * 4)) == {MotionState.INDETERMINATE}


def test_pixels_outside_roi_are_never_read():
    frames, _ = synth.generate(synth.static_spec(seed=2, width=W, height=H, n_frames=2))
    img = frames[0]
    x0, x1, y0, y1 = RoiSpec().pixel_bounds(W, H)
    other = np.random.default_rng(0).integers(0, 256, img.shape, dtype=np.uint8)
    other[y0:y1, x0:x1] = img[y0:y1, x0:x1]
    pipe = MotionPipeline()
    ka, da = pipe.features(img)
    kb, db = pipe.features(other)
    assert np.array_equal(da, db) and np.array_equal(ka.x, kb.x) and np.array_equal(ka.y, kb.y)
    assert ka.x.min() >= x0 and ka.x.max() < x1 and ka.y.min() >= y0 and ka.y.max() < y1


# -- configuration --------------------------------------------------------------------


def test_default_config_file_matches_builtin_defaults():
    cfg = pipeline.load_config(DEFAULT_CONFIG)
    assert cfg.roi_profiles[0] == RoiProfile(5.0, RoiSpec())
    assert math.isinf(cfg.roi_profiles[-1].max_speed_kmh)
    assert cfg.sift == PipelineConfig().sift and cfg.ransac == PipelineConfig().ransac
    assert cfg.thresholds == PipelineConfig().thresholds


def test_config_roundtrip():
    cfg = pipeline.load_config(DEFAULT_CONFIG).with_seed(7)
    again = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.ransac.rng_seed == 7


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"sift": {"max_features": 0}},
    {"sift": {"octaves": 4}},
    {"roi_profiles": [{"max_speed_kmh": 5, "roi": [0, 1, 0, 1]}]},
    {"roi_profiles": [{"max_speed_kmh": None, "roi": [0.5, 0.5, 0, 1]}]},
    {"ratio": 1.5},
    {"sd_combine": "median"},
    {"min_track_len": 7},
    [],
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(data)


def test_roi_profile_selected_by_speed():
    cfg = pipeline.load_config(DEFAULT_CONFIG)
    assert cfg.roi_for_speed(None) == cfg.roi_profiles[0].roi
    assert cfg.roi_for_speed(5.0) == cfg.roi_profiles[0].roi
    assert cfg.roi_for_speed(5.1) == cfg.roi_profiles[1].roi


# -- speed signal ---------------------------------------------------------------------


def test_speed_signal_step_hold(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("frame,speed_kmh\n0,0\n50,4\n")
    sig = pipeline.load_speed_signal(p)
    assert (sig(49), sig(50), sig(1000)) == (0.0, 4.0, 4.0)


def test_speed_signal_defaults_to_zero(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("frame,speed_kmh\n")
    assert pipeline.load_speed_signal(p)(12) == 0.0
    assert SpeedSignal([10], [3.0])(9) == 0.0


@pytest.mark.parametrize("body, line", [("frame,speed_kmh\n0,1\n1,fast\n", ":3:"),
                                        ("frame,speed_kmh\n0,1,2\n", ":2:"),
                                        ("time,speed\n", ":1:")])
def test_malformed_signal_cites_line(tmp_path, body, line):
    p = tmp_path / "s.csv"
    p.write_text(body)
    with pytest.raises(SignalParseError, match=line):
        pipeline.load_speed_signal(p)


# -- frames and run ---------------------------------------------------------------------


def test_frame_decision_json_schema():
    d = FrameDecision(3, MotionState.VIBRATION, 0.123456789, 0.3, 0.0, 42, 77, 12.3456789)
    line = d.to_json()
    obj = json.loads(line)
    assert "\n" not in line
    assert list(obj) == ["frame", "state", "mean_displacement_px", "sd_x_px", "sd_y_px",
                         "active_tracks", "matched_points", "latency_ms"]
    assert obj["state"] == "vibration" and obj["mean_displacement_px"] == 0.123457
    assert FrameDecision.from_dict(obj).state == MotionState.VIBRATION


def test_run_emits_one_line_per_frame(tmp_path):
    spec = synth.static_spec(seed=0, width=W, height=H, n_frames=5)
    synth.write_sequence(spec, tmp_path)
    out = io.StringIO()
    summary = pipeline.run(tmp_path, sink=out)
    lines = out.getvalue().splitlines()
    assert len(lines) == 5 == summary.frames
    assert [json.loads(x)["frame"] for x in lines] == list(range(5))
    assert summary.counts["static"] == 3 and summary.counts["indeterminate"] == 2


def test_run_skips_unreadable_frames_unless_strict(tmp_path):
    synth.write_sequence(synth.static_spec(seed=0, width=W, height=H, n_frames=4), tmp_path)
    (tmp_path / frame_name(2)).write_bytes(b"not an image")
    got = []
    summary = pipeline.run(tmp_path, sink=got.append)
    assert summary.errors == 1 and [d.frame for d in got] == [0, 1, 2, 3]
    assert got[2].state == MotionState.INDETERMINATE
    with pytest.raises(InputError, match="frame_000002"):
        pipeline.run(tmp_path, strict=True)


def test_empty_directory_is_input_error(tmp_path):
    with pytest.raises(InputError):
        pipeline.run(tmp_path)
    with pytest.raises(InputError):
        pipeline.run([])


def test_frame_files_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (20, 30), dtype=np.uint8)
    write_frame(tmp_path / frame_name(7, "png"), img)
    write_frame(tmp_path / frame_name(3, "pgm"), img)
    (tmp_path / "notes.txt").write_text("x")
    found = list_frames(tmp_path)
    assert [i for i, _ in found] == [3, 7]
    assert all(np.array_equal(read_frame(p), img) for _, p in found)


def test_rgb_png_goes_through_bt601(tmp_path):
    from PIL import Image

    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    Image.fromarray(rgb).save(tmp_path / "frame_000000.png")
    assert (read_frame(tmp_path / "frame_000000.png") == 76).all()
