from dataclasses import replace

import numpy as np
import pytest

from contactfield import synth
from contactfield.errors import ConfigError
from contactfield.metrics import f1_from_counts
from contactfield.real_labeling import HeuristicConfig, heuristic_contact
from contactfield.tactile import CalibrationScale, compute_wrench, contact_gate


@pytest.fixture(scope="module")
def episode():
    return synth.generate_episode(synth.SynthConfig(episode=synth.MotionSpec(n_frames=30)))


def test_frame_count_and_time_order(episode):
    assert len(episode.frames) == len(episode.truth) == len(episode.contacts) == 30
    times = [f.time for f in episode.frames]
    assert times == sorted(times)


def test_injected_wrench_matches_markers(episode):
    cal = CalibrationScale(episode.calibration_scale)
    for f, w in zip(episode.frames, episode.wrenches):
        got = compute_wrench(f.tactile, cal, gripper_pose=f.gripper_pose)
        np.testing.assert_allclose(got.vector(), w.vector(), atol=1e-9)


def test_injected_forces_lie_in_friction_cones(episode):
    for f, cf in zip(episode.frames, episode.truth):
        mags = np.linalg.norm(cf.force, axis=1)
        on = mags > 0
        assert np.all(mags[on] <= 2 * np.sum(cf.force[on] * f.tool_normals[on], axis=1) + 1e-9)


def test_press_force_magnitude(episode):
    press = synth.MotionSpec().press_force
    totals = [np.linalg.norm(cf.force.sum(axis=0)) for cf in episode.truth]
    assert max(totals) == pytest.approx(press, rel=1e-9)


def test_heuristic_recovers_contact_set(episode):
    cfg = HeuristicConfig(epsilon_height=synth.MotionSpec().contact_tol)
    for f, mask in zip(episode.frames, episode.contact_masks):
        pred = heuristic_contact(f, cfg).prob > 0
        tp = int(np.sum(pred & mask))
        assert f1_from_counts(tp, int(np.sum(pred & ~mask)), int(np.sum(~pred & mask))) == 1.0


def test_gate_sees_the_press(episode):
    gates = contact_gate([f.tactile for f in episode.frames])
    loaded = np.array([np.linalg.norm(w.vector()) > 0 for w in episode.wrenches])
    np.testing.assert_array_equal(gates, loaded)


def test_zero_press_force_gives_silent_markers():
    cfg = synth.SynthConfig(episode=synth.MotionSpec(n_frames=12, press_force=0.0))
    ep = synth.generate_episode(cfg)
    assert all(not f.tactile.displacements.any() for f in ep.frames)
    assert not contact_gate([f.tactile for f in ep.frames]).any()


def test_same_seed_is_bit_identical():
    cfg = synth.SynthConfig(noise=synth.NoiseSpec(point_sigma=0.001, marker_sigma=0.05),
                            episode=synth.MotionSpec(n_frames=6))
    a, b = synth.generate_episode(cfg), synth.generate_episode(cfg)
    for x, y in zip(a.frames, b.frames):
        np.testing.assert_array_equal(x.tool_points, y.tool_points)
        np.testing.assert_array_equal(x.tactile.displacements, y.tactile.displacements)
    c = synth.generate_episode(replace(cfg, rng_seed=1))
    assert not np.array_equal(a.frames[0].tool_points, c.frames[0].tool_points)


def test_crayon_shape_generates():
    cfg = synth.SynthConfig(tool=synth.ToolSpec(shape="crayon"), episode=synth.MotionSpec(n_frames=10))
    ep = synth.generate_episode(cfg)
    assert any(m.any() for m in ep.contact_masks)


@pytest.mark.parametrize("kw", [
    dict(episode=synth.MotionSpec(n_frames=2)),
    dict(episode=synth.MotionSpec(approach_depth=0.5)),
    dict(tool=synth.ToolSpec(blade_length=-1.0)),
    dict(tool=synth.ToolSpec(shape="spoon")),
    dict(noise=synth.NoiseSpec(point_sigma=-1.0)),
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        synth.SynthConfig(**kw)


def test_config_dict_round_trip(tmp_path):
    cfg = synth.SynthConfig(table_z=0.1, episode=synth.MotionSpec(n_frames=7))
    assert synth.SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        synth.SynthConfig.from_dict({"episode": {"frames": 3}})
    path = tmp_path / "c.json"
    path.write_text("{bad")
    with pytest.raises(ConfigError):
        synth.load_config(path)
