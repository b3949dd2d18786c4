import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.signal import savgol_filter

from contactfield.core import TactileState
from contactfield.errors import CalibrationError, ConfigError, ValidationError
from contactfield.tactile import (
    K_NORMAL,
    K_SHEAR,
    L_C,
    CalibrationScale,
    FilterConfig,
    GateConfig,
    Wrench,
    calibrate,
    compute_wrench,
    configs_from_mapping,
    contact_gate,
    filter_episode,
    gate_statistic,
    gate_threshold,
    load_filter_config,
    marker_forces,
    phase_smooth,
    savitzky_golay,
    spatial_filter,
)
from conftest import make_frame, make_tactile
from oracles import gaussian_taps

series_elems = st.floats(-100, 100, allow_nan=False, width=64)


class TestSavitzkyGolay:
    def test_interior_is_centered_moving_average(self, rng):
        x = rng.normal(size=40)
        y = savitzky_golay(x, 7, 1)
        ma = np.convolve(x, np.ones(7) / 7, mode="valid")
        np.testing.assert_allclose(y[3:-3], ma, atol=1e-12)

    def test_interior_matches_scipy_for_higher_order(self, rng):
        x = rng.normal(size=(30, 4))
        y = savitzky_golay(x, 9, 3)
        ref = savgol_filter(x, 9, 3, axis=0)
        np.testing.assert_allclose(y[4:-4], ref[4:-4], atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(7, 40))
    def test_lines_are_reproduced_everywhere(self, a, b, n):
        x = a + b * np.arange(n, dtype=float)
        np.testing.assert_allclose(savitzky_golay(x, 7, 1), x, atol=1e-9 * (1 + abs(a) + n * abs(b)))

    def test_boundary_uses_truncated_window(self):
        x = np.array([1.0, 5.0, 2.0, 8.0, 3.0, 0.0, 4.0, 6.0])
        # first sample: least-squares line through samples 0..3, evaluated at 0
        coef = np.polyfit(np.arange(4), x[:4], 1)
        assert savitzky_golay(x, 7, 1)[0] == pytest.approx(np.polyval(coef, 0.0), abs=1e-12)

    def test_rejects_even_window_and_short_series(self):
        with pytest.raises(ConfigError):
            savitzky_golay(np.zeros(10), 6, 1)
        with pytest.raises(ValidationError):
            savitzky_golay(np.zeros(5), 7, 1)


class TestSpatialFilter:
    def test_taps_match_closed_form(self):
        taps = gaussian_taps(0.25)
        assert len(taps) == 3  # radius ceil(4 * 0.25) = 1
        impulse = np.zeros((7, 9))
        impulse[3, 4] = 1.0
        out = spatial_filter(impulse, 0.25)
        np.testing.assert_allclose(out[2:5, 3:6], np.outer(taps, taps), atol=1e-15)
        # frozen: exp(-8) / (1 + 2 exp(-8)) for the neighbour weight
        assert taps[0] == pytest.approx(3.3523e-4, rel=1e-4)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (7, 9, 2), elements=series_elems))
    def test_channel_sums_are_preserved(self, grid):
        out = spatial_filter(grid, 0.25)
        np.testing.assert_allclose(out.sum(axis=(0, 1)), grid.sum(axis=(0, 1)), atol=1e-9)

    def test_constant_grid_is_unchanged(self):
        g = np.full((2, 7, 9, 3), 4.5)
        np.testing.assert_allclose(spatial_filter(g, 0.8), g, atol=1e-12)

    def test_sensors_are_filtered_independently(self):
        g = np.zeros((2, 7, 9, 1))
        g[0, 3, 4] = 1.0
        assert not spatial_filter(g, 0.5)[1].any()


class TestPhaseSmoothing:
    def test_precontact_ramp_example(self):
        out = phase_smooth([4.0, 0.0, 2.0, 6.0], [0.0, 0.0, 0.0, -0.01])
        np.testing.assert_allclose(out, [2.0, 10 / 3, 14 / 3, 6.0], atol=1e-12)

    def test_postcontact_ramp_ends_at_median(self):
        out = phase_smooth([5.0, 1.0, 9.0, 3.0], [-0.01, -0.01, 0.0, 0.0])
        np.testing.assert_allclose(out, [5.0, 1.0, 1.0 + (6.0 - 1.0) / 2, 6.0])

    def test_contact_segment_untouched(self, rng):
        x = rng.normal(size=12)
        depth = np.zeros(12)
        depth[4:8] = -0.01
        out = phase_smooth(x, depth)
        np.testing.assert_array_equal(out[4:8], x[4:8])

    def test_no_contact_collapses_to_median(self):
        np.testing.assert_array_equal(phase_smooth([3.0, 1.0, 2.0], [0, 0, 0]), [2.0, 2.0, 2.0])

    def test_switches_disable_each_side(self):
        x = [4.0, 0.0, 2.0, 6.0, 1.0, 9.0]
        depth = [0, 0, 0, -0.01, 0, 0]
        cfg = FilterConfig(precontact_smoothing=False)
        out = phase_smooth(x, depth, cfg)
        np.testing.assert_array_equal(out[:4], x[:4])

    def test_idempotent_on_flat_segments(self):
        x = np.array([2.0, 2.0, 2.0, 7.0, 7.0, 7.0])
        depth = [0, 0, -0.01, -0.01, 0, 0]
        once = phase_smooth(x, depth)
        np.testing.assert_allclose(phase_smooth(once, depth), once)


class TestWrench:
    def test_single_marker_force_model(self):
        tac = make_tactile()
        disp = np.zeros((126, 3))
        depth = np.zeros(126)
        disp[5] = [0.001, -0.002, 0.0]
        depth[5] = -0.001
        tac = TactileState(tac.positions, disp, depth)
        w = compute_wrench(tac)
        f = np.array([K_SHEAR * 0.001, K_SHEAR * -0.002, K_NORMAL * 0.001])
        np.testing.assert_allclose(w.force, f)
        np.testing.assert_allclose(w.torque, np.cross(tac.positions[5], f))

    def test_scale_is_linear(self, rng):
        tac = make_tactile(rng, 1e-3)
        a = compute_wrench(tac).vector()
        b = compute_wrench(tac, CalibrationScale(2.5)).vector()
        np.testing.assert_allclose(b, 2.5 * a)

    def test_sensor_rotation_applies(self, rng):
        tac = make_tactile(rng, 1e-3)
        flip = np.array([np.eye(3), np.diag([-1.0, -1.0, 1.0])])
        rotated = TactileState(tac.positions, tac.displacements, tac.depth, rotations=flip)
        _, f_rot = marker_forces(rotated)
        _, f_id = marker_forces(tac)
        np.testing.assert_allclose(f_rot[:63], f_id[:63])
        np.testing.assert_allclose(f_rot[63:, :2], -f_id[63:, :2])
        np.testing.assert_allclose(f_rot[63:, 2], f_id[63:, 2])

    def test_gripper_pose_moves_arms(self, rng):
        tac = make_tactile(rng, 1e-3)
        pose = [0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0]
        shifted = TactileState(tac.positions + [0, 0, 0.5], tac.displacements, tac.depth)
        np.testing.assert_allclose(compute_wrench(shifted, gripper_pose=pose).vector(),
                                   compute_wrench(tac).vector(), atol=1e-12)

    def test_scaled_vector_units(self):
        w = Wrench([1.0, 2.0, 3.0], [0.05, 0.1, 0.0])
        np.testing.assert_allclose(w.scaled(), [1, 2, 3, 1, 2, 0])
        assert L_C == 0.05

    def test_calibrate_is_norm_ratio(self):
        obs = Wrench([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        ref = Wrench([3.0, 4.0, 0.0], [0.0, 0.0, 0.0])
        assert calibrate(obs, ref).scale == pytest.approx(5.0)
        with pytest.raises(CalibrationError):
            calibrate(Wrench.zero(), ref)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(CalibrationError):
            CalibrationScale(0.0)


class TestGate:
    def _series(self, mags):
        base = make_tactile()
        out = []
        for m in mags:
            disp = np.zeros((126, 3))
            disp[:, 0] = m
            out.append(TactileState(base.positions, disp, np.zeros(126)))
        return out

    def test_threshold_is_mean_plus_k_std_of_noise_window(self):
        stat = np.array([1.0, 2.0, 3.0, 2.0, 1.0, 50.0])
        expected = stat[:5].mean() + 3 * stat[:5].std()
        assert gate_threshold(stat, GateConfig()) == pytest.approx(expected)

    def test_gate_flags_large_displacement(self):
        series = self._series([1e-5, 2e-5, 1e-5, 2e-5, 1e-5, 1e-3, 2e-3, 1e-5])
        np.testing.assert_allclose(gate_statistic(series)[5], 1e-3)
        np.testing.assert_array_equal(contact_gate(series), [0, 0, 0, 0, 0, 1, 1, 0])

    def test_zero_signal_never_in_contact(self):
        assert not contact_gate(self._series([0.0] * 8)).any()

    def test_override_wins(self):
        series = self._series([0.0, 1.0, 2.0])
        np.testing.assert_array_equal(contact_gate(series, GateConfig(threshold_override=1.5)), [0, 0, 1])

    def test_empty_window_without_override_raises(self):
        with pytest.raises(ConfigError):
            contact_gate(self._series([0.0, 1.0]), GateConfig(noise_window=(5, 9)))


class TestConfig:
    def test_listing_style_yaml(self, tmp_path):
        path = tmp_path / "filter.yaml"
        path.write_text(
            "Tactile_Filtering:\n"
            "  spatial: {enabled: true, method: gaussian, sigma: 0.5}\n"
            "  temporal: {enabled: true, method: savgol, window_length: 9, polyorder: 2}\n"
            "Contact_Smoothing:\n"
            "  precontact_smoothing: false\n"
            "  postcontact_smoothing: true\n"
            "  method: linear\n"
            "  depth_threshold: -0.003\n"
            "gate: {k_sigma: 4, noise_window: [0, 10]}\n"
        )
        fc, gc = load_filter_config(path)
        assert (fc.spatial_sigma, fc.sg_window, fc.sg_polyorder) == (0.5, 9, 2)
        assert not fc.precontact_smoothing and fc.depth_threshold == -0.003
        assert gc.k_sigma == 4 and gc.noise_window == (0, 10)

    def test_flat_json_mapping(self):
        fc, _ = configs_from_mapping({"temporal": {"window_length": 5}})
        assert fc.sg_window == 5 and fc.spatial_sigma == 0.25

    @pytest.mark.parametrize("data", [
        {"temporal": {"window_length": 4}},
        {"spatial": {"method": "median"}},
        {"method": "cubic"},
        {"spatial": {"sigma": "wide"}},
    ])
    def test_invalid_values_raise_config_error(self, data):
        with pytest.raises(ConfigError):
            configs_from_mapping(data)


def test_filter_episode_keeps_shapes_and_rebuilds_history():
    frames = [make_frame(0.05 * i) for i in range(10)]
    out = filter_episode(frames, FilterConfig())
    assert len(out) == 10
    np.testing.assert_array_equal(out[4].tactile.history[:, 9:12], out[3].tactile.displacements)
    assert out[0].tactile.depth.shape == (126,)


def test_filter_episode_all_stages_off_is_identity():
    frames = [make_frame(0.05 * i) for i in range(8)]
    cfg = FilterConfig(spatial_enabled=False, temporal_enabled=False,
                       precontact_smoothing=False, postcontact_smoothing=False)
    out = filter_episode(frames, cfg)
    for a, b in zip(frames, out):
        np.testing.assert_array_equal(a.tactile.displacements, b.tactile.displacements)
