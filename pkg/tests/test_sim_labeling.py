import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contactfield.errors import ParseError, ValidationError
from contactfield.sim_labeling import (
    ExtrapolationConfig,
    SoftContactConfig,
    SparseContact,
    clip_magnitudes,
    depth_modulation,
    extrapolate_forces,
    label_frame_sim,
    read_contacts,
    soft_contact_prob,
    write_contacts,
)

NO_CLIP = ExtrapolationConfig(clip_percentile=None)


def _contacts(rng, k, scale=1.0):
    n = rng.normal(size=(k, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return [SparseContact(rng.uniform(-0.05, 0.05, 3), n[i], scale * rng.uniform(0.1, 5)) for i in range(k)]


class TestSoftContact:
    def test_anchor_values(self):
        cfg = SoftContactConfig()
        assert soft_contact_prob(0.0) == 1.0
        assert soft_contact_prob(0.005) == pytest.approx(0.5, abs=1e-12)
        # frozen: 0.005 / ln(2)^(1/1.7) evaluated with mpmath at 30 digits
        assert cfg.length_scale == pytest.approx(0.006203004355000004, rel=1e-12)

    def test_penetration_is_certain_contact(self):
        np.testing.assert_array_equal(soft_contact_prob([-0.01, -1e-6, 0.0]), 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 0.05), st.floats(0, 0.05))
    def test_monotone_in_clearance(self, a, b):
        lo, hi = sorted([a, b])
        assert soft_contact_prob(lo) >= soft_contact_prob(hi)

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            SoftContactConfig(k_sharpness=0.0)


class TestDepthModulation:
    def test_values(self):
        np.testing.assert_allclose(depth_modulation([-0.01, 0.0, 0.0025, 0.005, 0.01], 0.005),
                                   [1.0, 1.0, math.sqrt(0.5), 0.0, 0.0])


class TestExtrapolation:
    def test_single_contact_copies_its_force_at_the_surface(self):
        c = SparseContact([0, 0, 0], [0, 0, 1], 3.0)
        pts = np.array([[0.0, 0, 0], [0.01, 0, 0], [0, 0, 0.01]])
        f = extrapolate_forces(pts, np.array([0.0, -0.001, 0.01]), [c], NO_CLIP)
        np.testing.assert_allclose(f[:2], [[0, 0, 3.0], [0, 0, 3.0]])
        np.testing.assert_allclose(f[2], 0.0)

    def test_two_contact_kernel_weights(self):
        cs = [SparseContact([0, 0, 0], [1, 0, 0], 1.0), SparseContact([0.02, 0, 0], [0, 1, 0], 2.0)]
        pts = np.array([[0.0, 0.0, 0.0]])
        w1 = 1.0
        w2 = 1.0 / (1.0 + (50 * 0.02) ** 2)
        expect = (w1 * np.array([1.0, 0, 0]) + w2 * np.array([0, 2.0, 0])) / (w1 + w2)
        np.testing.assert_allclose(extrapolate_forces(pts, [0.0], cs, NO_CLIP)[0], expect, rtol=1e-12)

    def test_no_contacts_gives_zero(self, rng):
        pts = rng.normal(size=(5, 3))
        assert not extrapolate_forces(pts, np.zeros(5), []).any()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 10))
    def test_linear_in_magnitudes(self, seed, s):
        rng = np.random.default_rng(seed)
        cs = _contacts(rng, 4)
        pts = rng.uniform(-0.05, 0.05, (30, 3))
        d = rng.uniform(-0.002, 0.006, 30)
        scaled = [SparseContact(c.position, c.normal, s * c.magnitude) for c in cs]
        np.testing.assert_allclose(extrapolate_forces(pts, d, scaled, NO_CLIP),
                                   s * extrapolate_forces(pts, d, cs, NO_CLIP), rtol=1e-9, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounded_by_largest_contact(self, seed):
        rng = np.random.default_rng(seed)
        cs = _contacts(rng, int(rng.integers(1, 8)))
        pts = rng.uniform(-0.1, 0.1, (50, 3))
        f = extrapolate_forces(pts, rng.uniform(-0.01, 0.01, 50), cs)
        assert np.linalg.norm(f, axis=1).max() <= max(c.magnitude for c in cs) * (1 + 1e-12)

    def test_clip_caps_at_percentile(self, backend, rng):
        f = rng.normal(size=(200, 3))
        out, cap = clip_magnitudes(f, 98.0)
        mags = np.linalg.norm(f, axis=1)
        assert cap == pytest.approx(np.percentile(mags, 98.0))
        assert np.linalg.norm(out, axis=1).max() == pytest.approx(cap, abs=1e-9)
        keep = mags <= cap
        np.testing.assert_array_equal(out[keep], f[keep])
        big = ~keep
        cos = np.sum(out[big] * f[big], axis=1) / (np.linalg.norm(out[big], axis=1) * mags[big])
        np.testing.assert_allclose(cos, 1.0)

    def test_clip_ignores_zero_vectors(self):
        f = np.zeros((10, 3))
        f[0] = [1.0, 0, 0]
        out, cap = clip_magnitudes(f, 98.0)
        assert cap == 1.0 and np.array_equal(out, f)
        assert clip_magnitudes(np.zeros((3, 3)), 98.0)[1] is None

    def test_distance_length_mismatch(self, rng):
        with pytest.raises(ValidationError):
            extrapolate_forces(rng.normal(size=(4, 3)), np.zeros(3), _contacts(rng, 1))


def test_label_frame_combines_probability_and_force(rng):
    cs = _contacts(rng, 3)
    pts = rng.uniform(-0.05, 0.05, (20, 3))
    d = rng.uniform(-0.002, 0.01, 20)
    cf = label_frame_sim(pts, d, cs)
    np.testing.assert_array_equal(cf.prob, soft_contact_prob(d))
    assert not cf.force[d >= 0.005].any()


def test_contacts_round_trip(tmp_path, rng):
    frames = [_contacts(rng, 2), [], _contacts(rng, 1)]
    path = tmp_path / "c.jsonl"
    write_contacts(path, frames)
    back = read_contacts(path)
    assert [len(x) for x in back] == [2, 0, 1]
    np.testing.assert_array_equal(back[0][1].position, frames[0][1].position)


def test_contacts_bad_record(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('[{"x": [0, 0, 0]}]\n')
    with pytest.raises(ParseError):
        read_contacts(path)


def test_contact_normal_must_be_unit():
    with pytest.raises(ValidationError):
        SparseContact([0, 0, 0], [0, 0, 2], 1.0)
