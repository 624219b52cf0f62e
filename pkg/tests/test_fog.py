"""Scattering-model tests: hand values, round trips, multiplier identity."""

import numpy as np
import pytest

from defog.fog import (FogField, MultiplierMap, feature_multiplier, invert_fog,
                       render_fog, to_grayscale, transmission_from_depth)
from defog.rng import Rng


def const_field(a, beta, depth, hw=(4, 4)):
    return FogField(A=a, beta=np.full(hw, float(beta)), depth=np.full(hw, float(depth)))


def random_scene(seed, hw=(16, 16), t_floor=0.05):
    """Seeded (J, field) pair whose transmission stays above t_floor."""
    rng = Rng(seed)
    clear = rng.uniform((hw[0], hw[1], 3), 0.02, 0.98)
    depth = rng.uniform(hw, 0.0, 2.0)
    beta_cap = -np.log(t_floor) / 2.0  # beta*d <= -ln(t_floor)
    beta = rng.uniform(hw, 0.0, beta_cap)
    a = rng.uniform((3,), 0.6, 1.0)
    return clear, FogField(A=a, beta=beta, depth=depth)


class TestTransmission:
    def test_no_attenuation(self):
        assert np.all(transmission_from_depth(const_field(0.9, 0.0, 5.0)) == 1.0)

    def test_zero_depth(self):
        assert np.all(transmission_from_depth(const_field(0.9, 2.0, 0.0)) == 1.0)

    def test_hand_value(self):
        t = transmission_from_depth(const_field(0.9, 0.5, 2.0))
        assert np.allclose(t, np.exp(-1.0), atol=1e-12)

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError, match="beta"):
            FogField(A=0.9, beta=np.full((2, 2), -0.1), depth=np.ones((2, 2)))
        with pytest.raises(ValueError, match="depth"):
            FogField(A=0.9, beta=np.ones((2, 2)), depth=np.full((2, 2), -1.0))

    def test_clamp_at_t_min(self):
        t = transmission_from_depth(const_field(0.9, 10.0, 10.0))
        assert np.all(t == 1e-3)


class TestRenderInvert:
    def test_fog_free_identity(self):
        rng = Rng(1)
        j = rng.uniform((4, 4, 3))
        assert np.allclose(render_fog(j, const_field(0.8, 0.0, 1.0)), j, atol=1e-12)

    def test_opaque_limit_is_airlight(self):
        j = np.zeros((4, 4, 3))
        out = render_fog(j, const_field(0.7, 50.0, 50.0))
        assert np.abs(out - 0.7).max() < 1e-2  # t = t_min leaves a sliver of J

    def test_hand_value(self):
        # J=0.8, t=0.5, A=1.0 -> I = 0.4 + 0.5 = 0.9
        fld = const_field(1.0, np.log(2.0), 1.0)
        out = render_fog(np.full((4, 4), 0.8), fld)
        assert np.allclose(out, 0.9, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            render_fog(np.zeros((3, 3, 3)), const_field(0.9, 0.5, 1.0, hw=(4, 4)))

    def test_airlight_only_scene_maps_to_A(self):
        fld = const_field(0.75, 0.4, 1.5)
        fog = np.full((4, 4), 0.75)
        assert np.allclose(invert_fog(fog, fld), 0.75, atol=1e-12)

    def test_round_trip_100_seeds(self):
        worst = 0.0
        for seed in range(100):
            clear, fld = random_scene(seed)
            rec = invert_fog(render_fog(clear, fld), fld)
            worst = max(worst, float(np.abs(rec - clear).max()))
        assert worst < 1e-6

    def test_monotone_in_transmission(self):
        # fixed J < A: I moves from A toward J as t rises
        j, a = 0.2, 0.9
        outs = []
        for t in np.linspace(0.05, 1.0, 10):
            fld = const_field(a, -np.log(t), 1.0, hw=(2, 2))
            outs.append(render_fog(np.full((2, 2), j), fld)[0, 0])
        diffs = np.diff(outs)
        assert np.all(diffs <= 1e-12)
        assert outs[0] > j and outs[-1] == pytest.approx(j)


class TestFeatureMultiplier:
    def test_identity_in_clear_air(self):
        rng = Rng(2)
        fog = rng.uniform((4, 4), 0.2, 1.0)
        m = feature_multiplier(fog, const_field(0.9, 0.0, 1.0))
        assert isinstance(m, MultiplierMap)
        assert np.allclose(m.values, 1.0, atol=1e-12)

    def test_hand_value(self):
        fld = const_field(1.0, np.log(2.0), 1.0, hw=(2, 2))  # t = 0.5
        m = feature_multiplier(np.full((2, 2), 0.9), fld)
        assert np.allclose(m.values, 0.4 / 0.45, atol=1e-12)
        assert np.allclose(0.9 * m.values, 0.8, atol=1e-12)

    def test_matches_inversion_100_seeds(self):
        worst = 0.0
        for seed in range(100):
            clear, fld = random_scene(seed + 1000)
            fog = render_fog(clear, fld)
            keep = fog > 1e-3
            m = feature_multiplier(fog, fld)
            rec = invert_fog(fog, fld)
            worst = max(worst, float(np.abs((fog * m.values)[keep] - rec[keep]).max()))
        assert worst < 1e-9

    def test_positive_on_rendered_scenes(self):
        clear, fld = random_scene(7)
        fog = render_fog(clear, fld)
        m = feature_multiplier(fog, fld)
        assert np.all(m.values > 0)

    def test_flooring_reported(self):
        fld = const_field(0.9, 0.5, 1.0, hw=(2, 2))
        fog = np.array([[0.0, 0.5], [0.0005, 0.9]])
        m = feature_multiplier(fog, fld)
        assert m.floored == 2
        assert np.all(np.isfinite(m.values))


class TestGrayscale:
    def test_weights_sum_to_one(self):
        assert to_grayscale(np.ones((2, 2, 3)))[0, 0] == pytest.approx(1.0)

    def test_red_projection(self):
        img = np.zeros((2, 2, 3))
        img[..., 0] = 1.0
        assert to_grayscale(img)[0, 0] == pytest.approx(0.299)

    def test_matches_scalar_formula(self):
        rng = Rng(3)
        img = rng.uniform((5, 4, 3))
        y = to_grayscale(img)
        for i in range(5):
            for j in range(4):
                ref = 0.299 * img[i, j, 0] + 0.587 * img[i, j, 1] + 0.114 * img[i, j, 2]
                assert y[i, j] == pytest.approx(ref, abs=1e-15)

    def test_wrong_channel_count_rejected(self):
        with pytest.raises(ValueError, match="H x W x 3"):
            to_grayscale(np.zeros((4, 4)))

    def test_commutes_with_achromatic_fog(self):
        rng = Rng(4)
        clear = rng.uniform((8, 8, 3))
        fld = FogField(A=0.85, beta=rng.uniform((8, 8), 0.1, 1.0),
                       depth=rng.uniform((8, 8), 0.0, 2.0))
        lhs = to_grayscale(render_fog(clear, fld))
        rhs = render_fog(to_grayscale(clear), fld)
        assert np.abs(lhs - rhs).max() < 1e-12
