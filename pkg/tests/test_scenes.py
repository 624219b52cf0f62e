"""Scene and attenuation-field generator properties."""

import numpy as np
import pytest

from defog.scenes import BetaConfig, SceneConfig, generate_beta_field, generate_scene


def lag1_autocorr(f):
    a = f - f.mean()
    denom = (a * a).sum()
    if denom == 0:
        return 1.0
    horiz = (a[:, 1:] * a[:, :-1]).sum()
    vert = (a[1:, :] * a[:-1, :]).sum()
    return (horiz + vert) / (2 * denom)


class TestScenes:
    def test_deterministic(self):
        a = generate_scene(42)
        b = generate_scene(42)
        assert np.array_equal(a.clear, b.clear)
        assert np.array_equal(a.depth, b.depth)

    def test_seeds_differ(self):
        assert not np.array_equal(generate_scene(1).clear, generate_scene(2).clear)

    def test_intensity_range(self):
        for seed in range(10):
            s = generate_scene(seed)
            assert s.clear.min() >= 0.0 and s.clear.max() <= 1.0

    def test_depth_layers_separated(self):
        cfg = SceneConfig()
        for seed in range(20):
            s = generate_scene(seed, cfg)
            levels = np.unique(s.depth)
            assert len(levels) >= 2
            # background at d_max, all objects at least 0.1*d_max closer
            assert levels[-1] == cfg.d_max
            assert cfg.d_max - levels[-2] >= 0.1 * cfg.d_max

    def test_shapes(self):
        cfg = SceneConfig(size=48)
        s = generate_scene(3, cfg)
        assert s.clear.shape == (48, 48, 3)
        assert s.depth.shape == (48, 48)


class TestBetaFields:
    def test_uniform_mode_constant(self):
        cfg = BetaConfig(lo=0.4, hi=0.4, mode="uniform")
        f = generate_beta_field(5, cfg, 16, 16)
        assert np.all(f == 0.4)

    def test_range_contract(self):
        cfg = BetaConfig(lo=0.2, hi=1.2)
        for seed in range(10):
            f = generate_beta_field(seed, cfg, 32, 32)
            assert f.min() >= 0.2 - 1e-12 and f.max() <= 1.2 + 1e-12

    def test_smoothness(self):
        for family in ("smooth", "turbulent"):
            cfg = BetaConfig(family=family)
            for seed in range(5):
                f = generate_beta_field(seed, cfg, 64, 64)
                assert lag1_autocorr(f) > 0.9

    def test_families_differ(self):
        a = generate_beta_field(7, BetaConfig(family="smooth"), 32, 32)
        b = generate_beta_field(7, BetaConfig(family="turbulent"), 32, 32)
        assert not np.array_equal(a, b)

    def test_bad_range_rejected(self):
        with pytest.raises(ValueError, match="range"):
            generate_beta_field(0, BetaConfig(lo=1.0, hi=0.5), 8, 8)

    def test_deterministic(self):
        cfg = BetaConfig()
        assert np.array_equal(generate_beta_field(9, cfg, 24, 24),
                              generate_beta_field(9, cfg, 24, 24))
