"""Generator/feedback/discriminator contracts and checkpoint round trips."""

import numpy as np
import pytest

from defog.nets import (EPS_M, Discriminator, FeedbackEncoder, GeneratorNet,
                        feedback_forward, load_checkpoint, save_checkpoint,
                        to_grayscale_nchw)
from defog.rng import Rng
from defog.tensor import Tensor, grad_check


class TestGrayGenerator:
    def test_output_shapes(self):
        net = GeneratorNet(1, seed=1)
        x = Tensor(Rng(0).uniform((2, 1, 32, 32)))
        img, m = net.forward(x)
        assert img.shape == (2, 1, 32, 32)
        assert m.shape == (2, 64, 4, 4)  # bottleneck feature shape

    def test_multiplier_near_identity_at_init(self):
        net = GeneratorNet(1, seed=2)
        _, m = net.forward(Tensor(Rng(1).uniform((2, 1, 32, 32))))
        assert 0.9 <= float(np.median(m.data)) <= 1.1

    def test_multiplier_positive(self):
        net = GeneratorNet(1, seed=3)
        _, m = net.forward(Tensor(Rng(2).normal((1, 1, 16, 16))))
        assert m.data.min() >= EPS_M

    def test_image_in_range(self):
        net = GeneratorNet(1, seed=4)
        img, _ = net.forward(Tensor(Rng(3).uniform((1, 1, 16, 16))))
        assert img.data.min() >= 0.0 and img.data.max() <= 1.0

    def test_wrong_channels_rejected(self):
        net = GeneratorNet(1, seed=5)
        with pytest.raises(ValueError, match="1-channel"):
            net.forward(Tensor(np.zeros((1, 3, 16, 16))))

    def test_input_gradient_finite_difference(self):
        net = GeneratorNet(1, seed=6)
        x = Rng(4).uniform((1, 1, 8, 8))

        def f(t):
            img, _ = net.forward(t)
            return (img * img).sum()
        assert grad_check(f, x) < 1e-4


class TestRgbGenerator:
    def test_multi_task_shapes(self):
        net = GeneratorNet(3, seed=7, uncertainty_head=True)
        img, m, theta = net.forward(Tensor(Rng(5).uniform((2, 3, 32, 32))))
        assert img.shape == (2, 3, 32, 32)
        assert theta.shape == (2, 1, 32, 32)
        gray = GeneratorNet(1, seed=8)
        _, m_y = gray.forward(Tensor(Rng(6).uniform((2, 1, 32, 32))))
        assert m.shape == m_y.shape  # elementwise comparable multipliers

    def test_theta_nonnegative(self):
        net = GeneratorNet(3, seed=9, uncertainty_head=True)
        for seed in range(5):
            _, _, theta = net.forward(Tensor(Rng(seed).normal((1, 3, 16, 16))))
            assert theta.data.min() >= 0.0

    def test_both_heads_feed_encoder_gradient(self):
        net = GeneratorNet(3, seed=10, uncertainty_head=True)
        img, _, theta = net.forward(Tensor(Rng(7).uniform((1, 3, 16, 16))))
        (img.sum() + theta.sum()).backward()
        for name in ("enc1.w", "enc2.w", "enc3.w"):
            g = net.params()[name].grad
            assert g is not None and np.abs(g).max() > 0

    def test_deterministic_construction(self):
        a = GeneratorNet(3, seed=11, uncertainty_head=True).state()
        b = GeneratorNet(3, seed=11, uncertainty_head=True).state()
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestFeedback:
    def test_forced_unit_multiplier_matches_plain_forward(self):
        rgb = GeneratorNet(3, seed=12, uncertainty_head=True)
        fb = FeedbackEncoder(seed=13)
        fb.force_unit = True
        x = Tensor(Rng(8).uniform((1, 3, 16, 16)))
        img0, _, theta0 = rgb.forward(x)
        img1, theta1, m_fb = feedback_forward(rgb, fb, x, theta0)
        assert np.all(m_fb.data == 1.0)
        assert np.array_equal(img0.data, img1.data)
        assert np.array_equal(theta0.data, theta1.data)

    def test_sensitive_to_theta(self):
        rgb = GeneratorNet(3, seed=14, uncertainty_head=True)
        fb = FeedbackEncoder(seed=15)
        x = Tensor(Rng(9).uniform((1, 3, 16, 16)))
        m_a = fb.forward(x, Tensor(np.zeros((1, 1, 16, 16))))
        m_b = fb.forward(x, Tensor(np.ones((1, 1, 16, 16))))
        assert not np.array_equal(m_a.data, m_b.data)

    def test_weights_shared_across_iterations(self):
        rgb = GeneratorNet(3, seed=16, uncertainty_head=True)
        fb = FeedbackEncoder(seed=17)
        x = Tensor(Rng(10).uniform((1, 3, 16, 16)))
        _, _, theta = rgb.forward(x)
        ids_before = {k: id(v) for k, v in fb.params().items()}
        img1, theta1, _ = feedback_forward(rgb, fb, x, theta)
        img2, theta2, _ = feedback_forward(rgb, fb, x, theta1)
        assert {k: id(v) for k, v in fb.params().items()} == ids_before

    def test_multiplier_positive(self):
        fb = FeedbackEncoder(seed=18)
        x = Tensor(Rng(11).uniform((1, 3, 16, 16)))
        m = fb.forward(x, Tensor(Rng(12).uniform((1, 1, 16, 16))))
        assert m.data.min() >= EPS_M

    def test_spatial_mismatch_rejected(self):
        fb = FeedbackEncoder(seed=19)
        with pytest.raises(ValueError, match="spatially"):
            fb.forward(Tensor(np.zeros((1, 3, 16, 16))), Tensor(np.zeros((1, 1, 8, 8))))


class TestDiscriminator:
    def test_patch_map_shape(self):
        d = Discriminator(seed=20)
        out = d.forward(Tensor(Rng(13).uniform((2, 1, 64, 64))))
        assert out.shape == (2, 1, 4, 4)

    def test_multichannel_rejected(self):
        d = Discriminator(seed=21)
        with pytest.raises(ValueError, match="1-channel"):
            d.forward(Tensor(np.zeros((1, 3, 64, 64))))

    def test_deterministic(self):
        x = Rng(14).uniform((1, 1, 32, 32))
        a = Discriminator(seed=22).forward(Tensor(x)).data
        b = Discriminator(seed=22).forward(Tensor(x)).data
        assert np.array_equal(a, b)

    def test_gradient_reaches_input(self):
        d = Discriminator(seed=23)
        x = Rng(15).uniform((1, 1, 16, 16))

        def f(t):
            out = d.forward(t)
            return ((out - 1.0) * (out - 1.0)).mean()
        assert grad_check(f, x) < 1e-4


class TestGrayscaleNchw:
    def test_matches_numpy_luma(self):
        from defog.fog import to_grayscale
        img = Rng(16).uniform((2, 3, 8, 8))
        got = to_grayscale_nchw(Tensor(img)).data
        for n in range(2):
            ref = to_grayscale(img[n].transpose(1, 2, 0))
            assert np.abs(got[n, 0] - ref).max() < 1e-12


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = GeneratorNet(3, seed=24, uncertainty_head=True)
        path = tmp_path / "net.dfck"
        meta = {"stage": "rgb", "seed": 24, "config": {"size": 64}}
        save_checkpoint(path, net.state(), meta)
        params, back_meta = load_checkpoint(path)
        assert back_meta["stage"] == "rgb" and back_meta["config"]["size"] == 64
        assert back_meta["format_version"] == 1
        for k, v in net.state().items():
            assert np.array_equal(params[k], v)

    def test_load_into_net(self, tmp_path):
        a = GeneratorNet(1, seed=25)
        path = tmp_path / "g.dfck"
        save_checkpoint(path, a.state(), {"stage": "gray"})
        b = GeneratorNet(1, seed=99)
        b.load_state(load_checkpoint(path)[0])
        x = Tensor(Rng(17).uniform((1, 1, 16, 16)))
        assert np.array_equal(a.forward(x)[0].data, b.forward(x)[0].data)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.dfck"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_shape_mismatch_rejected(self, tmp_path):
        net = GeneratorNet(1, seed=26)
        state = net.state()
        state["enc1.w"] = state["enc1.w"][:, :, :2, :2]
        p = tmp_path / "bad.dfck"
        save_checkpoint(p, state, {})
        with pytest.raises(ValueError, match="shape"):
            GeneratorNet(1, seed=27).load_state(load_checkpoint(p)[0])
