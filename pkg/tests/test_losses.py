"""Objective functions: hand values, oracles, gradient and masking audits."""

import math

import numpy as np
import pytest

from defog.losses import (EPS_THETA, LossWeights, TELEMETRY_PARTS, TelemetryWriter,
                          adversarial_losses, mse_loss, multiplier_consistency,
                          read_telemetry, total_loss, uncertainty_loss)
from defog.nets import Discriminator
from defog.rng import Rng
from defog.tensor import Tensor, grad_check


class ConstDisc:
    """Stub discriminator emitting a fixed logit map."""

    def __init__(self, fake_value, real_value):
        self.fake_value = fake_value
        self.real_value = real_value
        self.calls = 0

    def forward(self, y):
        # first call sees the attached fake, second the detached fake, third the real
        self.calls += 1
        value = self.fake_value if self.calls <= 2 else self.real_value
        return Tensor(np.full((1, 1, 2, 2), value))


class TestMultiplierConsistency:
    def test_identical_is_zero(self):
        m = Rng(0).uniform((1, 4, 2, 2), 0.5, 1.5)
        assert multiplier_consistency(Tensor(m), m).item() == 0.0

    def test_hand_l2(self):
        assert multiplier_consistency(Tensor(np.array([3.0, 4.0])),
                                      np.zeros(2)).item() == pytest.approx(5.0)

    def test_gradient_only_into_m_i(self):
        rng = Rng(1)
        m_y = rng.uniform((6,), 0.5, 1.5)
        m_i0 = rng.uniform((6,), 0.5, 1.5)
        assert grad_check(lambda t: multiplier_consistency(t, m_y), m_i0) < 1e-4
        m_y_t = Tensor(m_y, requires_grad=True)
        m_i_t = Tensor(m_i0, requires_grad=True)
        multiplier_consistency(m_i_t, m_y_t).backward()
        assert m_i_t.grad is not None
        assert m_y_t.grad is None  # stop-gradient audit

    def test_symmetry_and_triangle(self):
        rng = Rng(2)
        a, b, c = (rng.uniform((8,)) for _ in range(3))
        d_ab = multiplier_consistency(Tensor(a), b).item()
        d_ba = multiplier_consistency(Tensor(b), a).item()
        assert d_ab == pytest.approx(d_ba, abs=1e-12)
        d_ac = multiplier_consistency(Tensor(a), c).item()
        d_cb = multiplier_consistency(Tensor(c), b).item()
        assert d_ab <= d_ac + d_cb + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="multiplier_consistency"):
            multiplier_consistency(Tensor(np.zeros(3)), np.zeros(4))


def theta_loss_scalar(r, theta, eps=0.0):
    return r / (theta + eps) + math.log(theta + 1.0)


def grid_search_theta(r, hi=40.0):
    """Two-pass 1e-6-resolution grid minimizer of the per-pixel objective."""
    coarse = np.arange(1e-3, hi, 1e-3)
    vals = r / coarse + np.log1p(coarse)
    center = coarse[int(np.argmin(vals))]
    fine = np.arange(max(center - 2e-3, 1e-6), center + 2e-3, 1e-6)
    vals = r / fine + np.log1p(fine)
    return float(fine[int(np.argmin(vals))])


class TestUncertaintyLoss:
    def test_perfect_prediction_zero_scale(self):
        pred = Rng(3).uniform((1, 3, 4, 4))
        theta = np.zeros((1, 1, 4, 4))
        loss = uncertainty_loss(Tensor(pred), pred, Tensor(theta))
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        pred = Tensor(np.full((1, 1, 1, 1), 2.0))
        target = np.zeros((1, 1, 1, 1))
        theta = Tensor(np.ones((1, 1, 1, 1)))
        loss = uncertainty_loss(pred, target, theta, eps_theta=0.0)
        assert loss.item() == pytest.approx(2.0 + math.log(2.0), abs=1e-12)

    @pytest.mark.parametrize("r", [0.01, 0.1, 1.0, 5.0])
    def test_grid_optimum_matches_stationarity_root(self, r):
        theta_star = grid_search_theta(r)
        root = (r + math.sqrt(r * r + 4.0 * r)) / 2.0  # theta^2 = r(theta+1)
        assert abs(theta_star - root) <= 1e-6

    def test_negative_theta_rejected(self):
        with pytest.raises(ValueError, match="negative theta"):
            uncertainty_loss(Tensor(np.zeros((1, 1, 2, 2))), np.zeros((1, 1, 2, 2)),
                             Tensor(np.full((1, 1, 2, 2), -0.1)))

    def test_nonnegative_and_finite(self):
        rng = Rng(4)
        for _ in range(10):
            pred = Tensor(rng.uniform((1, 3, 4, 4)))
            target = rng.uniform((1, 3, 4, 4))
            theta = Tensor(np.abs(rng.normal((1, 1, 4, 4))))
            v = uncertainty_loss(pred, target, theta).item()
            assert np.isfinite(v) and v >= 0.0

    def test_monotone_in_residual(self):
        theta = Tensor(np.full((1, 1, 2, 2), 0.7))
        prev = -1.0
        for r in (0.0, 0.1, 0.5, 1.0):
            pred = Tensor(np.full((1, 1, 2, 2), r))
            v = uncertainty_loss(pred, np.zeros((1, 1, 2, 2)), theta).item()
            assert v > prev
            prev = v

    def test_gradients(self):
        rng = Rng(5)
        target = rng.uniform((1, 3, 4, 4))
        theta0 = rng.uniform((1, 1, 4, 4), 0.1, 1.0)
        pred0 = rng.uniform((1, 3, 4, 4))
        assert grad_check(lambda t: uncertainty_loss(t, target, Tensor(theta0)), pred0) < 1e-4
        assert grad_check(lambda t: uncertainty_loss(Tensor(pred0), target, t.abs()),
                          theta0) < 1e-4


class TestMse:
    def test_identical(self):
        a = Rng(6).uniform((3, 5))
        assert mse_loss(Tensor(a), a).item() == 0.0

    def test_constant_offset(self):
        a = Rng(7).uniform((4, 4))
        assert mse_loss(Tensor(a + 0.1), a).item() == pytest.approx(0.01, abs=1e-12)

    def test_matches_loop_oracle(self):
        rng = Rng(8)
        a = rng.uniform((5, 3))
        b = rng.uniform((5, 3))
        acc = 0.0
        for x, y in zip(a.ravel(), b.ravel()):
            acc += (x - y) ** 2
        assert mse_loss(Tensor(a), b).item() == pytest.approx(acc / a.size, abs=1e-12)

    def test_gradient(self):
        rng = Rng(9)
        b = rng.uniform((3, 3))
        assert grad_check(lambda t: mse_loss(t, b), rng.uniform((3, 3))) < 1e-4


class TestAdversarial:
    def test_perfect_discriminator_zero_loss(self):
        d = ConstDisc(fake_value=0.0, real_value=1.0)
        fake = Tensor(np.zeros((1, 1, 16, 16)))
        real = Tensor(np.ones((1, 1, 16, 16)))
        _, disc_loss = adversarial_losses(d, fake, real)
        assert disc_loss.item() == 0.0

    def test_fully_fooled_generator_zero_loss(self):
        d = ConstDisc(fake_value=1.0, real_value=1.0)
        gen_loss, _ = adversarial_losses(d, Tensor(np.zeros((1, 1, 16, 16))),
                                         Tensor(np.ones((1, 1, 16, 16))))
        assert gen_loss.item() == 0.0

    def test_stop_gradient_audit(self):
        d = Discriminator(seed=30)
        fake = Tensor(Rng(10).uniform((1, 1, 16, 16)), requires_grad=True)
        real = Tensor(Rng(11).uniform((1, 1, 16, 16)))
        gen_loss, disc_loss = adversarial_losses(d, fake, real)
        disc_loss.backward()
        assert fake.grad is None  # fake is detached inside the disc term
        gen_loss.backward()
        assert fake.grad is not None and np.abs(fake.grad).max() > 0

    def test_generator_gradient_finite_difference(self):
        d = Discriminator(seed=31)
        x = Rng(12).uniform((1, 1, 16, 16))

        def f(t):
            gen_loss, _ = adversarial_losses(d, t, Tensor(np.ones((1, 1, 16, 16))))
            return gen_loss
        assert grad_check(f, x) < 1e-4

    def test_channel_mismatch(self):
        d = Discriminator(seed=32)
        with pytest.raises(ValueError, match="grayscale"):
            adversarial_losses(d, Tensor(np.zeros((1, 3, 16, 16))),
                               Tensor(np.zeros((1, 1, 16, 16))))


class TestTotalLoss:
    def test_all_zero(self):
        assert total_loss({}, LossWeights()).item() == 0.0

    def test_published_weights(self):
        parts = {k: 1.0 for k in ("multiplier", "structure", "uncertainty", "mse", "adversarial")}
        assert total_loss(parts, LossWeights()).item() == pytest.approx(3.105, abs=1e-12)

    def test_real_batch_masking(self):
        w = LossWeights()
        parts = {"multiplier": 0.3, "structure": 0.2, "adversarial": 0.1}
        expect = 1.0 * 0.3 + 0.1 * 0.2 + 0.005 * 0.1
        assert total_loss(parts, w).item() == pytest.approx(expect, abs=1e-15)

    def test_linear_in_each_part(self):
        w = LossWeights()
        base = total_loss({"structure": 1.0}, w).item()
        assert total_loss({"structure": 2.0}, w).item() == pytest.approx(2 * base)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="negative weight"):
            LossWeights(adversarial=-0.1)

    def test_unknown_part_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            total_loss({"bogus": 1.0}, LossWeights())

    def test_default_weight_values(self):
        w = LossWeights()
        assert (w.multiplier, w.uncertainty, w.structure, w.adversarial) == (1.0, 1.0, 0.1, 0.005)


class TestTelemetry:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "loss.tsv"
        w = LossWeights()
        with TelemetryWriter(path, w) as tw:
            t0 = tw.log(0, {"mse": 0.5, "adv_gen": 2.0, "adv_disc": 1.0})
            tw.log(1, {"mse": 0.25})
        cols, rows = read_telemetry(path)
        assert rows.shape == (2, len(cols))
        assert cols[0] == "step"
        raw_mse = rows[0][cols.index("raw_mse")]
        assert raw_mse == 0.5
        # total excludes the discriminator part
        assert t0 == pytest.approx(0.5 + 0.005 * 2.0)
        assert rows[0][cols.index("total")] == pytest.approx(t0)

    def test_line_count_matches_steps(self, tmp_path):
        path = tmp_path / "loss.tsv"
        with TelemetryWriter(path, LossWeights()) as tw:
            for i in range(7):
                tw.log(i, {"mse": float(i)})
        lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
        assert len(lines) == 7
