import numpy as np
import pytest
import torch

from dsgan.losses import (
    DivergenceError,
    LossWeights,
    center_loss,
    gradient_penalty,
    interpolate_pairs,
    total_losses,
    wgan_terms,
)
from helpers import run_gradient_correctness


class TestWganTerms:
    def test_hand_arithmetic(self):
        critic_obj, gen_obj = wgan_terms([1.0, 1.0], [0.0, 0.0])
        assert critic_obj.item() == pytest.approx(1.0)
        assert gen_obj.item() == pytest.approx(0.0)

    def test_symmetry_zero(self):
        scores = [0.3, -0.7, 2.0]
        critic_obj, _ = wgan_terms(scores, scores)
        assert critic_obj.item() == pytest.approx(0.0)

    def test_scaling_linearity(self):
        real, fake = [1.0, 2.0], [0.5, -0.5]
        c1, g1 = wgan_terms(real, fake)
        c3, g3 = wgan_terms([3 * r for r in real], [3 * f for f in fake])
        assert c3.item() == pytest.approx(3 * c1.item())
        assert g3.item() == pytest.approx(3 * g1.item())

    def test_antisymmetry(self):
        real, fake = [1.0, 4.0], [0.0, -2.0]
        c_fwd, _ = wgan_terms(real, fake)
        c_rev, _ = wgan_terms(fake, real)
        assert c_rev.item() == pytest.approx(-c_fwd.item())

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            wgan_terms([], [1.0])


class TestInterpolatePairs:
    def setup_method(self):
        g = torch.Generator().manual_seed(0)
        self.x = torch.randn(3, 2, 4, 4, generator=g)
        self.g_fake = torch.randn(3, 2, 4, 4, generator=g)

    def test_endpoints(self):
        ones = torch.ones(3)
        assert torch.equal(interpolate_pairs(self.x, self.g_fake, ones), self.x)
        zeros = torch.zeros(3)
        assert torch.equal(interpolate_pairs(self.x, self.g_fake, zeros), self.g_fake)

    def test_midpoint_constant_fields(self):
        x = torch.full((1, 1, 2, 2), 2.0)
        g = torch.full((1, 1, 2, 2), 4.0)
        out = interpolate_pairs(x, g, torch.tensor([0.5]))
        assert torch.equal(out, torch.full((1, 1, 2, 2), 3.0))

    def test_per_sample_u(self):
        u = torch.tensor([0.0, 1.0, 0.5])
        out = interpolate_pairs(self.x, self.g_fake, u)
        assert torch.equal(out[0], self.g_fake[0])
        assert torch.equal(out[1], self.x[1])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            interpolate_pairs(self.x, self.g_fake[:2], torch.ones(3))

    def test_u_out_of_range(self):
        with pytest.raises(ValueError, match="u must"):
            interpolate_pairs(self.x, self.g_fake, torch.tensor([0.5, 1.5, 0.5]))


class TestGradientPenalty:
    def test_mean_critic_analytic_value(self):
        # critic = mean over the 4 entries of each sample: each partial is
        # 1/4, gradient norm 1/2, penalty (1/2 - 1)^2 = 0.25
        x_hat = torch.randn(3, 1, 2, 2, dtype=torch.float64)
        y = torch.zeros(3, 1, 1, 1, dtype=torch.float64)
        fn = lambda a, b: a.reshape(a.shape[0], -1).mean(dim=1)
        assert gradient_penalty(fn, x_hat, y).item() == pytest.approx(0.25, abs=1e-8)

    def test_unit_gradient_zero_penalty(self):
        # critic = first entry of each sample: gradient is one-hot, norm 1
        x_hat = torch.randn(2, 1, 2, 2, dtype=torch.float64)
        fn = lambda a, b: a.reshape(a.shape[0], -1)[:, 0]
        assert gradient_penalty(fn, x_hat, None).item() == pytest.approx(0.0, abs=1e-12)

    def test_constant_critic_penalty_one(self):
        x_hat = torch.randn(2, 1, 2, 2)
        fn = lambda a, b: (a * 0.0).reshape(a.shape[0], -1).sum(dim=1)
        assert gradient_penalty(fn, x_hat, None).item() == pytest.approx(1.0)

    def test_non_negative(self):
        g = torch.Generator().manual_seed(3)
        for _ in range(5):
            x_hat = torch.randn(2, 1, 3, 3, generator=g)
            w = torch.randn(9, generator=g)
            fn = lambda a, b: a.reshape(a.shape[0], -1) @ w
            assert gradient_penalty(fn, x_hat, None).item() >= 0.0

    def test_non_finite_gradient_raises(self):
        x_hat = torch.zeros(1, 1, 2, 2)
        fn = lambda a, b: (1.0 / a.reshape(a.shape[0], -1)).sum(dim=1)
        with pytest.raises(DivergenceError):
            gradient_penalty(fn, x_hat, None)


class TestCenterLoss:
    def test_identical_zero(self):
        p = torch.randn(2, 3, 4, 4)
        assert center_loss(p, p).item() == 0.0

    def test_constant_offset_counts_entries(self):
        m = 3 * 4 * 4
        a = torch.zeros(1, 3, 4, 4)
        b = torch.ones(1, 3, 4, 4)
        assert center_loss(a, b).item() == pytest.approx(m)

    def test_single_projection_counts_entries(self):
        a = torch.zeros(2, 4, 4)
        b = torch.ones(2, 4, 4)
        assert center_loss(a, b).item() == pytest.approx(32.0)

    def test_symmetric(self):
        g = torch.Generator().manual_seed(1)
        a = torch.randn(2, 1, 3, 3, generator=g)
        b = torch.randn(2, 1, 3, 3, generator=g)
        assert center_loss(a, b).item() == pytest.approx(center_loss(b, a).item())

    def test_batch_averaging(self):
        a = torch.zeros(4, 1, 2, 2)
        b = torch.ones(4, 1, 2, 2) * torch.tensor([1.0, 2.0, 3.0, 4.0]).view(4, 1, 1, 1)
        # per-sample squared distances: 4, 16, 36, 64 -> mean 30
        assert center_loss(a, b).item() == pytest.approx(30.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            center_loss(torch.zeros(1, 2, 2), torch.zeros(1, 2, 3))

    def test_non_negative(self):
        g = torch.Generator().manual_seed(2)
        a = torch.randn(3, 2, 2, 2, generator=g)
        b = torch.randn(3, 2, 2, 2, generator=g)
        assert center_loss(a, b).item() >= 0.0


class TestTotalLosses:
    def test_degenerate_weights(self):
        bd = total_losses(1.5, -0.5, 0.7, 2.0, LossWeights(lambda_gp=0.0, lambda_center=0.0))
        assert bd.total_critic == pytest.approx(-1.5)
        assert bd.total_generator == pytest.approx(-0.5)

    def test_hand_composition(self):
        bd = total_losses(0.0, 2.0, 0.0, 3.0, LossWeights(lambda_gp=10.0, lambda_center=10.0))
        assert bd.total_generator == pytest.approx(32.0)  # 2 + 10*3

    def test_doubling_lambda_center(self):
        b1 = total_losses(0.0, 1.0, 0.0, 3.0, LossWeights(lambda_center=5.0))
        b2 = total_losses(0.0, 1.0, 0.0, 3.0, LossWeights(lambda_center=10.0))
        assert (b2.total_generator - 1.0) == pytest.approx(2 * (b1.total_generator - 1.0))

    def test_critic_ignores_center(self):
        a = total_losses(1.0, 0.0, 0.5, 0.0, LossWeights())
        b = total_losses(1.0, 0.0, 0.5, 99.0, LossWeights())
        assert a.total_critic == b.total_critic

    def test_non_finite_named(self):
        with pytest.raises(DivergenceError, match="gradient_penalty"):
            total_losses(1.0, 1.0, float("nan"), 1.0, LossWeights())

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_gp=-1.0)
        with pytest.raises(ValueError):
            LossWeights(lambda_center=float("inf"))


class TestGradientCorrectness:
    def test_tiny_model_matches_finite_differences(self):
        gen_errors, critic_errors = run_gradient_correctness()
        for errors in (gen_errors, critic_errors):
            assert np.mean(errors < 1e-3) >= 0.95
            assert errors.max() < 1e-2
