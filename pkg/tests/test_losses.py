import math

import numpy as np
import pytest
import torch

from drum2vp.losses import (
    LossWeights,
    feature_matching,
    hinge_adversarial,
    kl_gaussian,
    multiscale_spectral_loss,
    vq_loss,
)

WINDOWS = (256, 128, 64)


def central_difference_grads(fn, x: torch.Tensor, step=1e-4) -> torch.Tensor:
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        hi = fn(x).item()
        flat[i] = orig - step
        lo = fn(x).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def assert_grads_match(fn, x: torch.Tensor, rel=1e-3):
    x = x.clone().double().requires_grad_(True)
    fn(x).backward()
    analytic = x.grad.clone()
    numeric = central_difference_grads(fn, x.detach().clone())
    denom = numeric.abs().clamp_min(1e-4)
    rel_err = (analytic - numeric).abs() / denom
    assert rel_err.max().item() < rel, rel_err.max().item()


class TestMultiscaleSpectral:
    def test_identity_zero(self):
        x = torch.randn(1024)
        assert multiscale_spectral_loss(x, x, WINDOWS).item() == 0.0

    def test_sign_invariance(self):
        x = torch.randn(1024)
        assert multiscale_spectral_loss(x, -x, WINDOWS).item() == pytest.approx(0.0, abs=1e-5)

    def test_monotone_along_interpolation(self):
        t = torch.arange(2048) / 44100
        x = torch.sin(2 * math.pi * 1000 * t)
        silence = torch.zeros_like(x)
        losses = []
        for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
            x_hat = alpha * x + (1 - alpha) * silence
            losses.append(multiscale_spectral_loss(x, x_hat, WINDOWS).item())
        assert losses[-1] == pytest.approx(0.0, abs=1e-6)
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert losses[0] > 0

    def test_symmetry(self):
        x, y = torch.randn(512), torch.randn(512)
        assert multiscale_spectral_loss(x, y, WINDOWS).item() == pytest.approx(
            multiscale_spectral_loss(y, x, WINDOWS).item(), rel=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            multiscale_spectral_loss(torch.randn(512), torch.randn(256), WINDOWS)

    def test_gradient_finite_difference(self):
        torch.manual_seed(0)
        x = torch.randn(192).double()

        def fn(x_hat):
            return multiscale_spectral_loss(x, x_hat, window_sizes=(64,))

        assert_grads_match(fn, torch.randn(192) * 0.5)


class TestKlGaussian:
    def test_posterior_equals_prior(self):
        assert kl_gaussian(torch.zeros(4, 3), torch.zeros(4, 3)).item() == 0.0

    def test_unit_mean_closed_form(self):
        val = kl_gaussian(torch.ones(1, 1), torch.zeros(1, 1)).item()
        assert val == pytest.approx(0.5, abs=1e-7)

    def test_variance_e_closed_form(self):
        val = kl_gaussian(torch.zeros(1, 1), torch.ones(1, 1)).item()
        assert val == pytest.approx(0.5 * (math.e - 2), abs=1e-6)

    def test_minimum_at_standard_normal(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            mean = torch.tensor(rng.normal(0, 0.5, (3, 2)))
            logvar = torch.tensor(rng.normal(0, 0.5, (3, 2)))
            assert kl_gaussian(mean, logvar).item() >= 0.0

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            kl_gaussian(torch.tensor([[float("nan")]]), torch.zeros(1, 1))

    def test_gradient_mean(self):
        logvar = torch.randn(3, 2).double()
        assert_grads_match(lambda m: kl_gaussian(m, logvar), torch.randn(3, 2))

    def test_gradient_logvar(self):
        mean = torch.randn(3, 2).double()
        assert_grads_match(lambda lv: kl_gaussian(mean, lv), torch.randn(3, 2))


class TestVqLoss:
    def test_zero_when_equal(self):
        z = torch.randn(4, 3)
        assert vq_loss(z, z.clone()).item() == 0.0

    def test_hand_computed(self):
        val = vq_loss(torch.ones(1, 1), torch.zeros(1, 1), commitment=0.25).item()
        assert val == pytest.approx(1.25)

    def test_linearity_in_commitment(self):
        pre = torch.randn(5, 3)
        quant = torch.randn(5, 3)
        base = vq_loss(pre, quant, commitment=0.0).item()
        extra = ((pre - quant) ** 2).mean().item()
        for c in (0.25, 0.5, 1.0):
            assert vq_loss(pre, quant, commitment=c).item() == pytest.approx(
                base + c * extra, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            vq_loss(torch.randn(2, 3), torch.randn(3, 2))

    def test_gradient_commitment_term(self):
        # The stop-gradient marker means the analytic gradient w.r.t. pre
        # comes from the commitment term alone; finite differences must be
        # taken on that term, not on the full (value-level) expression.
        quant = torch.randn(4, 2).double()
        pre = torch.randn(4, 2).double().requires_grad_(True)
        vq_loss(pre, quant, 0.25).backward()
        analytic = pre.grad.clone()
        commitment_only = lambda p: 0.25 * torch.nn.functional.mse_loss(p, quant)
        numeric = central_difference_grads(commitment_only, pre.detach().clone())
        rel_err = (analytic - numeric).abs() / numeric.abs().clamp_min(1e-4)
        assert rel_err.max().item() < 1e-3


class TestHinge:
    def test_saturated_discriminator_zero(self):
        real = [torch.tensor([1.5, 2.0])]
        fake = [torch.tensor([-1.2, -3.0])]
        assert hinge_adversarial(real, fake, "discriminator").item() == 0.0

    def test_zero_fake_generator_zero(self):
        assert hinge_adversarial(None, [torch.zeros(4)], "generator").item() == 0.0

    def test_zero_scores_discriminator_two(self):
        val = hinge_adversarial([torch.zeros(1)], [torch.zeros(1)], "discriminator")
        assert val.item() == pytest.approx(2.0)

    def test_empty_lists_rejected(self):
        with pytest.raises(ValueError):
            hinge_adversarial([], [], "discriminator")
        with pytest.raises(ValueError):
            hinge_adversarial(None, [], "generator")

    def test_gradient_generator(self):
        assert_grads_match(
            lambda fake: hinge_adversarial(None, [fake], "generator"),
            torch.randn(6))

    def test_gradient_discriminator_fake(self):
        real = torch.randn(6).double()
        # keep scores away from the hinge point where the gradient kinks
        fake = torch.randn(6) * 0.3
        assert_grads_match(
            lambda f: hinge_adversarial([real], [f], "discriminator"), fake)


class TestFeatureMatching:
    def test_identity_zero(self):
        feats = [[torch.randn(2, 3)], [torch.randn(4)]]
        assert feature_matching(feats, [[f.clone() for f in d] for d in feats]).item() == 0.0

    def test_hand_computed(self):
        real = [[torch.tensor([1.0, 1.0])]]
        fake = [[torch.tensor([0.0, 0.0])]]
        assert feature_matching(real, fake).item() == pytest.approx(1.0)

    def test_l1_homogeneity(self):
        real = [[torch.randn(3, 4)], [torch.randn(5)]]
        fake = [[torch.randn(3, 4)], [torch.randn(5)]]
        base = feature_matching(real, fake).item()
        scaled = feature_matching([[3 * f for f in d] for d in real],
                                  [[3 * f for f in d] for d in fake]).item()
        assert scaled == pytest.approx(3 * base, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            feature_matching([[torch.randn(2)]], [[torch.randn(3)]])

    def test_gradient(self):
        real = torch.randn(8).double()
        assert_grads_match(lambda fake: feature_matching([[real]], [[fake]]),
                           torch.randn(8))


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.kl_beta, w.vq_commitment, w.adversarial,
                w.feature_matching, w.spectral) == (0.1, 0.25, 1.0, 10.0, 1.0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(kl_beta=-1)
