"""Training objectives: multi-resolution spectral reconstruction, Gaussian
KL, VQ codebook/commitment, hinge adversarial, and feature matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .audio import DEFAULT_STFT_WINDOWS, AudioBuffer

LOG_EPS = 1e-5


@dataclass(frozen=True)
class LossWeights:
    kl_beta: float = 0.1
    vq_commitment: float = 0.25
    adversarial: float = 1.0
    feature_matching: float = 10.0
    spectral: float = 1.0

    def __post_init__(self):
        for name in ("kl_beta", "vq_commitment", "adversarial",
                     "feature_matching", "spectral"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _as_batched_tensor(x) -> torch.Tensor:
    if isinstance(x, AudioBuffer):
        x = torch.from_numpy(np.asarray(x.samples, dtype=np.float32))
    if x.dim() == 1:
        x = x.unsqueeze(0)
    return x


def _stft_mag(x: torch.Tensor, window: int) -> torch.Tensor:
    win = torch.hann_window(window, dtype=x.dtype, device=x.device)
    spec = torch.stft(x, n_fft=window, hop_length=window // 4, win_length=window,
                      window=win, center=True, pad_mode="reflect",
                      return_complex=True)
    return spec.abs()


def multiscale_spectral_loss(x, x_hat, window_sizes=DEFAULT_STFT_WINDOWS) -> torch.Tensor:
    """Per scale: mean L1 on magnitudes plus mean L1 on log magnitudes,
    summed over scales. Accepts AudioBuffers or (B, T) / (T,) tensors."""
    x = _as_batched_tensor(x)
    x_hat = _as_batched_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    total = x.new_zeros(())
    for window in window_sizes:
        mag_x = _stft_mag(x, window)
        mag_y = _stft_mag(x_hat, window)
        total = total + (mag_x - mag_y).abs().mean()
        total = total + (torch.log(mag_x + LOG_EPS) - torch.log(mag_y + LOG_EPS)).abs().mean()
    return total


def kl_gaussian(mean: torch.Tensor, log_variance: torch.Tensor) -> torch.Tensor:
    """KL(q || N(0, I)), summed over latent dims, averaged over frames."""
    if not (torch.isfinite(mean).all() and torch.isfinite(log_variance).all()):
        raise ValueError("non-finite posterior parameters")
    per_frame = 0.5 * (mean.pow(2) + log_variance.exp() - 1.0 - log_variance)
    if per_frame.dim() == 1:
        return per_frame.sum()
    # sum over the latent axis (last), mean over everything else
    return per_frame.sum(dim=-1).mean()


def vq_loss(pre_quant: torch.Tensor, quantized: torch.Tensor,
            commitment: float = 0.25) -> torch.Tensor:
    """Codebook term + commitment term, both mean squared over elements."""
    if pre_quant.shape != quantized.shape:
        raise ValueError(f"shape mismatch: {pre_quant.shape} vs {quantized.shape}")
    codebook_term = F.mse_loss(quantized, pre_quant.detach())
    commitment_term = F.mse_loss(pre_quant, quantized.detach())
    return codebook_term + commitment * commitment_term


def hinge_adversarial(scores_real, scores_fake, side: str) -> torch.Tensor:
    """Hinge GAN loss averaged over the sub-discriminator ensemble.

    Discriminator side: mean(relu(1 - real)) + mean(relu(1 + fake)).
    Generator side: -mean(fake); scores_real is ignored and may be None.
    """
    if side not in ("generator", "discriminator"):
        raise ValueError(f"unknown side {side}")
    if not scores_fake:
        raise ValueError("empty score list")
    if side == "generator":
        terms = [-fake.mean() for fake in scores_fake]
        return torch.stack(terms).mean()
    if not scores_real:
        raise ValueError("empty score list")
    terms = [F.relu(1.0 - real).mean() + F.relu(1.0 + fake).mean()
             for real, fake in zip(scores_real, scores_fake)]
    return torch.stack(terms).mean()


def feature_matching(features_real, features_fake) -> torch.Tensor:
    """Mean over sub-discriminators and layers of per-layer mean L1 distance."""
    if len(features_real) != len(features_fake):
        raise ValueError("feature nesting mismatch")
    layer_losses = []
    for real_maps, fake_maps in zip(features_real, features_fake):
        if len(real_maps) != len(fake_maps):
            raise ValueError("feature nesting mismatch")
        for fr, ff in zip(real_maps, fake_maps):
            if fr.shape != ff.shape:
                raise ValueError(f"feature shape mismatch: {fr.shape} vs {ff.shape}")
            layer_losses.append((fr - ff).abs().mean())
    return torch.stack(layer_losses).mean()
