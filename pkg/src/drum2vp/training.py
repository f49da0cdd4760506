"""Two-stage training: VAE objective first, then frozen-encoder adversarial
refinement of the decoder."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .audio import AudioBuffer
from .losses import (
    LossWeights,
    feature_matching,
    hinge_adversarial,
    kl_gaussian,
    multiscale_spectral_loss,
    vq_loss,
)
from .model import (
    CHECKPOINT_VERSION,
    DiscriminatorEnsemble,
    ModelConfig,
    RaveModel,
)
from .preprocess import AugmentSpec, augment

TRAIN_STATE_VERSION = 1


class TrainingError(Exception):
    pass


class TrainingDiverged(TrainingError):
    """Raised when a loss or weight becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    total_steps: int = 2000
    batch_size: int = 8
    gen_lr: float = 1e-3
    gen_betas: tuple[float, float] = (0.5, 0.9)
    disc_lr: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0  # 0 = only on completion
    checkpoint_dir: str | None = None
    loss_log: str | None = None
    grad_clip: float = 10.0
    disc_channels: int = 32
    augment_spec: AugmentSpec | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    spectral_windows: tuple[int, ...] = (1024, 512, 256, 128, 64)

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.gen_lr <= 0 or self.disc_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")


@dataclass
class TrainState:
    model: RaveModel
    gen_opt: torch.optim.Optimizer
    step: int = 0
    stage: int = 1
    discriminator: DiscriminatorEnsemble | None = None
    disc_opt: torch.optim.Optimizer | None = None
    loss_rows: list[dict] = field(default_factory=list)
    codebook_usage: np.ndarray | None = None

    def smoothed_loss(self, key: str = "reconstruction", window: int = 100,
                      at_step: int | None = None) -> float:
        rows = [r for r in self.loss_rows
                if at_step is None or r["step"] <= at_step]
        tail = rows[-window:]
        if not tail:
            raise ValueError("no loss rows recorded")
        return float(np.mean([r[key] for r in tail]))

    def codebook_perplexity(self) -> float:
        if self.codebook_usage is None or self.codebook_usage.sum() == 0:
            raise ValueError("no codebook usage recorded")
        p = self.codebook_usage / self.codebook_usage.sum()
        p = p[p > 0]
        return float(np.exp(-(p * np.log(p)).sum()))


def _chunk_matrix(chunks: list[AudioBuffer]) -> np.ndarray:
    lengths = {len(c) for c in chunks}
    if len(lengths) != 1:
        raise TrainingError(f"chunks must share one length, got {sorted(lengths)}")
    return np.stack([c.samples for c in chunks])


def _assemble_batch(matrix: np.ndarray, sample_rate: int, cfg: TrainConfig,
                    step: int) -> torch.Tensor:
    """Deterministic batch with per-slot augmentation seeds."""
    rng = np.random.default_rng((cfg.seed, step))
    idx = rng.integers(0, matrix.shape[0], size=cfg.batch_size)
    rows = []
    for slot, i in enumerate(idx):
        samples = matrix[i]
        if cfg.augment_spec is not None:
            buf = AudioBuffer(samples=samples, sample_rate=sample_rate)
            aug_seed = int(np.random.SeedSequence(
                entropy=cfg.seed, spawn_key=(step, slot)).generate_state(1)[0])
            samples = augment(buf, cfg.augment_spec, seed=aug_seed).samples
        rows.append(samples)
    return torch.from_numpy(np.stack(rows)).unsqueeze(1)


def _check_finite(value: torch.Tensor, step: int, what: str):
    if not torch.isfinite(value).all():
        raise TrainingDiverged(f"{what} became non-finite at step {step}")


def _reconstruct(model: RaveModel, x: torch.Tensor, commitment: float):
    """Forward pass shared by both stages.

    Returns (x_hat, aux_loss, reconstruction-extras) where aux_loss is the
    KL term (unweighted) in gaussian mode or the VQ loss in vq mode.
    """
    mean, logvar = model.encoder(x)
    if model.cfg.latent_mode == "gaussian":
        eps = torch.randn_like(mean)
        z = mean + torch.exp(0.5 * logvar) * eps
        aux = kl_gaussian(mean.transpose(1, 2), logvar.transpose(1, 2))
        extras = None
    else:
        b, h, f = mean.shape
        flat = mean.transpose(1, 2).reshape(b * f, h)
        indices, quantized, quantized_st = model.codebook.quantize_flat(flat)
        z = quantized_st.view(b, f, h).transpose(1, 2)
        # Codebook entries learn via EMA, so only the commitment term carries
        # gradient; the loss value still follows the two-term definition.
        aux = vq_loss(flat, quantized, commitment)
        extras = (flat.detach(), indices)
    x_hat = model.decoder(z)
    return x_hat, aux, extras


def train_stage1(chunks: list[AudioBuffer], cfg: TrainConfig,
                 model_cfg: ModelConfig) -> TrainState:
    """Joint encoder+decoder training on the VAE (or VQ-VAE) objective."""
    if not chunks:
        raise TrainingError("empty corpus")
    if cfg.stage != 1:
        raise ValueError("train_stage1 requires cfg.stage == 1")
    torch.manual_seed(cfg.seed)
    model = RaveModel(model_cfg)
    gen_opt = torch.optim.Adam(model.parameters(), lr=cfg.gen_lr, betas=cfg.gen_betas)
    state = TrainState(model=model, gen_opt=gen_opt, stage=1)
    if model_cfg.latent_mode == "vq":
        state.codebook_usage = np.zeros(model_cfg.codebook_size)
    _run_stage1_steps(state, chunks, cfg, cfg.total_steps)
    return state


def _run_stage1_steps(state: TrainState, chunks, cfg: TrainConfig, n_steps: int):
    matrix = _chunk_matrix(chunks)
    sample_rate = chunks[0].sample_rate
    model = state.model
    model.train()
    target = state.step + n_steps
    while state.step < target:
        step = state.step
        x = _assemble_batch(matrix, sample_rate, cfg, step)
        x_hat, aux, extras = _reconstruct(model, x, cfg.weights.vq_commitment)
        recon = multiscale_spectral_loss(x.squeeze(1), x_hat.squeeze(1),
                                         cfg.spectral_windows)
        if model.cfg.latent_mode == "gaussian":
            total = cfg.weights.spectral * recon + cfg.weights.kl_beta * aux
        else:
            total = cfg.weights.spectral * recon + aux
        _check_finite(total, step, "stage-1 loss")
        state.gen_opt.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        state.gen_opt.step()
        if extras is not None:
            flat, indices = extras
            model.codebook.ema_update(flat, indices)
            counts = np.bincount(indices.numpy(), minlength=model.codebook.size)
            state.codebook_usage += counts
        state.loss_rows.append({
            "step": step, "total": float(total.item()),
            "reconstruction": float(recon.item()), "aux": float(aux.item()),
        })
        state.step += 1
        _maybe_checkpoint(state, cfg)
    _write_loss_log(state, cfg)


def train_stage2(state: TrainState, chunks: list[AudioBuffer],
                 cfg: TrainConfig) -> TrainState:
    """Adversarial refinement of the decoder with the encoder frozen."""
    if state is None or state.step == 0 and not state.loss_rows:
        raise TrainingError("stage 2 requires a stage-1 state")
    if cfg.stage != 2:
        raise ValueError("train_stage2 requires cfg.stage == 2")
    if not chunks:
        raise TrainingError("empty corpus")
    torch.manual_seed(cfg.seed + 1)
    model = state.model
    model.encoder.requires_grad_(False)
    if state.discriminator is None:
        state.discriminator = DiscriminatorEnsemble(channels=cfg.disc_channels)
        state.disc_opt = torch.optim.Adam(state.discriminator.parameters(),
                                          lr=cfg.disc_lr, betas=cfg.gen_betas)
        gen_params = list(model.decoder.parameters())
        state.gen_opt = torch.optim.Adam(gen_params, lr=cfg.gen_lr, betas=cfg.gen_betas)
    state.stage = 2

    matrix = _chunk_matrix(chunks)
    sample_rate = chunks[0].sample_rate
    disc = state.discriminator
    model.train()
    disc.train()
    target = state.step + cfg.total_steps
    while state.step < target:
        step = state.step
        x = _assemble_batch(matrix, sample_rate, cfg, step)

        with torch.no_grad():
            mean, logvar = model.encoder(x)
            if model.cfg.latent_mode == "gaussian":
                z = mean + torch.exp(0.5 * logvar) * torch.randn_like(mean)
            else:
                b, h, f = mean.shape
                flat = mean.transpose(1, 2).reshape(b * f, h)
                indices, quantized, _ = model.codebook.quantize_flat(flat)
                z = quantized.view(b, f, h).transpose(1, 2)

        # Discriminator step.
        x_hat = model.decoder(z)
        real_out = disc(x)
        fake_out = disc(x_hat.detach())
        d_loss = hinge_adversarial([s for s, _ in real_out],
                                   [s for s, _ in fake_out], "discriminator")
        _check_finite(d_loss, step, "discriminator loss")
        state.disc_opt.zero_grad()
        d_loss.backward()
        torch.nn.utils.clip_grad_norm_(disc.parameters(), cfg.grad_clip)
        state.disc_opt.step()

        # Generator (decoder) step.
        x_hat = model.decoder(z)
        fake_out = disc(x_hat)
        real_out = disc(x)
        adv = hinge_adversarial(None, [s for s, _ in fake_out], "generator")
        fm = feature_matching([f for _, f in real_out], [f for _, f in fake_out])
        recon = multiscale_spectral_loss(x.squeeze(1), x_hat.squeeze(1),
                                         cfg.spectral_windows)
        g_loss = (cfg.weights.adversarial * adv
                  + cfg.weights.feature_matching * fm
                  + cfg.weights.spectral * recon)
        _check_finite(g_loss, step, "generator loss")
        state.gen_opt.zero_grad()
        g_loss.backward()
        torch.nn.utils.clip_grad_norm_(model.decoder.parameters(), cfg.grad_clip)
        state.gen_opt.step()

        state.loss_rows.append({
            "step": step, "total": float(g_loss.item()),
            "reconstruction": float(recon.item()),
            "adversarial": float(adv.item()),
            "feature_matching": float(fm.item()),
            "discriminator": float(d_loss.item()),
        })
        state.step += 1
        _maybe_checkpoint(state, cfg)
    _write_loss_log(state, cfg)
    return state


def _maybe_checkpoint(state: TrainState, cfg: TrainConfig):
    if cfg.checkpoint_every and cfg.checkpoint_dir \
            and state.step % cfg.checkpoint_every == 0:
        for p in state.model.parameters():
            _check_finite(p, state.step, "model weight")
        path = Path(cfg.checkpoint_dir) / f"step{state.step:07d}.pt"
        save_checkpoint(state, path)


def _write_loss_log(state: TrainState, cfg: TrainConfig):
    if not cfg.loss_log or not state.loss_rows:
        return
    keys = sorted({k for row in state.loss_rows for k in row})
    keys.remove("step")
    keys = ["step"] + keys
    with open(cfg.loss_log, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, restval="")
        writer.writeheader()
        writer.writerows(state.loss_rows)


def save_checkpoint(state: TrainState, path):
    """Atomic checkpoint of weights, optimizer moments, step, and RNG state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "train_state_version": TRAIN_STATE_VERSION,
        "model_config": asdict(state.model.cfg),
        "model_state": state.model.state_dict(),
        "gen_opt_state": state.gen_opt.state_dict(),
        "step": state.step,
        "stage": state.stage,
        "loss_rows": state.loss_rows,
        "codebook_usage": state.codebook_usage,
        "torch_rng": torch.get_rng_state(),
    }
    if state.discriminator is not None:
        payload["disc_channels"] = state.discriminator.discriminators[0].convs[0].out_channels
        payload["disc_state"] = state.discriminator.state_dict()
        payload["disc_opt_state"] = state.disc_opt.state_dict()
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise TrainingError(f"corrupt checkpoint {path}: {exc}") from exc
    if payload.get("version") != CHECKPOINT_VERSION:
        raise TrainingError(
            f"checkpoint version {payload.get('version')} != {CHECKPOINT_VERSION}")
    cfg_dict = dict(payload["model_config"])
    cfg_dict["downsample_ratios"] = tuple(cfg_dict["downsample_ratios"])
    model = RaveModel(ModelConfig(**cfg_dict))
    model.load_state_dict(payload["model_state"])
    gen_opt = torch.optim.Adam(model.parameters())
    gen_opt.load_state_dict(payload["gen_opt_state"])
    state = TrainState(model=model, gen_opt=gen_opt, step=payload["step"],
                       stage=payload["stage"], loss_rows=payload["loss_rows"],
                       codebook_usage=payload["codebook_usage"])
    if "disc_state" in payload:
        state.discriminator = DiscriminatorEnsemble(channels=payload["disc_channels"])
        state.discriminator.load_state_dict(payload["disc_state"])
        state.disc_opt = torch.optim.Adam(state.discriminator.parameters())
        state.disc_opt.load_state_dict(payload["disc_opt_state"])
        model.encoder.requires_grad_(False)
        state.gen_opt = torch.optim.Adam(model.decoder.parameters())
        state.gen_opt.load_state_dict(payload["gen_opt_state"])
    torch.set_rng_state(payload["torch_rng"])
    return state


def resume_stage1(state: TrainState, chunks, cfg: TrainConfig,
                  extra_steps: int) -> TrainState:
    """Continue stage-1 training from a loaded state."""
    _run_stage1_steps(state, chunks, cfg, extra_steps)
    return state
