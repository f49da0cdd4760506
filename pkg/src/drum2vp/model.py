"""Networks: causal encoder, Gaussian or vector-quantized latent bottleneck,
envelope-gated causal decoder, and the discriminator ensemble.

All convolutions are left-padded only, so a sample at time t never depends
on inputs after t. That makes block streaming with cached left context
bit-identical to offline processing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import CANONICAL_RATE, TOY_RATE, AudioBuffer

CHECKPOINT_VERSION = 1

MULTI_PERIODS = (2, 3, 5, 7, 11)
MULTI_SCALE_POOLINGS = (1, 2, 4)


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 16
    downsample_ratios: tuple[int, ...] = (4, 4, 4, 2)
    latent_mode: str = "gaussian"  # gaussian | vq
    codebook_size: int = 128
    base_channels: int = 32
    causal: bool = True
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        if self.latent_dim < 1 or self.codebook_size < 1:
            raise ValueError("latent_dim and codebook_size must be >= 1")
        if self.latent_mode not in ("gaussian", "vq"):
            raise ValueError(f"unknown latent_mode {self.latent_mode}")

    @property
    def stride(self) -> int:
        """Total downsampling ratio r: samples per latent frame."""
        return math.prod(self.downsample_ratios)

    @classmethod
    def toy(cls, latent_mode: str = "gaussian") -> "ModelConfig":
        """Small CPU-friendly preset: r=64 at 16 kHz."""
        return cls(latent_dim=8, downsample_ratios=(4, 4, 2, 2),
                   latent_mode=latent_mode, codebook_size=32,
                   base_channels=16, sample_rate=TOY_RATE)


@dataclass
class LatentCode:
    mode: str
    mean: torch.Tensor  # frames x H; pre-quantization latent in vq mode
    log_variance: torch.Tensor | None = None  # frames x H, gaussian only
    indices: torch.Tensor | None = None  # frames, vq only
    quantized: torch.Tensor | None = None  # frames x H, vq only

    @property
    def frames(self) -> int:
        return self.mean.shape[0]


class CausalConv1d(nn.Module):
    """Conv1d padded on the left only; output[t] sees inputs <= t.

    With stride s and kernel k (k >= s), the left context is k - s samples,
    so feeding input in blocks whose lengths are multiples of s while carrying
    the last k - s input samples reproduces offline processing exactly.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride=1):
        super().__init__()
        if kernel_size < stride:
            raise ValueError("kernel_size must be >= stride for causal streaming")
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size, stride=stride)
        self.context = kernel_size - stride
        self.stride = stride

    def forward(self, x):
        if self.context:
            x = F.pad(x, (self.context, 0))
        return self.conv(x)

    def stream(self, x, cache):
        """Process a block with cached left context; returns (y, new_cache)."""
        if cache is None:
            cache = x.new_zeros(x.shape[0], x.shape[1], self.context)
        if self.context:
            x = torch.cat([cache, x], dim=2)
            new_cache = x[:, :, -self.context:]
        else:
            new_cache = cache
        return self.conv(x), new_cache


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_channels
        layers = [CausalConv1d(1, c, kernel_size=7)]
        ch = c
        for i, ratio in enumerate(cfg.downsample_ratios):
            out_ch = min(c * 2 ** (i + 1), c * 8)
            layers.append(CausalConv1d(ch, out_ch, kernel_size=2 * ratio, stride=ratio))
            ch = out_ch
        self.layers = nn.ModuleList(layers)
        self.out_channels = ch
        head_dim = 2 * cfg.latent_dim if cfg.latent_mode == "gaussian" else cfg.latent_dim
        self.head = CausalConv1d(ch, head_dim, kernel_size=3)
        self.latent_dim = cfg.latent_dim
        self.latent_mode = cfg.latent_mode

    def forward(self, x):
        """x: (B, 1, T) -> (mean, logvar) or (latent, None), each (B, H, F)."""
        h = x
        for layer in self.layers:
            h = F.leaky_relu(layer(h), 0.2)
        out = self.head(h)
        if self.latent_mode == "gaussian":
            mean, logvar = out.chunk(2, dim=1)
            return mean, logvar
        return out, None

    def stream(self, x, caches):
        if caches is None:
            caches = [None] * (len(self.layers) + 1)
        h = x
        new_caches = []
        for layer, cache in zip(self.layers, caches[:-1]):
            h, nc = layer.stream(h, cache)
            new_caches.append(nc)
            h = F.leaky_relu(h, 0.2)
        out, nc = self.head.stream(h, caches[-1])
        new_caches.append(nc)
        if self.latent_mode == "gaussian":
            mean, logvar = out.chunk(2, dim=1)
            return (mean, logvar), new_caches
        return (out, None), new_caches


def causal_linear_upsample(frames: torch.Tensor, ratio: int,
                           prev: torch.Tensor | None = None):
    """Linear upsampling that only interpolates toward the past.

    Sample j of output frame i moves from frame value e[i-1] to e[i]; the
    value before the first frame defaults to the first frame itself, so no
    lookahead is ever needed. Returns (upsampled, last_frame_value).
    """
    b, c, f = frames.shape
    if prev is None:
        prev = frames[:, :, :1]
    starts = torch.cat([prev, frames[:, :, :-1]], dim=2)  # e[i-1]
    weights = (torch.arange(1, ratio + 1, dtype=frames.dtype,
                            device=frames.device) / ratio)
    out = starts.unsqueeze(3) + weights.view(1, 1, 1, ratio) \
        * (frames - starts).unsqueeze(3)
    return out.reshape(b, c, f * ratio), frames[:, :, -1:]


class Decoder(nn.Module):
    """Latent frames -> waveform body x envelope.

    Upsampling is zero-order hold followed by a causal conv per stage; the
    envelope is one softplus scalar per latent frame, linearly upsampled
    (causally) to the sample rate and multiplied into the tanh waveform body.
    """

    def __init__(self, cfg: ModelConfig, encoder_channels: int):
        super().__init__()
        self.cfg = cfg
        self.input_conv = CausalConv1d(cfg.latent_dim, encoder_channels, kernel_size=3)
        self.ratios = tuple(reversed(cfg.downsample_ratios))
        layers = []
        ch = encoder_channels
        for ratio in self.ratios:
            out_ch = max(ch // 2, cfg.base_channels)
            layers.append(CausalConv1d(ch, out_ch, kernel_size=2 * ratio + 1))
            ch = out_ch
        self.layers = nn.ModuleList(layers)
        self.wave_head = CausalConv1d(ch, 1, kernel_size=7)
        self.envelope_head = CausalConv1d(encoder_channels, 1, kernel_size=3)

    def _envelope_frames(self, h):
        return F.softplus(self.envelope_head(h))

    def forward(self, z):
        """z: (B, H, F) -> waveform (B, 1, F * r)."""
        h = F.leaky_relu(self.input_conv(z), 0.2)
        env_frames = self._envelope_frames(h)
        env, _ = causal_linear_upsample(env_frames, self.cfg.stride)
        w = h
        for ratio, layer in zip(self.ratios, self.layers):
            w = torch.repeat_interleave(w, ratio, dim=2)
            w = F.leaky_relu(layer(w), 0.2)
        body = torch.tanh(self.wave_head(w))
        return body * env

    def stream(self, z, state):
        if state is None:
            state = {"input": None, "env_head": None, "env_prev": None,
                     "layers": [None] * len(self.layers), "wave": None}
        h, state["input"] = self.input_conv.stream(z, state["input"])
        h = F.leaky_relu(h, 0.2)
        env_frames, state["env_head"] = self.envelope_head.stream(h, state["env_head"])
        env_frames = F.softplus(env_frames)
        env, state["env_prev"] = causal_linear_upsample(
            env_frames, self.cfg.stride, prev=state["env_prev"])
        w = h
        for i, (ratio, layer) in enumerate(zip(self.ratios, self.layers)):
            w = torch.repeat_interleave(w, ratio, dim=2)
            w, state["layers"][i] = layer.stream(w, state["layers"][i])
            w = F.leaky_relu(w, 0.2)
        body, state["wave"] = self.wave_head.stream(w, state["wave"])
        return torch.tanh(body) * env, state


class Codebook(nn.Module):
    """VQ codebook with exponential-moving-average updates."""

    def __init__(self, codebook_size: int, latent_dim: int, decay: float = 0.99,
                 epsilon: float = 1e-5, revive_threshold: float = 0.1):
        super().__init__()
        self.decay = decay
        self.epsilon = epsilon
        self.revive_threshold = revive_threshold
        embed = torch.randn(codebook_size, latent_dim) * 0.1
        self.register_buffer("embed", embed)
        self.register_buffer("cluster_size", torch.zeros(codebook_size))
        self.register_buffer("embed_avg", embed.clone())

    @property
    def size(self) -> int:
        return self.embed.shape[0]

    def lookup(self, z_flat: torch.Tensor) -> torch.Tensor:
        """Nearest entry by Euclidean distance; ties break to lowest index."""
        if self.size == 0:
            raise ValueError("empty codebook")
        dists = torch.cdist(z_flat, self.embed)
        return torch.argmin(dists, dim=1)

    def quantize_flat(self, z_flat: torch.Tensor):
        indices = self.lookup(z_flat)
        quantized = self.embed[indices]
        # Straight-through: gradients pass to the pre-quantization values.
        quantized_st = z_flat + (quantized - z_flat).detach()
        return indices, quantized, quantized_st

    @torch.no_grad()
    def ema_update(self, z_flat: torch.Tensor, indices: torch.Tensor):
        onehot = F.one_hot(indices, self.size).to(z_flat.dtype)
        counts = onehot.sum(dim=0)
        embed_sum = onehot.t() @ z_flat
        self.cluster_size.mul_(self.decay).add_(counts, alpha=1 - self.decay)
        self.embed_avg.mul_(self.decay).add_(embed_sum, alpha=1 - self.decay)
        n = self.cluster_size.sum()
        smoothed = ((self.cluster_size + self.epsilon)
                    / (n + self.size * self.epsilon) * n)
        self.embed.copy_(self.embed_avg / smoothed.unsqueeze(1))
        # Revive dead entries from batch vectors; without this one entry can
        # absorb the whole distribution since unused entries never move.
        dead = self.cluster_size < self.revive_threshold
        n_dead = int(dead.sum())
        if n_dead:
            pick = torch.randint(0, z_flat.shape[0], (n_dead,))
            self.embed[dead] = z_flat[pick]
            self.embed_avg[dead] = z_flat[pick]
            self.cluster_size[dead] = 1.0


class RaveModel(nn.Module):
    """Encoder + latent bottleneck + envelope-gated decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg, self.encoder.out_channels)
        self.codebook = Codebook(cfg.codebook_size, cfg.latent_dim) \
            if cfg.latent_mode == "vq" else None

    def encode(self, x: torch.Tensor) -> LatentCode:
        """x: (T,) or (B, 1, T) mono chunk with T divisible by the stride."""
        single = x.dim() == 1
        if single:
            x = x.view(1, 1, -1)
        if x.shape[-1] % self.cfg.stride != 0:
            raise ValueError(
                f"length {x.shape[-1]} not divisible by stride {self.cfg.stride}")
        mean, logvar = self.encoder(x)
        if self.cfg.latent_mode == "gaussian":
            if single:
                return LatentCode(mode="gaussian", mean=mean[0].t(),
                                  log_variance=logvar[0].t())
            return LatentCode(mode="gaussian", mean=mean, log_variance=logvar)
        if single:
            return LatentCode(mode="vq", mean=mean[0].t())
        return LatentCode(mode="vq", mean=mean)

    def quantize(self, code: LatentCode) -> LatentCode:
        if code.mode != "vq":
            raise ValueError("quantize requires vq mode")
        z = code.mean
        flat = z if z.dim() == 2 else z
        indices, _, quantized_st = self.codebook.quantize_flat(flat)
        return LatentCode(mode="vq", mean=z, indices=indices, quantized=quantized_st)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """z: (frames, H) or (B, H, F) -> waveform of frames * r samples."""
        single = z.dim() == 2
        if single:
            z = z.t().unsqueeze(0)
        out = self.decoder(z)
        return out[0, 0] if single else out


def encode(chunk: AudioBuffer, model: RaveModel) -> LatentCode:
    """Encode one audio chunk; returns per-frame posterior (or pre-quant) values."""
    x = torch.from_numpy(np.asarray(chunk.samples, dtype=np.float32))
    with torch.no_grad():
        return model.encode(x)


def reparameterize(code: LatentCode, seed: int) -> torch.Tensor:
    """z = mean + sigma * eps with a seeded standard-normal eps."""
    if code.mode != "gaussian":
        raise ValueError("reparameterize requires gaussian mode")
    gen = torch.Generator().manual_seed(seed)
    eps = torch.randn(code.mean.shape, generator=gen, dtype=code.mean.dtype)
    return code.mean + torch.exp(0.5 * code.log_variance) * eps


def decode(z: torch.Tensor, model: RaveModel) -> AudioBuffer:
    """Decode latent frames to an audio chunk at the model's sample rate."""
    with torch.no_grad():
        out = model.decode(z)
    samples = np.clip(out.cpu().numpy(), -1.0, 1.0).astype(np.float32)
    return AudioBuffer(samples=samples, sample_rate=model.cfg.sample_rate)


class PeriodDiscriminator(nn.Module):
    """Reshapes the waveform into (time/period, period) and convolves in 2-D."""

    def __init__(self, period: int, channels: int = 32):
        super().__init__()
        self.period = period
        chs = [1, channels, channels * 2, channels * 4, channels * 4]
        self.convs = nn.ModuleList([
            nn.Conv2d(chs[i], chs[i + 1], kernel_size=(5, 1), stride=(3, 1),
                      padding=(2, 0))
            for i in range(len(chs) - 1)
        ])
        self.final = nn.Conv2d(chs[-1], 1, kernel_size=(3, 1), padding=(1, 0))

    def forward(self, x):
        b, _, t = x.shape
        if t % self.period:
            x = F.pad(x, (0, self.period - t % self.period), mode="reflect")
            t = x.shape[-1]
        h = x.view(b, 1, t // self.period, self.period)
        features = []
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.1)
            features.append(h)
        score = self.final(h)
        features.append(score)
        return score.flatten(1), features


class ScaleDiscriminator(nn.Module):
    def __init__(self, pooling: int, channels: int = 32):
        super().__init__()
        self.pooling = pooling
        chs = [1, channels, channels * 2, channels * 4, channels * 4]
        self.convs = nn.ModuleList([
            nn.Conv1d(chs[0], chs[1], kernel_size=15, stride=1, padding=7),
            nn.Conv1d(chs[1], chs[2], kernel_size=41, stride=4, padding=20, groups=4),
            nn.Conv1d(chs[2], chs[3], kernel_size=41, stride=4, padding=20, groups=4),
            nn.Conv1d(chs[3], chs[4], kernel_size=5, stride=1, padding=2),
        ])
        self.final = nn.Conv1d(chs[-1], 1, kernel_size=3, padding=1)

    def forward(self, x):
        h = x
        if self.pooling > 1:
            h = F.avg_pool1d(h, kernel_size=self.pooling, stride=self.pooling)
        features = []
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.1)
            features.append(h)
        score = self.final(h)
        features.append(score)
        return score.flatten(1), features


class DiscriminatorEnsemble(nn.Module):
    """Multi-period (2, 3, 5, 7, 11) plus 3-scale discriminators."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.discriminators = nn.ModuleList(
            [PeriodDiscriminator(p, channels) for p in MULTI_PERIODS]
            + [ScaleDiscriminator(s, channels) for s in MULTI_SCALE_POOLINGS])

    def forward(self, x):
        """x: (B, 1, T) -> list of (scores, feature maps) per sub-discriminator."""
        min_len = 2 * max(MULTI_PERIODS)
        if x.shape[-1] < min_len:
            raise ValueError(f"chunk of {x.shape[-1]} samples too short "
                             f"for discrimination (need >= {min_len})")
        return [d(x) for d in self.discriminators]


def discriminate(chunk: AudioBuffer, ensemble: DiscriminatorEnsemble):
    x = torch.from_numpy(np.asarray(chunk.samples, dtype=np.float32)).view(1, 1, -1)
    with torch.no_grad():
        return ensemble(x)


def save_model_checkpoint(path, model: RaveModel, extra: dict | None = None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.cfg),
        "model_state": model.state_dict(),
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


class CheckpointError(Exception):
    pass


def load_model_checkpoint(path) -> RaveModel:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload.get('version')} != {CHECKPOINT_VERSION}")
    cfg_dict = dict(payload["model_config"])
    cfg_dict["downsample_ratios"] = tuple(cfg_dict["downsample_ratios"])
    model = RaveModel(ModelConfig(**cfg_dict))
    model.load_state_dict(payload["model_state"])
    return model
