"""Deployed conversion: encode drum audio with the VP-trained model, decode
to VP-timbre audio.

Both the file path and the block path run the same cached-state streaming
engine, so offline and streaming outputs are identical by construction.
Gaussian models use the posterior mean (no sampling) and VQ models the
quantized codes, making conversion fully deterministic.
"""

from __future__ import annotations

import numpy as np
import torch

from .audio import AudioBuffer, peak_dbfs, resample
from .model import RaveModel, load_model_checkpoint


class Converter:
    """One causal streaming instance; independent instances can run
    concurrently. Latency is zero samples: every output block depends only
    on input blocks received so far."""

    def __init__(self, model: RaveModel):
        self.model = model
        self.model.eval()
        self.block_size = model.cfg.stride
        self.latency_samples = 0
        self.reset()

    @classmethod
    def from_checkpoint(cls, path) -> "Converter":
        return cls(load_model_checkpoint(path))

    def reset(self):
        self._enc_caches = None
        self._dec_state = None

    @torch.no_grad()
    def process_block(self, block: np.ndarray) -> np.ndarray:
        """One stride-sized input block in, one output block out."""
        if len(block) != self.block_size:
            raise ValueError(
                f"block of {len(block)} samples; expected stride {self.block_size}")
        x = torch.from_numpy(np.array(block, dtype=np.float32)).view(1, 1, -1)
        (mean, logvar), self._enc_caches = self.model.encoder.stream(
            x, self._enc_caches)
        if self.model.cfg.latent_mode == "vq":
            b, h, f = mean.shape
            flat = mean.transpose(1, 2).reshape(b * f, h)
            _, quantized, _ = self.model.codebook.quantize_flat(flat)
            z = quantized.view(b, f, h).transpose(1, 2)
        else:
            z = mean  # posterior mean, deterministic
        out, self._dec_state = self.model.decoder.stream(z, self._dec_state)
        return np.clip(out[0, 0].numpy(), -1.0, 1.0).astype(np.float32)


def convert_stream(blocks, model: RaveModel):
    """Map a sequence of stride-sized blocks to output blocks."""
    converter = Converter(model)
    for block in blocks:
        yield converter.process_block(block)


def convert_file(drums: AudioBuffer, model: RaveModel,
                 match_input_level: bool = True) -> AudioBuffer:
    """Convert a whole recording.

    Input is resampled to the model rate when needed and zero-padded to a
    multiple of the stride; output is trimmed back to the input length.
    When match_input_level is set, the output is rescaled so its peak dBFS
    equals the input's (an all-silent input therefore stays silent).
    """
    if len(drums) == 0:
        raise ValueError("empty input")
    if drums.sample_rate != model.cfg.sample_rate:
        drums = resample(drums, model.cfg.sample_rate)
    r = model.cfg.stride
    samples = drums.samples
    pad = (-len(samples)) % r
    if pad:
        samples = np.pad(samples, (0, pad))
    out = np.concatenate(list(convert_stream(
        (samples[i:i + r] for i in range(0, len(samples), r)), model)))
    out = out[:len(drums.samples)]
    if match_input_level:
        in_peak = float(np.max(np.abs(drums.samples)))
        out_peak = float(np.max(np.abs(out)))
        scale = in_peak / out_peak if out_peak > 0 else 0.0
        out = np.clip(out * scale, -1.0, 1.0).astype(np.float32)
    return AudioBuffer(samples=out, sample_rate=model.cfg.sample_rate)


def convert_file_from_checkpoint(drums: AudioBuffer, checkpoint_path,
                                 match_input_level: bool = True) -> AudioBuffer:
    return convert_file(drums, load_model_checkpoint(checkpoint_path),
                        match_input_level=match_input_level)
