"""Core audio representation: mono buffers, WAV I/O, resampling, STFT.

Everything downstream (preprocessing, training, metrics, pattern rendering)
works in terms of :class:`AudioBuffer`. Buffers are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

CANONICAL_RATE = 44100
TOY_RATE = 16000

#: Default multi-resolution STFT window sizes (samples).
DEFAULT_STFT_WINDOWS = (2048, 1024, 512, 256, 128)


class AudioError(Exception):
    """Raised on malformed audio files or invalid audio operations."""


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform plus its sample rate.

    Samples are float32 in [-1, 1]. The array is marked read-only so a
    buffer can be shared freely.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float32)
        if arr.ndim != 1:
            raise AudioError(f"expected mono 1-D samples, got shape {arr.shape}")
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(arr)):
            raise AudioError("samples contain non-finite values")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude spectrogram: frames x bins, all values >= 0."""

    magnitudes: np.ndarray
    window_size: int
    hop_size: int
    sample_rate: int

    @property
    def bins(self) -> int:
        return self.magnitudes.shape[1]

    @property
    def frames(self) -> int:
        return self.magnitudes.shape[0]

    def bin_frequency(self, bin_index: int) -> float:
        return bin_index * self.sample_rate / self.window_size


def read_wav(path) -> AudioBuffer:
    """Read a PCM16 or float32 WAV file as a mono buffer.

    Multichannel input is averaged to mono; the file's sample rate is
    preserved.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        rate, data = wavfile.read(str(path))
    except AudioError:
        raise
    except Exception as exc:  # scipy surfaces truncation in several ways
        raise AudioError(f"malformed WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    elif data.dtype == np.int32:
        samples = data.astype(np.float32) / 2147483648.0
    else:
        raise AudioError(f"unsupported WAV encoding {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioBuffer(samples=samples, sample_rate=int(rate))


def write_wav(path, buf: AudioBuffer, encoding: str = "float32") -> None:
    """Write a mono WAV file, PCM16 or IEEE float32."""
    path = Path(path)
    if encoding == "float32":
        wavfile.write(str(path), buf.sample_rate, buf.samples.astype(np.float32))
    elif encoding == "pcm16":
        scaled = np.round(buf.samples.astype(np.float64) * 32768.0)
        pcm = np.clip(scaled, -32768, 32767).astype(np.int16)
        wavfile.write(str(path), buf.sample_rate, pcm)
    else:
        raise AudioError(f"unknown encoding {encoding!r}")


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited resampling to target_rate."""
    if target_rate <= 0:
        raise AudioError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return buf
    ratio = Fraction(target_rate, buf.sample_rate)
    out = resample_poly(buf.samples.astype(np.float64), ratio.numerator, ratio.denominator)
    expected = round(len(buf) * target_rate / buf.sample_rate)
    if len(out) > expected:
        out = out[:expected]
    elif len(out) < expected:
        out = np.pad(out, (0, expected - len(out)))
    return AudioBuffer(samples=np.clip(out, -1.0, 1.0).astype(np.float32),
                       sample_rate=target_rate)


def peak_dbfs(buf: AudioBuffer) -> float:
    """Peak level in dBFS; -inf for all-zero input."""
    if len(buf) == 0:
        raise AudioError("peak_dbfs of empty buffer")
    peak = float(np.max(np.abs(buf.samples)))
    if peak == 0.0:
        return float("-inf")
    return 20.0 * math.log10(peak)


def rms_dbfs(buf: AudioBuffer) -> float:
    """RMS level in dBFS; -inf for all-zero input."""
    if len(buf) == 0:
        raise AudioError("rms_dbfs of empty buffer")
    rms = float(np.sqrt(np.mean(np.square(buf.samples.astype(np.float64)))))
    if rms == 0.0:
        return float("-inf")
    return 20.0 * math.log10(rms)


def stft_magnitude(samples: np.ndarray, window_size: int, hop_size: int) -> np.ndarray:
    """Hann-windowed magnitude STFT with reflect padding of window//2.

    Frame count is len(samples) // hop_size + 1, independent of content.
    """
    x = np.asarray(samples, dtype=np.float64)
    pad = window_size // 2
    x = np.pad(x, (pad, pad), mode="reflect")
    n_frames = (len(x) - window_size) // hop_size + 1
    window = np.hanning(window_size)
    idx = np.arange(window_size)[None, :] + hop_size * np.arange(n_frames)[:, None]
    frames = x[idx] * window[None, :]
    return np.abs(np.fft.rfft(frames, axis=1))


def multiscale_stft(buf: AudioBuffer, window_sizes=DEFAULT_STFT_WINDOWS) -> list[Spectrogram]:
    """One magnitude spectrogram per window size; hop = window / 4."""
    for w in window_sizes:
        if w < 32 or (w & (w - 1)) != 0:
            raise AudioError(f"window size {w} must be a power of two >= 32")
    smallest = min(window_sizes)
    if len(buf) < smallest:
        raise AudioError(
            f"buffer of {len(buf)} samples shorter than smallest window {smallest}")
    out = []
    for w in window_sizes:
        hop = w // 4
        mags = stft_magnitude(buf.samples, w, hop)
        out.append(Spectrogram(magnitudes=mags, window_size=w, hop_size=hop,
                               sample_rate=buf.sample_rate))
    return out
