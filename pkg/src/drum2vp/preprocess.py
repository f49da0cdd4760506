"""Corpus preparation: silence-based segmentation, fixed-length chunking,
and deterministic augmentation (gain, muting, dynamic range compression).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, read_wav, write_wav

SILENCE_FRAME_SECONDS = 0.010  # analysis frame for silence detection


@dataclass(frozen=True)
class SegmentationConfig:
    silence_threshold_dbfs: float = -60.0
    min_silence_seconds: float = 1.0
    chunk_length: int = 65536

    def __post_init__(self):
        if self.min_silence_seconds <= 0:
            raise ValueError("min_silence_seconds must be > 0")
        if self.chunk_length <= 0:
            raise ValueError("chunk_length must be > 0")
        if self.silence_threshold_dbfs >= 0:
            raise ValueError("silence_threshold_dbfs must be < 0")


@dataclass(frozen=True)
class AugmentSpec:
    gain_range_db: tuple[float, float] = (-6.0, 3.0)
    mute_probability: float = 0.1
    mute_span_seconds: tuple[float, float] = (0.1, 0.5)
    compression: bool = True

    def __post_init__(self):
        lo, hi = self.gain_range_db
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"bad gain range {self.gain_range_db}")
        if not 0.0 <= self.mute_probability <= 1.0:
            raise ValueError("mute_probability must be in [0, 1]")


def _silent_frame_mask(buf: AudioBuffer, threshold_dbfs: float) -> np.ndarray:
    """Per-frame silence flags at 10 ms resolution, by frame peak level."""
    frame = max(1, int(round(SILENCE_FRAME_SECONDS * buf.sample_rate)))
    n = len(buf)
    n_frames = (n + frame - 1) // frame
    padded = np.pad(np.abs(buf.samples), (0, n_frames * frame - n))
    peaks = padded.reshape(n_frames, frame).max(axis=1)
    threshold = 10.0 ** (threshold_dbfs / 20.0)
    return peaks < threshold


def segment_by_silence(buf: AudioBuffer, cfg: SegmentationConfig) -> list[AudioBuffer]:
    """Split on silences of at least min_silence_seconds below the threshold.

    Shorter silent gaps do not separate; boundary silence is trimmed.
    All-silent input yields an empty list.
    """
    frame = max(1, int(round(SILENCE_FRAME_SECONDS * buf.sample_rate)))
    silent = _silent_frame_mask(buf, cfg.silence_threshold_dbfs)
    if silent.all():
        return []
    min_silent_frames = int(math.ceil(cfg.min_silence_seconds / SILENCE_FRAME_SECONDS))

    # Runs of consecutive silent frames long enough to act as separators.
    separators = []
    i = 0
    n_frames = len(silent)
    while i < n_frames:
        if silent[i]:
            j = i
            while j < n_frames and silent[j]:
                j += 1
            if j - i >= min_silent_frames:
                separators.append((i, j))
            i = j
        else:
            i += 1

    segments = []
    start = 0
    for sep_start, sep_end in separators:
        segments.append((start, sep_start))
        start = sep_end
    segments.append((start, n_frames))

    out = []
    for seg_start, seg_end in segments:
        # Trim residual boundary silence inside the region.
        while seg_start < seg_end and silent[seg_start]:
            seg_start += 1
        while seg_end > seg_start and silent[seg_end - 1]:
            seg_end -= 1
        if seg_end <= seg_start:
            continue
        lo = seg_start * frame
        hi = min(seg_end * frame, len(buf))
        out.append(AudioBuffer(samples=buf.samples[lo:hi], sample_rate=buf.sample_rate))
    return out


def make_chunks(segments: list[AudioBuffer], chunk_length: int) -> list[AudioBuffer]:
    """Split segments into consecutive chunks of exactly chunk_length samples.

    A final remainder is zero-padded when at least half full, dropped otherwise.
    """
    if chunk_length <= 0:
        raise ValueError("chunk_length must be > 0")
    chunks = []
    for seg in segments:
        n_full = len(seg) // chunk_length
        for i in range(n_full):
            chunks.append(AudioBuffer(
                samples=seg.samples[i * chunk_length:(i + 1) * chunk_length],
                sample_rate=seg.sample_rate))
        rem = len(seg) - n_full * chunk_length
        if rem * 2 >= chunk_length:
            tail = np.zeros(chunk_length, dtype=np.float32)
            tail[:rem] = seg.samples[n_full * chunk_length:]
            chunks.append(AudioBuffer(samples=tail, sample_rate=seg.sample_rate))
    return chunks


def _compress(samples: np.ndarray, sample_rate: int) -> np.ndarray:
    """Soft-knee 4:1 feed-forward compressor, threshold -20 dBFS.

    Level detection runs on 1 ms frames with 5 ms attack / 50 ms release
    smoothing; the per-frame gain is held across the frame. Fixed parameters
    keep augmentation deterministic.
    """
    threshold_db = -20.0
    ratio = 4.0
    knee_db = 10.0
    frame = max(1, int(round(0.001 * sample_rate)))
    n = len(samples)
    n_frames = (n + frame - 1) // frame
    padded = np.pad(np.abs(samples), (0, n_frames * frame - n))
    peaks = padded.reshape(n_frames, frame).max(axis=1)
    level_db = 20.0 * np.log10(np.maximum(peaks, 1e-8))

    a_att = math.exp(-1.0 / (0.005 / 0.001))
    a_rel = math.exp(-1.0 / (0.050 / 0.001))
    smoothed = np.empty(n_frames)
    state = level_db[0] if n_frames else 0.0
    for i in range(n_frames):
        a = a_att if level_db[i] > state else a_rel
        state = a * state + (1.0 - a) * level_db[i]
        smoothed[i] = state

    over = smoothed - threshold_db
    gain_db = np.where(
        over <= -knee_db / 2, 0.0,
        np.where(over >= knee_db / 2,
                 (1.0 / ratio - 1.0) * over,
                 (1.0 / ratio - 1.0) * (over + knee_db / 2) ** 2 / (2.0 * knee_db)))
    gain = (10.0 ** (gain_db / 20.0)).repeat(frame)[:n]
    return samples * gain


def augment(chunk: AudioBuffer, spec: AugmentSpec, seed: int) -> AudioBuffer:
    """Deterministic augmentation: gain, then muting, then compression.

    Output is clipped to [-1, 1].
    """
    rng = np.random.default_rng(seed)
    samples = chunk.samples.astype(np.float64)

    gain_db = rng.uniform(*spec.gain_range_db)
    samples = samples * 10.0 ** (gain_db / 20.0)

    if rng.random() < spec.mute_probability:
        span = rng.uniform(*spec.mute_span_seconds)
        span_samples = min(len(samples), max(1, int(round(span * chunk.sample_rate))))
        start = rng.integers(0, len(samples) - span_samples + 1)
        samples = samples.copy()
        samples[start:start + span_samples] = 0.0

    if spec.compression:
        samples = _compress(samples, chunk.sample_rate)

    return AudioBuffer(samples=np.clip(samples, -1.0, 1.0).astype(np.float32),
                       sample_rate=chunk.sample_rate)


def preprocess_corpus(manifest_path, out_dir, seg_cfg: SegmentationConfig | None = None,
                      target_rate: int | None = None) -> dict:
    """Run segmentation + chunking over a corpus manifest.

    The manifest is a JSON list of {"path": wav, "split": "train"|"valid"}.
    Writes WAV chunks plus an index JSON; returns the index.
    """
    from .audio import resample

    seg_cfg = seg_cfg or SegmentationConfig()
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = json.loads(manifest_path.read_text())
    index = []
    for file_id, entry in enumerate(entries):
        src = Path(entry["path"])
        if not src.is_absolute():
            src = manifest_path.parent / src
        buf = read_wav(src)
        if target_rate and buf.sample_rate != target_rate:
            buf = resample(buf, target_rate)
        segments = segment_by_silence(buf, seg_cfg)
        chunks = make_chunks(segments, seg_cfg.chunk_length)
        for chunk_idx, chunk in enumerate(chunks):
            name = f"{src.stem}_{file_id:03d}_{chunk_idx:04d}.wav"
            write_wav(out_dir / name, chunk)
            index.append({"file": name, "source": str(entry["path"]),
                          "split": entry.get("split", "train"),
                          "chunk_index": chunk_idx})
    (out_dir / "index.json").write_text(json.dumps(index, indent=2))
    return {"chunks": index, "out_dir": str(out_dir)}
