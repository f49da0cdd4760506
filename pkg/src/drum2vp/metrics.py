"""Objective proxies for the three conversion requirements.

These are diagnostics, not replacements for listening tests: onset-based
rhythm F-measure, a nearest-centroid timbre-consistency score, and a
descriptive noisiness/voicing report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d

from .audio import AudioBuffer, stft_magnitude

ONSET_WINDOW = 1024
ONSET_HOP = 256
MIN_ONSET_GAP_SECONDS = 0.05
DEFAULT_MATCH_TOLERANCE = 0.05


@dataclass(frozen=True)
class OnsetList:
    times: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if any(t < 0 for t in times):
            raise ValueError("onset times must be >= 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("onset times must be strictly increasing")
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return len(self.times)


def detect_onsets(buf: AudioBuffer) -> OnsetList:
    """Spectral-flux onset detector.

    Half-wave-rectified frame-to-frame magnitude increase, peak-picked
    against an adaptive median threshold with a 50 ms minimum inter-onset
    gap. Silence yields an empty list.
    """
    if len(buf) == 0:
        raise ValueError("empty buffer")
    win, hop = ONSET_WINDOW, ONSET_HOP
    # Zero-pad the start so an attack at t=0 still produces a flux rise
    # (reflect padding would mirror the attack into negative time).
    x = np.pad(buf.samples.astype(np.float64), (win, 0))
    n_frames = (len(x) - win) // hop + 1
    if n_frames < 2:
        return OnsetList(times=())
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(win)[None, :]
    mags = np.log1p(10.0 * np.abs(np.fft.rfft(frames, axis=1)))
    # Max-filter the reference frame across frequency so decaying partials
    # drifting between bins do not register as energy rises.
    widened = maximum_filter1d(mags, size=3, axis=1)
    flux = np.maximum(mags[1:] - widened[:-1], 0.0).sum(axis=1)
    if flux.max() <= 0:
        return OnsetList(times=())
    flux = flux / flux.max()

    hop_seconds = hop / buf.sample_rate
    half = max(1, int(round(0.25 / hop_seconds)))
    threshold = np.empty_like(flux)
    for i in range(len(flux)):
        lo, hi = max(0, i - half), min(len(flux), i + half + 1)
        threshold[i] = np.median(flux[lo:hi])
    threshold = threshold + 0.07

    min_gap = max(1, int(round(MIN_ONSET_GAP_SECONDS / hop_seconds)))
    peaks = []
    for i in range(len(flux)):
        prev = flux[i - 1] if i > 0 else 0.0
        nxt = flux[i + 1] if i + 1 < len(flux) else 0.0
        if flux[i] <= threshold[i] or flux[i] < prev or flux[i] < nxt:
            continue
        if peaks and i - peaks[-1] < min_gap:
            if flux[i] > flux[peaks[-1]]:
                peaks[-1] = i
            continue
        peaks.append(i)
    # flux[i] compares windows starting at (i-? ) relative to the original
    # signal; with the win-sample prepad, the rise maps to window-center time
    # (i+1)*hop - win/2.
    times = []
    center_shift = win / (2 * buf.sample_rate)
    for i in peaks:
        t = max(0.0, (i + 1) * hop_seconds - center_shift)
        if not times or t > times[-1]:
            times.append(t)
    return OnsetList(times=tuple(times))


def rhythmic_fidelity(ref: OnsetList, est: OnsetList,
                      tolerance: float = DEFAULT_MATCH_TOLERANCE) -> float:
    """Onset F-measure with greedy one-to-one matching within +/- tolerance."""
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    if len(ref) == 0 and len(est) == 0:
        return 1.0
    if len(ref) == 0 or len(est) == 0:
        return 0.0
    matches = 0
    j = 0
    for r in ref.times:
        while j < len(est.times) and est.times[j] < r - tolerance:
            j += 1
        if j < len(est.times) and abs(est.times[j] - r) <= tolerance:
            matches += 1
            j += 1
    precision = matches / len(est)
    recall = matches / len(ref)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _embed_clip(buf: AudioBuffer) -> np.ndarray:
    """Gain-invariant spectral embedding: peak-normalize, then mean
    log-magnitude spectrum with its mean removed."""
    samples = buf.samples.astype(np.float64)
    peak = np.max(np.abs(samples))
    if peak > 0:
        samples = samples / peak
    window = min(ONSET_WINDOW, 1 << (max(len(samples), 32).bit_length() - 1))
    window = max(32, window)
    if len(samples) < window:
        samples = np.pad(samples, (0, window - len(samples)))
    mags = stft_magnitude(samples, window, window // 4)
    vec = np.log(mags + 1e-8).mean(axis=0)
    return vec - vec.mean()


def timbral_consistency(clips: list[tuple[str, AudioBuffer]]) -> float:
    """Leave-one-out nearest-centroid label accuracy over spectral embeddings.

    Clips are per-onset excerpts of converted audio labeled by the source
    drum instrument. 1.0 means every clip sits closest to its own
    instrument's centroid (by cosine similarity).
    """
    labels = sorted({label for label, _ in clips})
    if len(labels) < 2:
        raise ValueError("need at least 2 distinct labels")
    by_label: dict[str, list[np.ndarray]] = {label: [] for label in labels}
    embedded = [(label, _embed_clip(buf)) for label, buf in clips]
    for label, vec in embedded:
        by_label[label].append(vec)
    for label, vecs in by_label.items():
        if len(vecs) < 2:
            raise ValueError(f"label {label!r} has fewer than 2 clips")

    sums = {label: np.sum(vecs, axis=0) for label, vecs in by_label.items()}
    counts = {label: len(vecs) for label, vecs in by_label.items()}

    def cosine(a: np.ndarray, b: np.ndarray) -> float:
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            return 0.0
        return float(np.dot(a, b) / (na * nb))

    correct = 0
    for label, vec in embedded:
        best_label, best_sim = None, -np.inf
        for other in labels:
            if other == label:
                centroid = (sums[other] - vec) / (counts[other] - 1)
            else:
                centroid = sums[other] / counts[other]
            sim = cosine(vec, centroid)
            if sim > best_sim:
                best_label, best_sim = other, sim
        if best_label == label:
            correct += 1
    return correct / len(embedded)


@dataclass(frozen=True)
class TextureReport:
    """Descriptive statistics only; naturalness stays a listening-test
    judgment."""

    aperiodicity_ratio: float | None
    spectral_flatness: float | None
    voiced_fraction: float | None

    @property
    def defined(self) -> bool:
        return self.aperiodicity_ratio is not None


def vp_texture_report(buf: AudioBuffer) -> TextureReport:
    """Noisiness/voicing diagnostics; silence yields an all-undefined record."""
    if len(buf) == 0:
        raise ValueError("empty buffer")
    if np.max(np.abs(buf.samples)) == 0:
        return TextureReport(None, None, None)

    window = 1024 if len(buf) >= 1024 else 32
    samples = buf.samples.astype(np.float64)
    if len(samples) < window:
        samples = np.pad(samples, (0, window - len(samples)))
    mags = stft_magnitude(samples, window, window // 4)
    power = np.square(mags) + 1e-12
    flatness_per_frame = np.exp(np.mean(np.log(power), axis=1)) / np.mean(power, axis=1)
    active = mags.max(axis=1) > 1e-6 * mags.max()
    flatness = float(np.mean(flatness_per_frame[active])) if active.any() else None

    # Frame-wise normalized autocorrelation peak over plausible voice pitch
    # lags (60-500 Hz); high peak = periodic = voiced.
    sr = buf.sample_rate
    lag_min = max(1, int(sr / 500))
    lag_max = min(window - 1, int(sr / 60))
    hop = window // 2
    n_frames = max(1, (len(samples) - window) // hop + 1)
    periodicity = []
    for i in range(n_frames):
        frame = samples[i * hop:i * hop + window]
        energy = np.dot(frame, frame)
        if energy < 1e-10:
            continue
        corr = np.correlate(frame, frame, mode="full")[window - 1:]
        corr = corr / energy
        periodicity.append(float(np.max(corr[lag_min:lag_max + 1])))
    if not periodicity:
        return TextureReport(None, flatness, None)
    periodicity = np.array(periodicity)
    voiced_fraction = float(np.mean(periodicity > 0.5))
    aperiodicity = float(np.mean(1.0 - np.clip(periodicity, 0.0, 1.0)))
    return TextureReport(aperiodicity, flatness, voiced_fraction)
