"""Evaluation stimuli: symbolic drum patterns rendered from a one-shot kit.

Three built-in patterns, each 4 measures of 4/4, rendered at 80/120/160 BPM
to produce the 9-file test set. Patterns keep simultaneous hits rare so the
material stays close to what a single vocalist could perform.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .audio import CANONICAL_RATE, AudioBuffer, write_wav

INSTRUMENTS = ("kick", "snare", "hihat_closed", "hihat_open", "crash")

BEATS_PER_PATTERN = 16  # 4 measures x 4 beats
TEST_TEMPOS = (80, 120, 160)


@dataclass(frozen=True)
class DrumEvent:
    instrument: str
    position: Fraction  # beats from pattern start
    velocity: float


@dataclass(frozen=True)
class DrumPattern:
    name: str
    events: tuple[DrumEvent, ...]

    def __post_init__(self):
        for ev in self.events:
            if not 0 <= ev.position < BEATS_PER_PATTERN:
                raise ValueError(f"event position {ev.position} outside [0, 16)")
            if ev.instrument not in INSTRUMENTS:
                raise ValueError(f"unknown instrument {ev.instrument}")
        positions = [(ev.instrument, ev.position) for ev in self.events]
        if len(set(positions)) != len(positions):
            raise ValueError("duplicate (instrument, position) event")
        object.__setattr__(
            self, "events",
            tuple(sorted(self.events, key=lambda ev: (ev.position, ev.instrument))))

    def simultaneity_fraction(self) -> float:
        """Fraction of occupied grid positions holding 2+ events."""
        counts: dict[Fraction, int] = {}
        for ev in self.events:
            counts[ev.position] = counts.get(ev.position, 0) + 1
        return sum(1 for c in counts.values() if c >= 2) / len(counts)


@dataclass(frozen=True)
class DrumKit:
    samples: dict[str, AudioBuffer]

    def __post_init__(self):
        rates = {b.sample_rate for b in self.samples.values()}
        if len(rates) > 1:
            raise ValueError(f"kit samples disagree on sample rate: {rates}")

    @property
    def sample_rate(self) -> int:
        return next(iter(self.samples.values())).sample_rate


def _measure_events(measure: int, hits) -> list[DrumEvent]:
    base = Fraction(4 * measure)
    return [DrumEvent(inst, base + Fraction(pos), vel) for inst, pos, vel in hits]


def builtin_patterns() -> tuple[DrumPattern, DrumPattern, DrumPattern]:
    """The three fixed evaluation patterns.

    1. Basic rock beat with off-beat closed hats.
    2. Eighth-note hi-hat groove with a syncopated kick.
    3. Sixteenth-note pattern with open-hat and crash accents.
    """
    rock = [("kick", "0", 1.0), ("hihat_closed", "1/2", 0.6),
            ("snare", "1", 0.9), ("hihat_closed", "3/2", 0.5),
            ("kick", "2", 0.95), ("hihat_closed", "5/2", 0.6),
            ("snare", "3", 0.9), ("hihat_closed", "7/2", 0.5)]
    p1 = DrumPattern("basic_rock", tuple(
        ev for m in range(4) for ev in _measure_events(m, rock)))

    groove = [("kick", "0", 1.0), ("hihat_closed", "1/2", 0.6),
              ("snare", "1", 0.9), ("hihat_closed", "3/2", 0.55),
              ("hihat_closed", "2", 0.6), ("kick", "5/2", 0.95),
              ("snare", "3", 0.9), ("hihat_closed", "7/2", 0.55)]
    p2 = DrumPattern("syncopated_groove", tuple(
        ev for m in range(4) for ev in _measure_events(m, groove)))

    sixteenth = [("kick", "0", 1.0),
                 ("hihat_closed", "1/4", 0.45), ("hihat_closed", "1/2", 0.6),
                 ("hihat_closed", "3/4", 0.45), ("snare", "1", 0.9),
                 ("hihat_closed", "5/4", 0.45), ("hihat_closed", "3/2", 0.6),
                 ("hihat_closed", "7/4", 0.45), ("kick", "2", 0.95),
                 ("hihat_closed", "9/4", 0.45), ("hihat_open", "5/2", 0.7),
                 ("hihat_closed", "11/4", 0.45), ("snare", "3", 0.9),
                 ("hihat_closed", "13/4", 0.45), ("hihat_closed", "7/2", 0.6),
                 ("hihat_open", "15/4", 0.7)]
    events3 = [ev for m in range(4) for ev in _measure_events(m, sixteenth)]
    events3.append(DrumEvent("crash", Fraction(0), 0.9))  # downbeat accent
    p3 = DrumPattern("sixteenth_accents", tuple(events3))

    return p1, p2, p3


def _decay(n: int, sample_rate: int, tau: float) -> np.ndarray:
    return np.exp(-np.arange(n) / (tau * sample_rate))


def _highpass(x: np.ndarray, cutoff: float, sample_rate: int) -> np.ndarray:
    sos = butter(4, cutoff, btype="highpass", fs=sample_rate, output="sos")
    return sosfilt(sos, x)


def _bandpass(x: np.ndarray, lo: float, hi: float, sample_rate: int) -> np.ndarray:
    sos = butter(2, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
    return sosfilt(sos, x)


def _normalized(x: np.ndarray, sample_rate: int) -> AudioBuffer:
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak * 0.9
    return AudioBuffer(samples=x.astype(np.float32), sample_rate=sample_rate)


def synthesize_kit(sample_rate: int = CANONICAL_RATE, seed: int = 7) -> DrumKit:
    """Deterministic synthesized one-shot kit.

    Kick: damped sine sweep 100 -> 40 Hz. Snare: filtered noise burst plus a
    180 Hz body tone. Hats: high-passed noise with short/long decays.
    Crash: long band-noise decay.
    """
    rng = np.random.default_rng(seed)

    n = int(0.35 * sample_rate)
    t = np.arange(n) / sample_rate
    freq = 40.0 + 60.0 * np.exp(-t / 0.06)
    phase = 2.0 * np.pi * np.cumsum(freq) / sample_rate
    kick = np.sin(phase) * _decay(n, sample_rate, 0.10)

    n = int(0.25 * sample_rate)
    t = np.arange(n) / sample_rate
    noise = rng.standard_normal(n)
    snare = (0.7 * _bandpass(noise, 1000.0, 8000.0, sample_rate) * _decay(n, sample_rate, 0.045)
             + 0.5 * np.sin(2.0 * np.pi * 180.0 * t) * _decay(n, sample_rate, 0.06))

    n = int(0.08 * sample_rate)
    hat_closed = _highpass(rng.standard_normal(n), 6000.0, sample_rate) \
        * _decay(n, sample_rate, 0.015)

    n = int(0.40 * sample_rate)
    hat_open = _highpass(rng.standard_normal(n), 6000.0, sample_rate) \
        * _decay(n, sample_rate, 0.12)

    n = int(1.2 * sample_rate)
    crash = _bandpass(rng.standard_normal(n), 3000.0, 14000.0, sample_rate) \
        * _decay(n, sample_rate, 0.35)

    return DrumKit(samples={
        "kick": _normalized(kick, sample_rate),
        "snare": _normalized(snare, sample_rate),
        "hihat_closed": _normalized(hat_closed, sample_rate),
        "hihat_open": _normalized(hat_open, sample_rate),
        "crash": _normalized(crash, sample_rate),
    })


def load_kit(manifest_path) -> DrumKit:
    """Load a kit from a JSON manifest mapping instrument -> WAV path."""
    from .audio import read_wav

    manifest_path = Path(manifest_path)
    mapping = json.loads(manifest_path.read_text())
    samples = {}
    for instrument, rel in mapping.items():
        path = Path(rel)
        if not path.is_absolute():
            path = manifest_path.parent / path
        samples[instrument] = read_wav(path)
    return DrumKit(samples=samples)


def render(pattern: DrumPattern, tempo_bpm: float, kit: DrumKit) -> AudioBuffer:
    """Render a pattern at a tempo; peak-normalized to -1 dBFS.

    Base duration is 16 beats at the tempo; the final sample's tail extends
    past it.
    """
    if tempo_bpm <= 0:
        raise ValueError(f"tempo must be positive, got {tempo_bpm}")
    sr = kit.sample_rate
    beat_seconds = 60.0 / tempo_bpm
    base_samples = int(round(BEATS_PER_PATTERN * beat_seconds * sr))
    max_tail = max(len(s) for s in kit.samples.values()) if kit.samples else 0
    out = np.zeros(base_samples + max_tail, dtype=np.float64)
    for ev in pattern.events:
        if ev.instrument not in kit.samples:
            raise KeyError(f"kit has no sample for {ev.instrument}")
        sample = kit.samples[ev.instrument].samples
        offset = int(round(float(ev.position) * beat_seconds * sr))
        out[offset:offset + len(sample)] += sample * ev.velocity
    peak = np.max(np.abs(out))
    if peak > 0:
        out = out / peak * 10.0 ** (-1.0 / 20.0)  # -1 dBFS
    return AudioBuffer(samples=out.astype(np.float32), sample_rate=sr)


def pattern_onsets(pattern: DrumPattern, tempo_bpm: float) -> dict[str, list[float]]:
    """Ground-truth onset times in seconds per instrument."""
    beat_seconds = 60.0 / tempo_bpm
    onsets: dict[str, list[float]] = {}
    for ev in pattern.events:
        onsets.setdefault(ev.instrument, []).append(float(ev.position) * beat_seconds)
    return {inst: sorted(times) for inst, times in sorted(onsets.items())}


def generate_test_set(kit: DrumKit, out_dir) -> dict:
    """Render all 9 test cases plus a JSON manifest with ground-truth onsets."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cases = []
    for idx, pattern in enumerate(builtin_patterns(), start=1):
        for bpm in TEST_TEMPOS:
            name = f"pattern{idx}_bpm{bpm}.wav"
            buf = render(pattern, bpm, kit)
            write_wav(out_dir / name, buf)
            cases.append({
                "file": name,
                "pattern": idx,
                "pattern_name": pattern.name,
                "bpm": bpm,
                "base_duration_seconds": BEATS_PER_PATTERN * 60.0 / bpm,
                "onsets": pattern_onsets(pattern, bpm),
            })
    manifest = {"sample_rate": kit.sample_rate, "cases": cases}
    (out_dir / "test_set.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
