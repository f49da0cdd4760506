import json

import numpy as np
import pytest

from drum2vp.audio import peak_dbfs, read_wav
from drum2vp.patterns import (
    BEATS_PER_PATTERN,
    builtin_patterns,
    generate_test_set,
    pattern_onsets,
    render,
    synthesize_kit,
)


@pytest.fixture(scope="module")
def kit():
    return synthesize_kit()


class TestBuiltinPatterns:
    def test_exactly_three(self):
        assert len(builtin_patterns()) == 3

    def test_positions_in_range(self):
        for pattern in builtin_patterns():
            for ev in pattern.events:
                assert 0 <= ev.position < BEATS_PER_PATTERN

    def test_mostly_monophonic(self):
        for pattern in builtin_patterns():
            assert pattern.simultaneity_fraction() <= 0.10

    def test_events_sorted(self):
        for pattern in builtin_patterns():
            positions = [ev.position for ev in pattern.events]
            assert positions == sorted(positions)


class TestRender:
    def test_base_duration_at_120(self, kit):
        buf = render(builtin_patterns()[0], 120, kit)
        assert buf.duration_seconds >= 8.0
        # base portion: 16 beats at 0.5 s
        assert 16 * 60 / 120 == 8.0

    @pytest.mark.parametrize("bpm,expected", [(80, 12.0), (120, 8.0), (160, 6.0)])
    def test_base_durations_match_tempos(self, kit, bpm, expected):
        base_samples = round(expected * kit.sample_rate)
        buf = render(builtin_patterns()[0], bpm, kit)
        tail = max(len(s) for s in kit.samples.values())
        assert len(buf) == base_samples + tail

    def test_peak_normalized_minus_one_dbfs(self, kit):
        buf = render(builtin_patterns()[1], 120, kit)
        assert peak_dbfs(buf) == pytest.approx(-1.0, abs=1e-3)

    def test_single_event_prefix_matches_sample(self, kit):
        from fractions import Fraction

        from drum2vp.patterns import DrumEvent, DrumPattern
        pattern = DrumPattern("one", (DrumEvent("snare", Fraction(0), 1.0),))
        buf = render(pattern, 120, kit)
        sample = kit.samples["snare"].samples
        scale = np.max(np.abs(buf.samples[:len(sample)])) / np.max(np.abs(sample))
        assert np.allclose(buf.samples[:len(sample)], sample * scale, atol=1e-6)

    def test_tempo_halving_doubles_offsets(self, kit):
        pattern = builtin_patterns()[0]
        fast = pattern_onsets(pattern, 160)
        slow = pattern_onsets(pattern, 80)
        for inst in fast:
            assert np.allclose(np.array(slow[inst]), 2 * np.array(fast[inst]))

    def test_missing_instrument_errors(self, kit):
        from fractions import Fraction

        from drum2vp.patterns import DrumEvent, DrumKit, DrumPattern
        small = DrumKit(samples={"kick": kit.samples["kick"]})
        pattern = DrumPattern("x", (DrumEvent("snare", Fraction(0), 1.0),))
        with pytest.raises(KeyError):
            render(pattern, 120, small)


class TestGenerateTestSet:
    def test_nine_wavs_plus_manifest(self, kit, tmp_path):
        manifest = generate_test_set(kit, tmp_path)
        wavs = sorted(tmp_path.glob("*.wav"))
        assert len(wavs) == 9
        assert (tmp_path / "test_set.json").exists()
        assert len(manifest["cases"]) == 9

    def test_manifest_onsets_pattern1_120(self, kit, tmp_path):
        manifest = generate_test_set(kit, tmp_path)
        case = next(c for c in manifest["cases"]
                    if c["pattern"] == 1 and c["bpm"] == 120)
        pattern = builtin_patterns()[0]
        for ev in pattern.events:
            inst_onsets = case["onsets"][ev.instrument]
            assert any(abs(float(ev.position) * 0.5 - t) < 1e-9 for t in inst_onsets)

    def test_regeneration_byte_identical(self, kit, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        generate_test_set(kit, a_dir)
        generate_test_set(kit, b_dir)
        for wav in sorted(a_dir.glob("*")):
            assert wav.read_bytes() == (b_dir / wav.name).read_bytes()

    def test_rendered_files_readable(self, kit, tmp_path):
        generate_test_set(kit, tmp_path)
        data = json.loads((tmp_path / "test_set.json").read_text())
        for case in data["cases"]:
            buf = read_wav(tmp_path / case["file"])
            assert buf.sample_rate == kit.sample_rate
