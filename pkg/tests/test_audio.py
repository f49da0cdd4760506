import math

import numpy as np
import pytest

from drum2vp.audio import (
    AudioBuffer,
    AudioError,
    multiscale_stft,
    peak_dbfs,
    read_wav,
    resample,
    write_wav,
)


def sine(freq, seconds, rate, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return AudioBuffer(samples=(amp * np.sin(2 * np.pi * freq * t)).astype(np.float32),
                       sample_rate=rate)


class TestWavIO:
    def test_stereo_averaged_to_mono(self, tmp_path):
        from scipy.io import wavfile
        rate = 44100
        left = np.linspace(-0.5, 0.5, rate, dtype=np.float32)
        right = -left
        wavfile.write(tmp_path / "st.wav", rate, np.stack([left, right], axis=1))
        buf = read_wav(tmp_path / "st.wav")
        assert len(buf) == rate
        assert np.allclose(buf.samples, 0.0, atol=1e-7)

    def test_pcm16_fullscale_normalization(self, tmp_path):
        from scipy.io import wavfile
        wavfile.write(tmp_path / "p.wav", 8000, np.array([32767, -32768, 0], dtype=np.int16))
        buf = read_wav(tmp_path / "p.wav")
        assert buf.samples[0] == pytest.approx(32767 / 32768)
        assert buf.samples[1] == pytest.approx(-1.0)

    def test_truncated_file_errors(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"RIFF\x04\x00\x00\x00WAVE")
        with pytest.raises((AudioError, ValueError, EOFError)):
            read_wav(tmp_path / "bad.wav")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_wav(tmp_path / "nope.wav")

    def test_float32_roundtrip_bit_exact(self, tmp_path):
        buf = sine(440, 0.1, 44100)
        write_wav(tmp_path / "f.wav", buf, encoding="float32")
        back = read_wav(tmp_path / "f.wav")
        assert np.array_equal(back.samples, buf.samples)
        assert back.sample_rate == buf.sample_rate

    def test_pcm16_roundtrip_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(0)
        buf = AudioBuffer(samples=rng.uniform(-1, 1, 5000).astype(np.float32),
                          sample_rate=22050)
        write_wav(tmp_path / "p.wav", buf, encoding="pcm16")
        back = read_wav(tmp_path / "p.wav")
        assert np.max(np.abs(back.samples - buf.samples)) <= 2 ** -15


class TestResample:
    def test_rate_doubling_doubles_length(self):
        buf = sine(440, 1.0, 22050)
        out = resample(buf, 44100)
        assert len(out) == 44100
        assert out.sample_rate == 44100

    def test_identity(self):
        buf = sine(440, 0.5, 44100)
        assert resample(buf, 44100) is buf

    def test_sine_peak_bin_preserved(self):
        buf = sine(440, 1.0, 22050)
        out = resample(buf, 44100)
        spec = multiscale_stft(out, window_sizes=(2048,))[0]
        mean_mag = spec.magnitudes.mean(axis=0)
        peak_bin = int(np.argmax(mean_mag))
        expected = round(440 * 2048 / 44100)
        assert abs(peak_bin - expected) <= 1

    def test_invalid_rate(self):
        with pytest.raises(AudioError):
            resample(sine(440, 0.1, 44100), 0)


class TestPeakDbfs:
    def test_full_scale(self):
        buf = AudioBuffer(samples=np.array([1.0, -0.2], dtype=np.float32), sample_rate=8000)
        assert peak_dbfs(buf) == pytest.approx(0.0, abs=1e-9)

    def test_minus_sixty(self):
        buf = AudioBuffer(samples=np.array([0.001], dtype=np.float32), sample_rate=8000)
        assert peak_dbfs(buf) == pytest.approx(-60.0, abs=1e-3)

    def test_silence_sentinel(self):
        buf = AudioBuffer(samples=np.zeros(100, dtype=np.float32), sample_rate=8000)
        assert peak_dbfs(buf) == float("-inf")

    def test_empty_errors(self):
        buf = AudioBuffer(samples=np.zeros(0, dtype=np.float32), sample_rate=8000)
        with pytest.raises(AudioError):
            peak_dbfs(buf)

    def test_gain_shifts_level(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-0.2, 0.2, 1000).astype(np.float32)
        a = AudioBuffer(samples=x, sample_rate=8000)
        b = AudioBuffer(samples=2.0 * x, sample_rate=8000)
        assert peak_dbfs(b) == pytest.approx(peak_dbfs(a) + 20 * math.log10(2.0), abs=1e-9)


class TestMultiscaleStft:
    def test_bin_counts(self):
        buf = sine(440, 8.0, 44100)
        specs = multiscale_stft(buf)
        assert [s.bins for s in specs] == [1025, 513, 257, 129, 65]

    def test_sine_argmax_bin_per_scale(self):
        buf = sine(1000, 2.0, 44100)
        for spec in multiscale_stft(buf):
            mean_mag = spec.magnitudes.mean(axis=0)
            expected = round(1000 * spec.window_size / 44100)
            assert abs(int(np.argmax(mean_mag)) - expected) <= 1

    def test_sign_invariance(self):
        buf = sine(440, 0.5, 44100)
        neg = AudioBuffer(samples=-buf.samples, sample_rate=44100)
        for a, b in zip(multiscale_stft(buf), multiscale_stft(neg)):
            assert np.allclose(a.magnitudes, b.magnitudes, rtol=1e-6, atol=1e-9)

    def test_gain_linearity(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-0.3, 0.3, 44100).astype(np.float32)
        a = AudioBuffer(samples=x, sample_rate=44100)
        b = AudioBuffer(samples=0.5 * x, sample_rate=44100)
        for sa, sb in zip(multiscale_stft(a), multiscale_stft(b)):
            assert np.allclose(0.5 * sa.magnitudes, sb.magnitudes, rtol=1e-6, atol=1e-9)

    def test_too_short_buffer(self):
        buf = AudioBuffer(samples=np.zeros(64, dtype=np.float32), sample_rate=44100)
        with pytest.raises(AudioError):
            multiscale_stft(buf)

    def test_non_power_of_two_rejected(self):
        buf = sine(440, 0.5, 44100)
        with pytest.raises(AudioError):
            multiscale_stft(buf, window_sizes=(1000,))


class TestAudioBuffer:
    def test_nonfinite_rejected(self):
        with pytest.raises(AudioError):
            AudioBuffer(samples=np.array([0.0, np.nan], dtype=np.float32), sample_rate=8000)

    def test_immutable(self):
        buf = sine(440, 0.01, 8000)
        with pytest.raises(ValueError):
            buf.samples[0] = 1.0
