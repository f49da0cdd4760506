import json

import numpy as np
import pytest

from drum2vp.audio import AudioBuffer, read_wav, write_wav
from drum2vp.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestDispatch:
    def test_no_arguments_usage_exit_2(self, capsys):
        code, out, err = run(capsys)
        assert code == 2
        assert "usage" in err.lower()

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0


class TestStats:
    def test_k_equals_n_closed_form(self, capsys):
        code, out, _ = run(capsys, "stats", "--k", "6", "--n", "6",
                           "--confidence", "0.99")
        assert code == 0
        low, high = out.strip().strip("[]").split(",")
        assert float(low) == pytest.approx(0.005 ** (1 / 6), abs=1e-4)
        assert float(high) == 1.0

    def test_k_zero(self, capsys):
        code, out, _ = run(capsys, "stats", "--k", "0", "--n", "10")
        assert code == 0
        low, high = out.strip().strip("[]").split(",")
        assert float(low) == 0.0
        assert float(high) == pytest.approx(1 - 0.005 ** (1 / 10), abs=1e-4)

    def test_invalid_counts(self, capsys):
        code, _, err = run(capsys, "stats", "--k", "7", "--n", "6")
        assert code == 1
        assert "reason" in err

    def test_missing_counts(self, capsys):
        code, _, err = run(capsys, "stats")
        assert code == 2

    def test_export_summary(self, capsys, tmp_path):
        rows = [{"type": "response", "system": "a", "participant": "p",
                 "test_case": "c", "q1_rhythm": True, "q2_timbre": True,
                 "q3_naturalness": False, "comment": "x", "timestamp": 1.0}
                for _ in range(4)]
        path = tmp_path / "export.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        code, out, _ = run(capsys, "stats", "--export", str(path))
        assert code == 0
        stats = json.loads(out)
        assert stats["systems"]["a"]["q1_rhythm"]["successes"] == 4


class TestPatterns:
    def test_renders_nine_cases(self, capsys, tmp_path):
        code, out, _ = run(capsys, "patterns", "--out", str(tmp_path))
        assert code == 0
        wavs = sorted(tmp_path.glob("*.wav"))
        assert len(wavs) == 9
        manifest = json.loads((tmp_path / "test_set.json").read_text())
        assert len(manifest["cases"]) == 9

    def test_seed_reproducible(self, capsys, tmp_path):
        run(capsys, "patterns", "--out", str(tmp_path / "a"), "--seed", "3")
        run(capsys, "patterns", "--out", str(tmp_path / "b"), "--seed", "3")
        a = (tmp_path / "a" / "pattern1_bpm120.wav").read_bytes()
        b = (tmp_path / "b" / "pattern1_bpm120.wav").read_bytes()
        assert a == b


class TestPreprocess:
    def test_manifest_to_chunks(self, capsys, tmp_path):
        rng = np.random.default_rng(0)
        wav = tmp_path / "take.wav"
        write_wav(wav, AudioBuffer(
            samples=rng.uniform(-0.4, 0.4, 40000).astype(np.float32),
            sample_rate=16000))
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps([{"path": "take.wav",
                                         "split": "train"}]))
        out = tmp_path / "chunks"
        code, stdout, _ = run(capsys, "preprocess", "--manifest",
                              str(manifest), "--out", str(out),
                              "--chunk-length", "16000")
        assert code == 0
        assert len(list(out.glob("*.wav"))) > 0
        assert (out / "index.json").exists()

    def test_missing_manifest(self, capsys, tmp_path):
        code, _, err = run(capsys, "preprocess", "--manifest",
                           str(tmp_path / "nope.json"), "--out",
                           str(tmp_path / "o"))
        assert code == 1


class TestTrainConvertRoundTrip:
    @pytest.fixture(scope="class")
    def corpus_dir(self, tmp_path_factory, vp_corpus):
        d = tmp_path_factory.mktemp("corpus")
        for i, chunk in enumerate(vp_corpus[:8]):
            write_wav(d / f"chunk{i:03d}.wav", chunk)
        return d

    def test_train_then_convert(self, capsys, tmp_path, corpus_dir):
        ckpt = tmp_path / "train.pt"
        model = tmp_path / "model.pt"
        code, out, err = run(capsys, "train", "--corpus", str(corpus_dir),
                             "--stage", "1", "--mode", "gaussian", "--toy",
                             "--steps", "5", "--batch-size", "2",
                             "--seed", "1", "--out", str(ckpt),
                             "--model-out", str(model))
        assert code == 0, err
        assert ckpt.exists() and model.exists()

        src = tmp_path / "drums.wav"
        rng = np.random.default_rng(1)
        write_wav(src, AudioBuffer(
            samples=rng.uniform(-0.5, 0.5, 8192).astype(np.float32),
            sample_rate=16000))
        dst = tmp_path / "vp.wav"
        code, out, err = run(capsys, "convert", "--input", str(src),
                             "--output", str(dst), "--checkpoint", str(model))
        assert code == 0, err
        converted = read_wav(dst)
        assert len(converted) == 8192

    def test_seed_determinism(self, capsys, tmp_path, corpus_dir):
        outs = []
        for name in ("a.pt", "b.pt"):
            path = tmp_path / name
            code, _, _ = run(capsys, "train", "--corpus", str(corpus_dir),
                             "--toy", "--steps", "3", "--batch-size", "2",
                             "--seed", "9", "--out", str(path))
            assert code == 0
            outs.append(path)
        import torch
        a = torch.load(outs[0], weights_only=False)["model_state"]
        b = torch.load(outs[1], weights_only=False)["model_state"]
        for k in a:
            assert torch.equal(a[k], b[k])

    def test_stage2_requires_resume(self, capsys, corpus_dir, tmp_path):
        code, _, err = run(capsys, "train", "--corpus", str(corpus_dir),
                           "--stage", "2", "--out", str(tmp_path / "x.pt"))
        assert code == 2


class TestConfigPrecedence:
    def test_config_supplies_default_flag_beats_it(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n": 6, "confidence": 0.99}))
        code, out, _ = run(capsys, "--config", str(cfg), "stats", "--k", "6")
        assert code == 0
        assert float(out.strip().strip("[]").split(",")[0]) == pytest.approx(
            0.005 ** (1 / 6), abs=1e-4)
        # explicit flag wins over the config value
        code, out2, _ = run(capsys, "--config", str(cfg), "stats",
                            "--k", "0", "--n", "10")
        low = float(out2.strip().strip("[]").split(",")[0])
        assert low == 0.0


class TestMetricsReport:
    def test_report_on_rendered_test_set(self, capsys, tmp_path):
        run(capsys, "patterns", "--out", str(tmp_path / "set"))
        report_path = tmp_path / "report.json"
        code, _, err = run(capsys, "metrics", "--test-set",
                           str(tmp_path / "set" / "test_set.json"),
                           "--audio-dir", str(tmp_path / "set"),
                           "--out", str(report_path))
        assert code == 0, err
        report = json.loads(report_path.read_text())
        assert len(report["cases"]) == 9
        for case in report["cases"]:
            assert case["rhythmic_f"] >= 0.9  # identity audio, own onsets
            assert "spectral_flatness" in case["texture"]
