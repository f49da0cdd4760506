import numpy as np
import pytest
import torch

from drum2vp.audio import AudioBuffer, TOY_RATE


def make_vp_like_corpus(n_chunks=32, length=8192, rate=TOY_RATE, seed=0):
    """Synthetic vocal-percussion-like chunks: sparse decaying noise bursts."""
    rng = np.random.default_rng(seed)
    chunks = []
    for _ in range(n_chunks):
        x = np.zeros(length, dtype=np.float64)
        for _ in range(int(rng.integers(2, 6))):
            start = int(rng.integers(0, length - 1000))
            dur = int(rng.integers(400, 2000))
            end = min(start + dur, length)
            env = np.exp(-np.arange(end - start) / (dur / 4))
            x[start:end] += rng.standard_normal(end - start) * env \
                * rng.uniform(0.2, 0.7)
        chunks.append(AudioBuffer(samples=np.clip(x, -1, 1).astype(np.float32),
                                  sample_rate=rate))
    return chunks


@pytest.fixture(scope="session")
def vp_corpus():
    return make_vp_like_corpus()


def pytest_terminal_summary(terminalreporter):
    """One verdict line per acceptance criterion, after the normal summary."""
    try:
        from test_acceptance import _RESULTS
    except ImportError:
        return
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def trained_gaussian_state(vp_corpus):
    """A briefly trained gaussian toy model shared across test modules."""
    from drum2vp.model import ModelConfig
    from drum2vp.training import TrainConfig, train_stage1

    cfg = TrainConfig(stage=1, total_steps=150, batch_size=4, seed=11)
    return train_stage1(vp_corpus, cfg, ModelConfig.toy())
