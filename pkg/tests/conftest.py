import numpy as np
import pytest

from liftpd.ingest import Recording


def make_recording(annotation, accel=None, subject="S01", trial="R01", rate=64.0, seed=0):
    """Single-site recording with the given per-sample annotations."""
    annotation = np.asarray(annotation, dtype=np.int8)
    n = len(annotation)
    if accel is None:
        accel = np.random.default_rng(seed).normal(size=(n, 3))
    t_ms = np.round(np.arange(n) * 1000.0 / rate).astype(np.int64)
    return Recording(subject, trial, rate, t_ms, np.asarray(accel, dtype=np.float64), annotation)


def freeze_stream(n, minority_fraction, rng, n_episodes=None):
    """Annotations (1/2) with freeze episodes covering ``minority_fraction`` of ``n`` samples."""
    ann = np.ones(n, dtype=np.int8)
    target = int(round(minority_fraction * n))
    if n_episodes is None:
        n_episodes = max(1, target // 600)
    lengths = np.full(n_episodes, target // n_episodes)
    lengths[: target - lengths.sum()] += 1
    slack = n - target
    gaps = np.sort(rng.integers(0, slack + 1, size=n_episodes))
    pos = 0
    for g, length in zip(gaps, lengths):
        start = int(g) + pos
        ann[start:start + length] = 2
        pos += length
    return ann


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
