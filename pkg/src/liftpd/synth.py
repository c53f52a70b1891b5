"""Synthetic Daphnet-format recordings for end-to-end checks.

Each subject alternates rest (near-zero movement) with walking bouts (dominant
1-2 Hz oscillation); freezes (3-8 Hz low-amplitude trembling) interrupt the
walking bouts.  A few seconds at each end are marked out-of-experiment.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ingest import Annotation, Recording, recording_filename, write_recording

FS = 64.0
GRAVITY_MG = 1000.0

REST, WALK, FREEZE, OUTSIDE = "rest", "walk", "freeze", "outside"


def _unit(rng, n=1, around=None, spread=1.0):
    v = rng.normal(scale=spread, size=(n, 3))
    if around is not None:
        v = v + np.asarray(around, dtype=np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# Nominal sensor frame: gravity along z, forward swing along x, lateral along y.
_UP, _FORWARD, _LATERAL = (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)


def _timeline(rng, duration_s: float, rest_s, walk_s, freezes_per_walk, freeze_s,
              lead_s: float = 5.0):
    """List of (kind, seconds) covering ``duration_s``."""
    parts = [(OUTSIDE, lead_s)]
    used = lead_s
    end = duration_s - lead_s
    while used < end:
        for kind, length in _bout(rng, rest_s, walk_s, freezes_per_walk, freeze_s):
            length = min(length, end - used)
            if length <= 0:
                break
            parts.append((kind, length))
            used += length
    parts.append((OUTSIDE, duration_s - used))
    return parts


def _bout(rng, rest_s, walk_s, freezes_per_walk, freeze_s):
    out = [(REST, rng.uniform(*rest_s))]
    walk = rng.uniform(*walk_s)
    n_freeze = int(rng.integers(freezes_per_walk[0], freezes_per_walk[1] + 1))
    cuts = np.sort(rng.uniform(0.15, 0.85, size=n_freeze)) * walk
    prev = 0.0
    for c in cuts:
        out.append((WALK, c - prev))
        out.append((FREEZE, rng.uniform(*freeze_s)))
        prev = c
    out.append((WALK, walk - prev))
    return out


def _render(rng, parts, fs: float, gain: float):
    """Triaxial signal (milli-g) for one site and the per-sample kind labels."""
    n = int(round(sum(s for _, s in parts) * fs))
    sig = np.zeros((n, 3))
    kinds = np.empty(n, dtype=object)
    gravity = _unit(rng, around=_UP, spread=0.0)[0] * GRAVITY_MG
    pos = 0
    for kind, seconds in parts:
        m = min(int(round(seconds * fs)), n - pos)
        if m <= 0:
            continue
        t = np.arange(m) / fs
        if kind == WALK:
            f = rng.uniform(1.0, 2.0)
            axes = np.vstack([_unit(rng, around=_FORWARD, spread=0.25),
                              _unit(rng, around=_UP, spread=0.25)])
            amp = gain * rng.uniform(250.0, 450.0)
            phase = rng.uniform(0, 2 * np.pi)
            seg = (amp * np.sin(2 * np.pi * f * t + phase)[:, None] * axes[0]
                   + 0.4 * amp * np.sin(4 * np.pi * f * t + 2 * phase)[:, None] * axes[1]
                   + rng.normal(scale=25.0 * gain, size=(m, 3)))
        elif kind == FREEZE:
            f = rng.uniform(3.0, 8.0)
            axis = _unit(rng, around=_LATERAL, spread=0.5)[0]
            amp = gain * rng.uniform(60.0, 140.0)
            seg = (amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))[:, None] * axis
                   + rng.normal(scale=12.0 * gain, size=(m, 3)))
        else:
            seg = rng.normal(scale=3.0, size=(m, 3))
        sig[pos:pos + m] = seg + gravity
        kinds[pos:pos + m] = kind
        pos += m
    return sig[:pos], kinds[:pos]


def _annotations(kinds) -> np.ndarray:
    ann = np.full(len(kinds), int(Annotation.NO_FREEZE), dtype=np.int8)
    ann[kinds == FREEZE] = int(Annotation.FREEZE)
    ann[kinds == OUTSIDE] = int(Annotation.OUT_OF_EXPERIMENT)
    return ann


def _recording(subject: int, trial: int, parts, rng, fs: float) -> Recording:
    ankle, kinds = _render(rng, parts, fs, gain=1.0)
    n = len(ankle)
    motion = ankle - ankle.mean(axis=0)
    thigh = 0.6 * motion @ _rotation(rng) + _unit(rng, around=_UP, spread=0.0)[0] * GRAVITY_MG
    trunk = 0.3 * motion @ _rotation(rng) + _unit(rng, around=_UP, spread=0.0)[0] * GRAVITY_MG
    accel = np.round(np.concatenate([ankle, thigh, trunk], axis=1), 3)
    t_ms = np.round(np.arange(n) * 1000.0 / fs).astype(np.int64)
    return Recording(f"S{subject:02d}", f"R{trial:02d}", fs, t_ms, accel, _annotations(kinds))


def _rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.diag(r))


def make_subject(subject: int, seed: int = 0, duration_s: float = 600.0,
                 fs: float = FS) -> Recording:
    """One 9-channel recording with roughly a third of the labeled time frozen."""
    rng = np.random.default_rng([seed, subject])
    parts = _timeline(rng, duration_s, rest_s=(10.0, 25.0), walk_s=(30.0, 50.0),
                      freezes_per_walk=(2, 3), freeze_s=(8.0, 15.0))
    return _recording(subject, 1, parts, rng, fs)


def make_gating_stream(seed: int = 0, duration_s: float = 600.0, rest_fraction: float = 0.7,
                       fs: float = FS, subject: int = 90) -> Recording:
    """Long rest periods broken by walking bouts; rest makes up ``rest_fraction`` of the time."""
    rng = np.random.default_rng([seed, subject, 1])
    parts = []
    used = 0.0
    while used < duration_s:
        walk = rng.uniform(30.0, 60.0)
        rest = walk * rest_fraction / (1.0 - rest_fraction)
        for kind, s in ((REST, rest), (WALK, walk)):
            s = min(s, duration_s - used)
            if s > 0:
                parts.append((kind, s))
                used += s
    return _recording(subject, 1, parts, rng, fs)


def benchmark(n_subjects: int = 6, seed: int = 0, duration_s: float = 600.0) -> list[Recording]:
    return [make_subject(i, seed, duration_s) for i in range(1, n_subjects + 1)]


def write_benchmark(out_dir, n_subjects: int = 6, seed: int = 0,
                    duration_s: float = 600.0) -> list[Path]:
    """Write the corpus to ``out_dir`` and a gating stream to ``out_dir/stream``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in benchmark(n_subjects, seed, duration_s):
        p = out_dir / recording_filename(rec)
        write_recording(rec, p)
        paths.append(p)
    stream_dir = out_dir / "stream"
    stream_dir.mkdir(exist_ok=True)
    rec = make_gating_stream(seed, duration_s)
    p = stream_dir / recording_filename(rec)
    write_recording(rec, p)
    paths.append(p)
    return paths
