"""Opportunistic inference: run the classifier only while the wearer is moving.

A cheap activity statistic (std of the acceleration magnitude over the last
``stat_window`` samples) drives a two-threshold state machine.  The gate turns
on as soon as the statistic reaches ``theta_on`` and only turns off after it
has stayed below ``theta_off`` for ``off_dwell`` consecutive samples, so a
freeze in the middle of a walking bout does not switch the classifier off.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, TooShortError
from .ingest import Recording, Sample


class Mode(str, Enum):
    IDLE = "idle"
    ACTIVE = "active"


@dataclass(frozen=True)
class GateConfig:
    stat_window: int = 64
    theta_on: float = 0.10
    theta_off: float = 0.05
    off_dwell: int = 320

    def __post_init__(self):
        if self.stat_window < 2:
            raise ConfigError(f"stat_window must be >= 2, got {self.stat_window}")
        if self.theta_off > self.theta_on:
            raise ConfigError(f"theta_off {self.theta_off} exceeds theta_on {self.theta_on}")
        if self.off_dwell < self.stat_window:
            raise ConfigError(f"off_dwell {self.off_dwell} shorter than stat_window "
                              f"{self.stat_window}")


@dataclass
class GateState:
    stat_window: int = 64
    mode: Mode = Mode.IDLE
    buffer: deque = None
    below_count: int = 0
    last_stat: float | None = None

    def __post_init__(self):
        if self.buffer is None:
            self.buffer = deque(maxlen=self.stat_window)

    @classmethod
    def initial(cls, cfg: GateConfig) -> "GateState":
        return cls(cfg.stat_window)


@dataclass
class InferenceStats:
    total_windows: int = 0
    invoked: int = 0
    skipped: int = 0
    invoke_ms: float = 0.0

    @property
    def ms_per_invocation(self) -> float | None:
        return self.invoke_ms / self.invoked if self.invoked else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["invocation_reduction"] = invocation_reduction(self) if self.total_windows else None
        d["ms_per_invocation"] = self.ms_per_invocation
        return d


def magnitude(accel) -> float:
    x, y, z = (float(v) for v in accel)
    return math.sqrt(x * x + y * y + z * z)


def activity_stat(buffer) -> float:
    """Population std of the buffered magnitudes."""
    return float(np.std(np.asarray(buffer, dtype=np.float64)))


def _push(state: GateState, mag: float, cfg: GateConfig) -> Mode:
    state.buffer.append(mag)
    if len(state.buffer) < cfg.stat_window:
        state.last_stat = None
        return state.mode
    stat = activity_stat(state.buffer)
    state.last_stat = stat
    if stat >= cfg.theta_off:
        state.below_count = 0
    else:
        state.below_count += 1
    if state.mode is Mode.IDLE and stat >= cfg.theta_on:
        state.mode = Mode.ACTIVE
    elif state.mode is Mode.ACTIVE and state.below_count >= cfg.off_dwell:
        state.mode = Mode.IDLE
    return state.mode


def gate_step(state: GateState, sample: Sample, cfg: GateConfig) -> tuple[GateState, Mode]:
    """Feed one sample.  ``state`` is updated in place and returned for chaining."""
    return state, _push(state, magnitude(sample.accel), cfg)


@dataclass
class Detection:
    start: int
    mode: Mode
    score: float | None

    def line(self) -> str:
        score = "SKIP" if self.score is None else repr(self.score)
        return f"{self.start},{self.mode.value},{score}"


def run_stream(rec: Recording, model, gate_cfg: GateConfig, window_len: int = 128,
               stride: int = 32) -> tuple[list[Detection], InferenceStats]:
    """Consume ``rec`` sample by sample, classifying only while the gate is active.

    A decision point occurs whenever a stride-aligned window has just been
    completed; idle decision points are recorded as skipped (implicit no-freeze).
    """
    from .training import predict_scores

    if rec.n_channels != 3:
        raise ConfigError("streaming needs a single-site recording")
    if window_len > len(rec):
        raise TooShortError(f"recording has {len(rec)} samples < window_len {window_len}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    state = GateState.initial(gate_cfg)
    stats = InferenceStats()
    out = []
    accel = rec.accel
    for t in range(len(rec)):
        mode = _push(state, magnitude(accel[t]), gate_cfg)
        start = t + 1 - window_len
        if start < 0 or start % stride:
            continue
        stats.total_windows += 1
        if mode is Mode.ACTIVE:
            window = np.ascontiguousarray(accel[start:t + 1].T)[None]
            t0 = time.perf_counter()
            score = float(predict_scores(model, window)[0])
            stats.invoke_ms += 1000.0 * (time.perf_counter() - t0)
            stats.invoked += 1
            out.append(Detection(start, mode, score))
        else:
            stats.skipped += 1
            out.append(Detection(start, mode, None))
    return out, stats


def invocation_reduction(stats: InferenceStats) -> float:
    if stats.total_windows < 1:
        raise ValueError("no classifier-eligible windows")
    return stats.skipped / stats.total_windows


def stream_summary(stats: InferenceStats, cfg: GateConfig, **extra) -> str:
    body = {"stats": stats.to_dict(), "gate": asdict(cfg), **extra}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"
