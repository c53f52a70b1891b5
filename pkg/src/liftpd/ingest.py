"""Reading Daphnet-style FoG recordings and preparing them for windowing.

File layout: one sample per line, whitespace separated -- time in ms, nine
acceleration values (ankle, thigh, trunk; x/y/z each, milli-g) and an
annotation (0 out of experiment, 1 no freeze, 2 freeze).  Single-site files
written by :func:`serialize_recording` carry three acceleration columns.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from .errors import (DegenerateChannelError, EmptyInputError, ParseError,
                     SensorSelectionError, TimingError)

TIMING_TOLERANCE = 0.10
_NAME_RE = re.compile(r"S(\d+)R(\d+)", re.IGNORECASE)


class Annotation(IntEnum):
    OUT_OF_EXPERIMENT = 0
    NO_FREEZE = 1
    FREEZE = 2


class Site(str, Enum):
    ANKLE = "ankle"
    THIGH = "thigh"
    TRUNK = "trunk"


_SITE_COLUMNS = {Site.ANKLE: slice(0, 3), Site.THIGH: slice(3, 6), Site.TRUNK: slice(6, 9)}


@dataclass(frozen=True)
class Sample:
    t_ms: int
    accel: tuple[float, float, float]
    annotation: Annotation


@dataclass(frozen=True, eq=False)
class Recording:
    """One subject session stored column-wise.

    ``accel`` is ``[T, 9]`` straight from a raw file and ``[T, 3]`` once a
    sensor site is selected.  ``start_index`` is the offset of the first sample
    within the file this recording was cut from.
    """

    subject_id: str
    trial_id: str
    sample_rate_hz: float
    t_ms: np.ndarray
    accel: np.ndarray
    annotation: np.ndarray
    start_index: int = 0

    def __len__(self):
        return len(self.t_ms)

    @property
    def n_channels(self) -> int:
        return self.accel.shape[1]

    def samples(self) -> Iterator[Sample]:
        if self.n_channels != 3:
            raise SensorSelectionError("samples() needs a single-site recording")
        for t, a, ann in zip(self.t_ms, self.accel, self.annotation):
            yield Sample(int(t), (float(a[0]), float(a[1]), float(a[2])), Annotation(int(ann)))

    def same_as(self, other: "Recording") -> bool:
        return (self.subject_id == other.subject_id and self.trial_id == other.trial_id
                and self.sample_rate_hz == other.sample_rate_hz
                and self.start_index == other.start_index
                and np.array_equal(self.t_ms, other.t_ms)
                and np.array_equal(self.accel, other.accel)
                and np.array_equal(self.annotation, other.annotation))


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(~(np.asarray(self.std) > 0)):
            raise DegenerateChannelError(f"channel std must be positive, got {self.std}")

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d) -> "ChannelStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def parse_name(naming: str) -> tuple[str, str]:
    m = _NAME_RE.search(Path(naming).name)
    if m is None:
        raise ParseError(f"file name {naming!r} does not match S<subject>R<trial>")
    return f"S{int(m.group(1)):02d}", f"R{int(m.group(2)):02d}"


def parse_recording(source: BinaryIO | bytes | str, naming: str) -> Recording:
    """Parse a recording from a byte stream (or bytes / text).

    Sample rate is estimated from the mean timestamp delta; Daphnet stores
    64 Hz timestamps quantized to whole ms (15/16 ms alternating), so the
    median would be biased.
    """
    subject, trial = parse_name(naming)
    if isinstance(source, (bytes, bytearray)):
        text = source.decode("ascii")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("ascii")

    times, values, annots = [], [], []
    width = None
    for lineno, line in enumerate(io.StringIO(text), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (5, 11):
            raise ParseError(f"expected 11 fields, found {len(fields)}", lineno)
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ParseError(f"expected {width} fields, found {len(fields)}", lineno)
        try:
            t = float(fields[0])
            accel = [float(v) for v in fields[1:-1]]
            ann = float(fields[-1])
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", lineno) from None
        if not t.is_integer():
            raise ParseError(f"timestamp {fields[0]!r} is not an integer", lineno)
        if ann not in (0.0, 1.0, 2.0):
            raise ParseError(f"annotation {fields[-1]!r} not in {{0, 1, 2}}", lineno)
        times.append(int(t))
        values.append(accel)
        annots.append(int(ann))

    if not times:
        raise EmptyInputError(f"{naming}: no samples")

    t_ms = np.asarray(times, dtype=np.int64)
    rate = _check_timing(t_ms, naming)
    return Recording(subject, trial, rate, t_ms, np.asarray(values, dtype=np.float64),
                     np.asarray(annots, dtype=np.int8))


def _check_timing(t_ms: np.ndarray, naming: str) -> float:
    if len(t_ms) < 2:
        # one sample carries no timing information; Daphnet's nominal rate applies
        return 64.0
    deltas = np.diff(t_ms)
    bad = np.flatnonzero(deltas <= 0)
    if bad.size:
        i = int(bad[0])
        raise TimingError(f"{naming}: timestamps not increasing at sample {i + 1} "
                          f"({t_ms[i]} -> {t_ms[i + 1]} ms)")
    expected = (t_ms[-1] - t_ms[0]) / (len(t_ms) - 1)
    off = np.flatnonzero(np.abs(deltas - expected) > TIMING_TOLERANCE * expected)
    if off.size:
        i = int(off[0])
        raise TimingError(f"{naming}: delta {deltas[i]} ms at sample {i + 1} deviates from "
                          f"expected {expected:.3f} ms by more than {TIMING_TOLERANCE:.0%}")
    return 1000.0 / expected


def read_recording(path) -> Recording:
    path = Path(path)
    with open(path, "rb") as fh:
        return parse_recording(fh, path.name)


def load_dataset(root, pattern: str = "S*R*.txt") -> list[Recording]:
    """All recordings under ``root`` in (subject, trial) order."""
    paths = sorted(Path(root).glob(pattern), key=lambda p: parse_name(p.name))
    if not paths:
        raise EmptyInputError(f"no recordings matching {pattern!r} under {root}")
    return [read_recording(p) for p in paths]


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2 ** 53 else repr(v)


def serialize_recording(rec: Recording) -> bytes:
    """Inverse of :func:`parse_recording`; floats are written with round-trip precision."""
    lines = []
    for t, row, ann in zip(rec.t_ms, rec.accel, rec.annotation):
        lines.append(" ".join([str(int(t)), *(_fmt(v) for v in row), str(int(ann))]))
    return ("\n".join(lines) + "\n").encode("ascii")


def recording_filename(rec: Recording) -> str:
    return f"{rec.subject_id}{rec.trial_id}.txt"


def write_recording(rec: Recording, path) -> None:
    Path(path).write_bytes(serialize_recording(rec))


def select_sensor(rec: Recording, site: Site | str = Site.ANKLE) -> Recording:
    site = Site(site)
    if rec.n_channels == 3:
        raise SensorSelectionError("recording is already single-site")
    if rec.n_channels != 9:
        raise SensorSelectionError(f"expected 9 acceleration channels, got {rec.n_channels}")
    return replace(rec, accel=np.ascontiguousarray(rec.accel[:, _SITE_COLUMNS[site]]))


def split_labeled_segments(rec: Recording) -> list[Recording]:
    """Maximal runs of samples whose annotation is not OutOfExperiment."""
    valid = rec.annotation != Annotation.OUT_OF_EXPERIMENT
    edges = np.diff(np.concatenate([[0], valid.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [replace(rec, t_ms=rec.t_ms[a:b], accel=rec.accel[a:b],
                    annotation=rec.annotation[a:b], start_index=rec.start_index + int(a))
            for a, b in zip(starts, stops)]


def fit_standardizer(recs: Sequence[Recording]) -> ChannelStats:
    if not recs:
        raise EmptyInputError("fit_standardizer needs at least one recording")
    data = np.concatenate([r.accel for r in recs], axis=0)
    if len(data) < 2:
        raise EmptyInputError("fit_standardizer needs at least two samples")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    if np.any(std == 0):
        raise DegenerateChannelError(f"constant channel(s) {np.flatnonzero(std == 0).tolist()}")
    return ChannelStats(mean, std)


def apply_standardizer(rec: Recording, stats: ChannelStats) -> Recording:
    return replace(rec, accel=(rec.accel - stats.mean) / stats.std)


def invert_standardizer(rec: Recording, stats: ChannelStats) -> Recording:
    return replace(rec, accel=rec.accel * stats.std + stats.mean)
