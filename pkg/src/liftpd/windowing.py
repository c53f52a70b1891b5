"""Fixed-hop and differential-hop (class-balancing) window segmentation.

Differential hopping: windows whose freeze fraction reaches ``tau`` are cut at
a short hop so they overlap heavily (oversampling the minority class), while
the remaining windows are cut on a coarser grid (subsampling the majority).
The coarse hop is picked so both classes end up with about the same count.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, LabelContractError, MetricsError, TooShortError
from .ingest import Annotation, Recording

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DhwtConfig:
    window_len: int = 128
    hop_minority: int = 32
    hop_majority: int = 32
    label_fraction_tau: float = 0.5

    def __post_init__(self):
        if self.window_len < 2:
            raise ConfigError(f"window_len must be >= 2, got {self.window_len}")
        if self.hop_minority < 1 or self.hop_majority < 1:
            raise ConfigError("hops must be >= 1")
        if not 0.0 < self.label_fraction_tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.label_fraction_tau}")

    def digest(self) -> str:
        return config_digest(asdict(self))


def config_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Window:
    values: np.ndarray            # [window_len, 3]
    label: int | None
    source: tuple[str, str, int]  # (subject_id, trial_id, start_index)


@dataclass(eq=False)
class WindowSet:
    """N windows stored as one ``[N, window_len, 3]`` array."""

    values: np.ndarray
    labels: np.ndarray | None
    sources: list[tuple[str, str, int]]
    window_len: int
    provenance: str = ""

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[1] != self.window_len:
            raise ValueError(f"values must be [N, {self.window_len}, C], got {self.values.shape}")
        if len(self.sources) != len(self.values):
            raise ValueError("one source entry per window required")
        if self.labels is not None and len(self.labels) != len(self.values):
            raise ValueError("one label per window required")

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i) -> Window:
        label = None if self.labels is None else int(self.labels[i])
        return Window(self.values[i], label, self.sources[i])

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def class_counts(self) -> dict[int, int]:
        if self.labels is None:
            return {}
        return {0: int(np.sum(self.labels == 0)), 1: int(np.sum(self.labels == 1))}

    def take(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.values[idx], None if self.labels is None else self.labels[idx],
                         [self.sources[i] for i in idx], self.window_len, self.provenance)

    def channels_first(self) -> np.ndarray:
        """Values as ``[N, 3, window_len]``, the layout the model consumes."""
        return np.ascontiguousarray(self.values.transpose(0, 2, 1))

    @staticmethod
    def concat(sets: Sequence["WindowSet"], provenance: str = "") -> "WindowSet":
        if not sets:
            raise ValueError("nothing to concatenate")
        lens = {s.window_len for s in sets}
        if len(lens) != 1:
            raise ValueError(f"window lengths differ: {sorted(lens)}")
        labeled = {s.labeled for s in sets}
        if len(labeled) != 1:
            raise ValueError("cannot mix labeled and unlabeled window sets")
        values = np.concatenate([s.values for s in sets])
        labels = np.concatenate([s.labels for s in sets]) if sets[0].labeled else None
        sources = [src for s in sets for src in s.sources]
        return WindowSet(values, labels, sources, lens.pop(), provenance or sets[0].provenance)


def window_count(total: int, window_len: int, hop: int) -> int:
    return (total - window_len) // hop + 1


def segment_fixed(rec: Recording, window_len: int, hop: int) -> WindowSet:
    """Unlabeled windows at starts 0, hop, 2*hop, ... (pretraining input)."""
    if hop < 1:
        raise ConfigError(f"hop must be >= 1, got {hop}")
    if window_len > len(rec):
        raise TooShortError(f"{rec.subject_id}{rec.trial_id}: {len(rec)} samples < "
                            f"window_len {window_len}")
    starts = np.arange(window_count(len(rec), window_len, hop)) * hop
    return _cut(rec, starts, window_len, None,
                config_digest({"window_len": window_len, "hop": hop}))


def segment_fixed_many(recs: Sequence[Recording], window_len: int, hop: int) -> WindowSet:
    sets = []
    for rec in recs:
        if len(rec) < window_len:
            logger.warning("skipping %s%s: shorter than window", rec.subject_id, rec.trial_id)
            continue
        sets.append(segment_fixed(rec, window_len, hop))
    if not sets:
        raise TooShortError("no recording is long enough for a single window")
    return WindowSet.concat(sets)


def _cut(rec: Recording, starts: np.ndarray, window_len: int, labels, provenance) -> WindowSet:
    idx = starts[:, None] + np.arange(window_len)[None, :]
    values = rec.accel[idx] if len(starts) else np.empty((0, window_len, rec.n_channels))
    sources = [(rec.subject_id, rec.trial_id, rec.start_index + int(s)) for s in starts]
    return WindowSet(np.ascontiguousarray(values), labels, sources, window_len, provenance)


def compute_dhwt_hops(duration_minority: int, duration_majority: int, window_len: int,
                      hop_minority: int) -> tuple[int, int]:
    """Majority hop that gives the majority stream about as many windows as the minority."""
    if hop_minority < 1:
        raise ConfigError(f"hop_minority must be >= 1, got {hop_minority}")
    for name, d in (("minority", duration_minority), ("majority", duration_majority)):
        if d < window_len:
            raise TooShortError(f"{name} duration {d} < window_len {window_len}")
    n_min = window_count(duration_minority, window_len, hop_minority)
    if n_min > 1:
        hop_majority = max(1, round((duration_majority - window_len) / (n_min - 1)))
    else:
        hop_majority = duration_majority
    return hop_minority, int(hop_majority)


def window_label(annotations, tau: float = 0.5):
    """1 when the freeze fraction is >= tau, else 0."""
    ann = np.asarray(annotations)
    if ann.size == 0:
        raise LabelContractError("empty annotation slice")
    if np.any(ann == Annotation.OUT_OF_EXPERIMENT):
        raise LabelContractError("window contains OutOfExperiment samples")
    return int(np.count_nonzero(ann == Annotation.FREEZE) / ann.size >= tau)


def _labels_at_every_start(rec: Recording, window_len: int, tau: float) -> np.ndarray:
    if np.any(rec.annotation == Annotation.OUT_OF_EXPERIMENT):
        raise LabelContractError(f"{rec.subject_id}{rec.trial_id}: OutOfExperiment samples "
                                 "must be removed before labeling")
    freeze = np.concatenate([[0], np.cumsum(rec.annotation == Annotation.FREEZE)])
    counts = freeze[window_len:] - freeze[:-window_len]
    return (counts / window_len >= tau).astype(np.int8)


def dhwt_segment(recs: Sequence[Recording], cfg: DhwtConfig) -> WindowSet:
    """Labeled windows: freeze windows at the minority hop, others on the majority grid.

    Output is ordered by (recording order, start index).  Recordings shorter
    than a window are skipped with a warning unless all of them are.
    """
    sets = []
    L = cfg.window_len
    for rec in recs:
        if len(rec) < L:
            logger.warning("skipping %s%s (start %d): %d samples < window_len %d",
                           rec.subject_id, rec.trial_id, rec.start_index, len(rec), L)
            continue
        labels = _labels_at_every_start(rec, L, cfg.label_fraction_tau)
        starts = np.arange(len(labels))
        minority = (starts % cfg.hop_minority == 0) & (labels == 1)
        majority = (starts % cfg.hop_majority == 0) & (labels == 0)
        keep = np.flatnonzero(minority | majority)
        sets.append(_cut(rec, keep, L, labels[keep].astype(np.int8), cfg.digest()))
    if not sets:
        raise TooShortError(f"every recording is shorter than window_len {L}")
    return WindowSet.concat(sets, cfg.digest())


def fit_dhwt_config(recs: Sequence[Recording], window_len: int = 128, hop_minority: int = 32,
                    tau: float = 0.5) -> DhwtConfig:
    """Choose the majority hop for ``recs`` so both classes get about equally many windows.

    The durations handed to :func:`compute_dhwt_hops` are effective ones: the
    minority duration that yields the observed number of freeze windows at
    ``hop_minority``, and the majority duration that spans all candidate
    non-freeze start positions.
    """
    n_pos = 0
    n_neg_starts = 0
    for rec in recs:
        if len(rec) < window_len:
            continue
        labels = _labels_at_every_start(rec, window_len, tau)
        starts = np.arange(len(labels))
        n_pos += int(np.sum((labels == 1) & (starts % hop_minority == 0)))
        n_neg_starts += int(np.sum(labels == 0))
    if n_pos == 0 or n_neg_starts == 0:
        raise LabelContractError("both classes must be present to balance windows")
    d_min = (n_pos - 1) * hop_minority + window_len
    d_maj = n_neg_starts - 1 + window_len
    _, hop_maj = compute_dhwt_hops(d_min, d_maj, window_len, hop_minority)
    return DhwtConfig(window_len, hop_minority, hop_maj, tau)


def balance_ratio(ws: WindowSet) -> float:
    if ws.labels is None:
        raise MetricsError("window set has no labels")
    counts = ws.class_counts()
    if counts[0] == 0 or counts[1] == 0:
        raise MetricsError(f"both classes required, got counts {counts}")
    return counts[1] / counts[0]


# ---------------------------------------------------------------- window dumps

def save_windows(ws: WindowSet, path) -> None:
    """Raw little-endian float64 values plus a JSON sidecar (``<path>.json``)."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(ws.values, dtype="<f8").tobytes())
    meta = {"n": len(ws), "window_len": ws.window_len, "channels": int(ws.values.shape[2]),
            "class_counts": {str(k): v for k, v in ws.class_counts().items()},
            "labels": None if ws.labels is None else [int(v) for v in ws.labels],
            "sources": [list(s) for s in ws.sources], "config_digest": ws.provenance}
    path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_windows(path) -> WindowSet:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    values = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    values = values.reshape(meta["n"], meta["window_len"], meta["channels"])
    labels = None if meta["labels"] is None else np.asarray(meta["labels"], dtype=np.int8)
    return WindowSet(values, labels, [tuple(s) for s in meta["sources"]], meta["window_len"],
                     meta["config_digest"])

