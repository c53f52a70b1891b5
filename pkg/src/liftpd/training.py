"""Masked-reconstruction pretraining, frozen-encoder fine-tuning and the supervised baseline."""

from __future__ import annotations

import io
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import model as M
from . import numerics as nx
from .errors import ConfigError, DataError, ShapeError
from .windowing import WindowSet, config_digest


@dataclass(frozen=True)
class MaskSpec:
    ratio: float = 0.25
    span_len: int = 16
    fill_value: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ConfigError(f"mask ratio must lie in [0, 1), got {self.ratio}")
        if self.span_len < 1:
            raise ConfigError(f"span_len must be >= 1, got {self.span_len}")

    def n_spans(self, window_len: int) -> int:
        return round(self.ratio * window_len / self.span_len)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    ms: float
    seed: int
    config_digest: str


@dataclass
class TrainLog:
    stage: str
    seed: int
    config_digest: str
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, epoch: int, loss: float, ms: float) -> None:
        if self.records and epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(EpochRecord(epoch, loss, ms, self.seed, self.config_digest))

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_csv(self, include_time: bool = True) -> str:
        buf = io.StringIO()
        buf.write(f"# stage={self.stage} config_digest={self.config_digest} seed={self.seed}\n")
        buf.write("epoch,loss,ms\n")
        for r in self.records:
            ms = f"{r.ms:.3f}" if include_time else ""
            buf.write(f"{r.epoch},{r.loss!r},{ms}\n")
        return buf.getvalue()


# ---------------------------------------------------------------- masking

def make_mask(rng: np.random.Generator, window_len: int, spec: MaskSpec) -> np.ndarray:
    """Boolean mask over time with round(ratio*L/span) non-overlapping spans.

    Span placement is uniform over the ways to distribute the free slack in
    front of each span.
    """
    if spec.span_len > window_len:
        raise ConfigError(f"span_len {spec.span_len} exceeds window_len {window_len}")
    k = spec.n_spans(window_len)
    slack = window_len - k * spec.span_len
    if slack < 0:
        raise ConfigError(f"{k} spans of {spec.span_len} do not fit in {window_len} samples")
    mask = np.zeros(window_len, dtype=bool)
    if k == 0:
        return mask
    gaps = np.sort(rng.integers(0, slack + 1, size=k))
    for i, g in enumerate(gaps):
        start = int(g) + i * spec.span_len
        mask[start:start + spec.span_len] = True
    return mask


def apply_mask(window: np.ndarray, mask: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Copy of ``window`` ([..., L, C]) with masked time steps set to the fill value."""
    out = np.array(window, dtype=np.float64, copy=True)
    out[..., mask, :] = spec.fill_value
    return out


# ---------------------------------------------------------------- helpers

def _batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def _bind(tape: nx.Tape, params: dict, trainable: Sequence[str]) -> dict:
    bound = dict(params)
    for name in trainable:
        bound[name] = tape.leaf(params[name], name)
    return bound


def _require_both_classes(ws: WindowSet) -> None:
    if ws.labels is None:
        raise DataError("window set is unlabeled")
    counts = ws.class_counts()
    if counts[0] == 0 or counts[1] == 0:
        raise DataError(f"both classes are required for training, got counts {counts}")


def _check_windows(cfg: M.EncoderConfig, ws: WindowSet) -> None:
    if ws.window_len != cfg.window_len or ws.values.shape[2] != cfg.in_channels:
        raise ShapeError(f"windows are [{ws.window_len}, {ws.values.shape[2]}], model expects "
                         f"[{cfg.window_len}, {cfg.in_channels}]")


# ---------------------------------------------------------------- pretraining

def pretrain(windows: WindowSet, cfg: M.EncoderConfig, spec: MaskSpec, epochs: int = 50,
             batch_size: int = 32, seed: int = 0, lr: float = 1e-3
             ) -> tuple[M.Model, TrainLog]:
    """Train encoder + reconstruction head to fill in masked spans.

    Every epoch draws a fresh shuffle and fresh masks from a stream seeded by
    (seed, epoch), so runs are reproducible bit for bit.
    """
    if len(windows) == 0:
        raise DataError("no windows to pretrain on")
    if not 1 <= batch_size <= len(windows):
        raise ConfigError(f"batch_size must be in [1, {len(windows)}], got {batch_size}")
    _check_windows(cfg, windows)
    if epochs > 0 and spec.n_spans(cfg.window_len) == 0:
        raise ConfigError("mask spec masks nothing; reconstruction loss would be undefined")

    digest = config_digest({"stage": "pretrain", "encoder": cfg.to_dict(), "mask": asdict(spec),
                            "epochs": epochs, "batch_size": batch_size, "lr": lr,
                            "data": windows.provenance, "n": len(windows)})
    model = M.build_model(cfg, seed)
    model.meta = {"stage": "pretrain", "seed": seed, "config_digest": digest}
    log = TrainLog("pretrain", seed, digest)
    trainable = model.names(M.ENCODER_PREFIX) + model.names(M.RECON_PREFIX)
    state = nx.AdamState.for_params({k: model.params[k] for k in trainable}, lr=lr)
    L = cfg.window_len

    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        rng = _epoch_rng(seed, epoch)
        total, count = 0.0, 0
        for idx in _batches(len(windows), batch_size, rng):
            target = windows.values[idx]
            mask = np.stack([make_mask(rng, L, spec) for _ in idx])
            masked = target.copy()
            masked[mask] = spec.fill_value
            x = np.ascontiguousarray(masked.transpose(0, 2, 1))
            full_mask = np.broadcast_to(mask[:, :, None], target.shape)

            tape = nx.Tape()
            p = _bind(tape, model.params, trainable)
            h = M.reconstruct_head(p, M.encode(p, x, cfg), cfg)
            loss = nx.masked_mse(h, target, full_mask)
            grads = nx.backward(tape, loss)
            new_params, state = nx.adam_step(model.params, {k: grads[k] for k in trainable}, state)
            model.params = new_params
            total += float(loss.data) * len(idx)
            count += len(idx)
        log.append(epoch, total / count, 1000.0 * (time.perf_counter() - t0))
    return model, log


# ---------------------------------------------------------------- labels

def subsample_labels(ws: WindowSet, fraction: float, seed: int = 0) -> WindowSet:
    """Stratified subset keeping ceil(fraction * count) windows of each class."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    _require_both_classes(ws)
    rng = np.random.default_rng(seed)
    keep = []
    for c in (0, 1):
        idx = np.flatnonzero(ws.labels == c)
        n_keep = math.ceil(round(fraction * len(idx), 9))
        if n_keep == 0:
            raise DataError(f"fraction {fraction} leaves class {c} empty")
        keep.append(rng.permutation(idx)[:n_keep])
    return ws.take(np.sort(np.concatenate(keep)))


# ---------------------------------------------------------------- classifier training

def _train_classifier(model: M.Model, labeled: WindowSet, trainable: list[str], forward,
                      inputs: np.ndarray, epochs: int, batch_size: int, seed: int, lr: float,
                      log: TrainLog) -> M.Model:
    if not 1 <= batch_size:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    state = nx.AdamState.for_params({k: model.params[k] for k in trainable}, lr=lr)
    labels = labeled.labels.astype(np.int64)
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        rng = _epoch_rng(seed, epoch)
        total = 0.0
        for idx in _batches(len(labels), batch_size, rng):
            tape = nx.Tape()
            p = _bind(tape, model.params, trainable)
            loss = nx.softmax_cross_entropy(forward(p, inputs[idx]), labels[idx])
            grads = nx.backward(tape, loss)
            model.params, state = nx.adam_step(model.params, {k: grads[k] for k in trainable},
                                               state)
            total += float(loss.data) * len(idx)
        log.append(epoch, total / len(labels), 1000.0 * (time.perf_counter() - t0))
    return model


def finetune(ckpt: M.Model, labeled: WindowSet, epochs: int = 50, batch_size: int = 32,
             seed: int = 0, lr: float = 1e-3) -> tuple[M.Model, TrainLog]:
    """Train the MLP head on frozen encoder embeddings; encoder bytes never change.

    Embeddings are computed once up front since the encoder is fixed.
    """
    _require_both_classes(labeled)
    _check_windows(ckpt.config, labeled)
    digest = config_digest({"stage": "finetune", "base": ckpt.meta.get("config_digest", ""),
                            "epochs": epochs, "batch_size": batch_size, "lr": lr,
                            "data": labeled.provenance, "n": len(labeled)})
    model = ckpt.copy()
    model.meta = {"stage": "finetune", "seed": seed, "config_digest": digest,
                  "base": ckpt.meta.get("config_digest", "")}
    log = TrainLog("finetune", seed, digest)
    z = M.embed(model, labeled.channels_first()) if epochs > 0 else None
    _train_classifier(model, labeled, model.names(M.HEAD_PREFIX), M.classify_head, z,
                      epochs, batch_size, seed, lr, log)
    return model, log


def supervised_baseline(labeled: WindowSet, cfg: M.EncoderConfig, epochs: int = 50,
                        batch_size: int = 32, seed: int = 0, lr: float = 1e-3
                        ) -> tuple[M.Model, TrainLog]:
    """Encoder and MLP head trained jointly from random init on labeled windows only."""
    _require_both_classes(labeled)
    _check_windows(cfg, labeled)
    digest = config_digest({"stage": "baseline", "encoder": cfg.to_dict(), "epochs": epochs,
                            "batch_size": batch_size, "lr": lr, "data": labeled.provenance,
                            "n": len(labeled)})
    model = M.build_model(cfg, seed)
    model.meta = {"stage": "baseline", "seed": seed, "config_digest": digest}
    log = TrainLog("baseline", seed, digest)
    trainable = model.names(M.ENCODER_PREFIX) + model.names(M.HEAD_PREFIX)
    _train_classifier(model, labeled, trainable,
                      lambda p, x: M.classify_head(p, M.encode(p, x, cfg)),
                      labeled.channels_first(), epochs, batch_size, seed, lr, log)
    return model, log


def predict_scores(model: M.Model, windows) -> np.ndarray:
    """P(freeze) per window.  Accepts a WindowSet or a [N, 3, window_len] array."""
    x = windows.channels_first() if isinstance(windows, WindowSet) else windows
    return nx.softmax(M.forward_classify(model, x))[:, 1]
