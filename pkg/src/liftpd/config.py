"""Run configuration: one JSON document, every field defaulted.

Precedence, lowest to highest: built-in defaults, the ``--config`` file, the
``LIFTPD_DATA_ROOT`` environment variable (dataset root only), command-line flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .gate import GateConfig
from .model import EncoderConfig
from .training import MaskSpec
from .windowing import config_digest

DATA_ROOT_ENV = "LIFTPD_DATA_ROOT"


@dataclass(frozen=True)
class WindowParams:
    window_len: int = 128
    hop_minority: int = 32
    tau: float = 0.5
    pretrain_hop: int | None = None  # window_len // 2 when unset
    test_hop: int | None = None      # window_len // 2 when unset

    @property
    def pretrain_stride(self) -> int:
        return self.pretrain_hop or self.window_len // 2

    @property
    def test_stride(self) -> int:
        return self.test_hop or self.window_len // 2


@dataclass(frozen=True)
class TrainParams:
    pretrain_epochs: int = 50
    finetune_epochs: int = 50
    baseline_epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


@dataclass(frozen=True)
class EvalParams:
    threshold: float = 0.5
    baseline: bool = True
    max_folds: int | None = None
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    data_root: str = "data"
    site: str = "ankle"
    windowing: WindowParams = field(default_factory=WindowParams)
    mask: MaskSpec = field(default_factory=MaskSpec)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    training: TrainParams = field(default_factory=TrainParams)
    gate: GateConfig = field(default_factory=GateConfig)
    stream_stride: int = 32
    label_fractions: tuple[float, ...] = (1.0, 0.8, 0.6, 0.4)
    evaluation: EvalParams = field(default_factory=EvalParams)
    out: str = "runs"

    def __post_init__(self):
        if self.encoder.window_len != self.windowing.window_len:
            object.__setattr__(self, "encoder",
                               replace(self.encoder, window_len=self.windowing.window_len))
        object.__setattr__(self, "label_fractions", tuple(float(f) for f in self.label_fractions))

    @property
    def seed(self) -> int:
        return self.training.seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        d["label_fractions"] = list(self.label_fractions)
        return d

    def digest(self) -> str:
        """Content hash of everything except the output directory."""
        d = self.to_dict()
        d.pop("out")
        return config_digest(d)


_SECTIONS = {"windowing": WindowParams, "mask": MaskSpec, "training": TrainParams,
             "gate": GateConfig, "evaluation": EvalParams}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return data


def config_from_dict(data: dict) -> RunConfig:
    _build(RunConfig, data, "config")
    kwargs = dict(data)
    try:
        for key, cls in _SECTIONS.items():
            if key in kwargs:
                kwargs[key] = cls(**_build(cls, kwargs[key], key))
        if "encoder" in kwargs:
            kwargs["encoder"] = EncoderConfig.from_dict(_build(EncoderConfig, kwargs["encoder"],
                                                               "encoder"))
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    if os.environ.get(DATA_ROOT_ENV):
        data["data_root"] = os.environ[DATA_ROOT_ENV]
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return config_from_dict(data)
