"""1D-CNN encoder with a masked-reconstruction head and an MLP classifier head.

Checkpoint file layout::

    b"LIFTPD01" | uint64 LE header length | JSON header | float64 LE payload | sha256(payload)
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import numerics as nx
from .errors import (CheckpointDigestError, CheckpointError, CheckpointFormatError,
                     ConfigError, ShapeError)

MAGIC = b"LIFTPD01"
ENCODER_PREFIX = "enc."
RECON_PREFIX = "recon."
HEAD_PREFIX = "head."


@dataclass(frozen=True)
class EncoderConfig:
    window_len: int = 128
    in_channels: int = 3
    blocks: tuple[tuple[int, int], ...] = ((16, 7), (32, 5), (64, 3))
    pool_width: int = 2
    head_hidden: int = 128

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple((int(c), int(k)) for c, k in self.blocks))
        if not self.blocks:
            raise ConfigError("encoder needs at least one block")
        if self.in_channels != 3:
            raise ConfigError("encoder consumes triaxial input (in_channels = 3)")
        if self.pool_width < 1 or self.head_hidden < 1:
            raise ConfigError("pool_width and head_hidden must be positive")
        self.final_length  # validates the shape recurrence

    def lengths(self) -> list[int]:
        """Sequence length after every conv and every pool, starting from window_len."""
        out = [self.window_len]
        n = self.window_len
        for _, k in self.blocks:
            n = n - k + 1
            if n < self.pool_width:
                raise ConfigError(f"window_len {self.window_len} underflows the encoder: "
                                  f"length {n} after a kernel of size {k}")
            out.append(n)
            n //= self.pool_width
            out.append(n)
        return out

    @property
    def final_length(self) -> int:
        n = self.lengths()[-1]
        if n < 1:
            raise ConfigError(f"window_len {self.window_len} reduces to length {n}")
        return n

    @property
    def embedding_dim(self) -> int:
        return self.blocks[-1][0] * self.final_length

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [list(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncoderConfig":
        d = dict(d)
        d["blocks"] = tuple(tuple(b) for b in d.get("blocks", cls.blocks))
        return cls(**d)


@dataclass(eq=False)
class Model:
    config: EncoderConfig
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()},
                     json.loads(json.dumps(self.meta)))

    def names(self, prefix: str = "") -> list[str]:
        return [k for k in self.params if k.startswith(prefix)]

    def same_params(self, other: "Model", prefix: str = "") -> bool:
        """Bitwise parameter equality for names starting with ``prefix``."""
        mine, theirs = self.names(prefix), other.names(prefix)
        return mine == theirs and all(
            self.params[k].tobytes() == other.params[k].tobytes() for k in mine)


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    cin = cfg.in_channels
    for i, (cout, k) in enumerate(cfg.blocks):
        shapes[f"enc.{i}.kernel"] = (cout, cin, k)
        shapes[f"enc.{i}.bias"] = (cout,)
        cin = cout
    d = cfg.embedding_dim
    shapes["recon.weight"] = (cfg.window_len * cfg.in_channels, d)
    shapes["recon.bias"] = (cfg.window_len * cfg.in_channels,)
    shapes["head.0.weight"] = (cfg.head_hidden, d)
    shapes["head.0.bias"] = (cfg.head_hidden,)
    shapes["head.1.weight"] = (2, cfg.head_hidden)
    shapes["head.1.bias"] = (2,)
    return shapes


def build_model(cfg: EncoderConfig, seed: int = 0) -> Model:
    """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases from a seeded PCG64."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return Model(cfg, params)


# ---------------------------------------------------------------- forward passes

def encode(p: Mapping, x, cfg: EncoderConfig) -> nx.Tensor:
    """Conv -> relu -> max-pool per block, then flatten to [batch, embedding_dim]."""
    h = x
    for i in range(len(cfg.blocks)):
        h = nx.conv1d(h, p[f"enc.{i}.kernel"], p[f"enc.{i}.bias"])
        h = nx.relu(h)
        h = nx.max_pool1d(h, cfg.pool_width)
    return nx.reshape(h, (h.shape[0], cfg.embedding_dim))


def reconstruct_head(p: Mapping, z, cfg: EncoderConfig) -> nx.Tensor:
    """Embedding -> predicted window values h of shape [batch, window_len, channels]."""
    flat = nx.affine(z, p["recon.weight"], p["recon.bias"])
    return nx.reshape(flat, (flat.shape[0], cfg.window_len, cfg.in_channels))


def classify_head(p: Mapping, z) -> nx.Tensor:
    hidden = nx.relu(nx.affine(z, p["head.0.weight"], p["head.0.bias"]))
    return nx.affine(hidden, p["head.1.weight"], p["head.1.bias"])


def _check_input(model: Model, windows) -> np.ndarray:
    x = np.asarray(windows, dtype=np.float64)
    cfg = model.config
    if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.window_len):
        raise ShapeError(f"expected windows [batch, {cfg.in_channels}, {cfg.window_len}], "
                         f"got {x.shape}")
    return x


def _per_window(model: Model, x: np.ndarray, fn, tail: tuple[int, ...]) -> np.ndarray:
    # One window per call: BLAS picks kernels by matrix size, so evaluating rows
    # separately is what makes results independent of batch composition.
    out = np.empty((len(x),) + tail)
    for i in range(len(x)):
        out[i] = fn(model.params, x[i:i + 1], model.config).data[0]
    return out


def embed(model: Model, windows) -> np.ndarray:
    x = _check_input(model, windows)
    return _per_window(model, x, encode, (model.config.embedding_dim,))


def forward_reconstruct(model: Model, masked_windows) -> np.ndarray:
    """h for each window, shape [batch, window_len, 3]."""
    x = _check_input(model, masked_windows)
    cfg = model.config
    return _per_window(model, x, lambda p, xi, c: reconstruct_head(p, encode(p, xi, c), c),
                       (cfg.window_len, cfg.in_channels))


def forward_classify(model: Model, windows) -> np.ndarray:
    """Logits [batch, 2]."""
    x = _check_input(model, windows)
    return _per_window(model, x, lambda p, xi, c: classify_head(p, encode(p, xi, c)), (2,))


def classify_embeddings(model: Model, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty((len(z), 2))
    for i in range(len(z)):
        out[i] = classify_head(model.params, z[i:i + 1]).data[0]
    return out


# ---------------------------------------------------------------- checkpoints

def checkpoint_bytes(model: Model) -> bytes:
    shapes = param_shapes(model.config)
    manifest, chunks, offset = [], [], 0
    for name, shape in shapes.items():
        arr = model.params[name]
        if arr.shape != shape:
            raise ShapeError(f"param {name!r} has shape {arr.shape}, config implies {shape}")
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(shape), "offset": offset,
                         "count": int(arr.size)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps({"config": model.config.to_dict(), "manifest": manifest,
                         "meta": model.meta}, sort_keys=True, separators=(",", ":")).encode()
    return b"".join([MAGIC, struct.pack("<Q", len(header)), header, payload,
                     hashlib.sha256(payload).digest()])


def checkpoint_digest(model: Model) -> str:
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def checkpoint_from_bytes(blob: bytes) -> Model:
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a liftpd checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise CheckpointFormatError("header extends past end of file")
    try:
        header = json.loads(blob[16:16 + hlen])
        cfg = EncoderConfig.from_dict(header["config"])
        manifest = header["manifest"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}") from None

    body = blob[16 + hlen:]
    expected = param_shapes(cfg)
    offset = 0
    for entry in manifest:
        shape = tuple(entry["shape"])
        if entry["offset"] != offset or entry["count"] != int(np.prod(shape)):
            raise CheckpointError(f"manifest entry {entry['name']!r} is not contiguous")
        if expected.get(entry["name"]) != shape:
            raise CheckpointError(f"manifest entry {entry['name']!r} does not match config")
        offset += 8 * entry["count"]
    if [e["name"] for e in manifest] != list(expected):
        raise CheckpointError("manifest does not list the parameters the config implies")
    if len(body) != offset + 32:
        raise CheckpointDigestError(f"payload is {len(body) - 32} bytes, manifest needs {offset}"
                                    " (truncated or padded file)")
    payload, digest = body[:offset], body[offset:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointDigestError("payload digest mismatch")
    params = {}
    for entry in manifest:
        a = np.frombuffer(payload, dtype="<f8", count=entry["count"], offset=entry["offset"])
        params[entry["name"]] = a.astype(np.float64).reshape(entry["shape"])
    return Model(cfg, params, header.get("meta", {}))


def load_checkpoint(path) -> Model:
    return checkpoint_from_bytes(Path(path).read_bytes())
