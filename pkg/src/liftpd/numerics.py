"""Dense float64 kernels with a tape-based reverse-mode differentiator, plus Adam.

Every op accepts ``Tensor`` objects or plain arrays.  When any input is bound to a
``Tape`` the op is recorded there and its vector-Jacobian product is kept for
``backward``; otherwise the op is evaluated eagerly and nothing is recorded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "tape", "index")

    def __init__(self, data, tape: "Tape | None" = None, index: int | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tracked = "" if self.tape is None else f", node={self.index}"
        return f"Tensor(shape={self.shape}{tracked})"


@dataclass
class _Node:
    op: str
    inputs: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    value: np.ndarray
    name: str | None = None


class Tape:
    """Append-only record of operations.  Inputs always point at earlier nodes."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data, name: str | None = None) -> Tensor:
        idx = len(self.nodes)
        t = Tensor(data, self, idx)
        self.nodes.append(_Node("leaf", (), None, t.data, name or f"leaf{idx}"))
        return t

    def record(self, op, value, inputs, vjp) -> Tensor:
        idx = len(self.nodes)
        refs = tuple(x.index if isinstance(x, Tensor) and x.tape is self else None
                     for x in inputs)
        self.nodes.append(_Node(op, refs, vjp, value))
        return Tensor(value, self, idx)


def _unwrap(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=DTYPE)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError("inputs are recorded on different tapes")
            tape = x.tape
    return tape


def _emit(op, value, inputs, vjp) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(value)
    return tape.record(op, value, inputs, vjp)


# ---------------------------------------------------------------- layer kernels

def conv1d(x, kernels, bias) -> Tensor:
    """Valid cross-correlation: out[b,o,i] = bias[o] + sum_c sum_j x[b,c,i+j] * k[o,c,j]."""
    xd, wd, bd = _unwrap(x), _unwrap(kernels), _unwrap(bias)
    if xd.ndim != 3 or wd.ndim != 3 or bd.ndim != 1:
        raise ShapeError(f"conv1d expects 3-d input/kernels and 1-d bias, got "
                         f"{xd.shape}, {wd.shape}, {bd.shape}")
    batch, cin, length = xd.shape
    cout, wcin, k = wd.shape
    if wcin != cin or bd.shape[0] != cout:
        raise ShapeError(f"conv1d channel mismatch: input {xd.shape}, kernels {wd.shape}, "
                         f"bias {bd.shape}")
    if k > length:
        raise ShapeError(f"kernel size {k} exceeds input length {length}")
    lout = length - k + 1
    # cols[b, i, c, j] = x[b, c, i + j]
    cols = sliding_window_view(xd, k, axis=2).transpose(0, 2, 1, 3).reshape(batch * lout, cin * k)
    wmat = wd.reshape(cout, cin * k)
    out = (cols @ wmat.T).reshape(batch, lout, cout).transpose(0, 2, 1) + bd[None, :, None]

    def vjp(g):
        gmat = g.transpose(0, 2, 1).reshape(batch * lout, cout)
        dw = (gmat.T @ cols).reshape(cout, cin, k)
        dcols = (gmat @ wmat).reshape(batch, lout, cin, k)
        dx = np.zeros_like(xd)
        for j in range(k):
            dx[:, :, j:j + lout] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dx, dw, g.sum(axis=(0, 2))

    return _emit("conv1d", np.ascontiguousarray(out), (x, kernels, bias), vjp)


def affine(x, weight, bias) -> Tensor:
    """out = x @ weight.T + bias for x of shape [batch, d_in]."""
    xd, wd, bd = _unwrap(x), _unwrap(weight), _unwrap(bias)
    if xd.ndim != 2 or wd.ndim != 2 or bd.ndim != 1 or wd.shape[1] != xd.shape[1] \
            or bd.shape[0] != wd.shape[0]:
        raise ShapeError(f"affine shape mismatch: input {xd.shape}, weight {wd.shape}, "
                         f"bias {bd.shape}")
    out = xd @ wd.T + bd

    def vjp(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return _emit("affine", out, (x, weight, bias), vjp)


def relu(x) -> Tensor:
    xd = _unwrap(x)
    active = xd > 0
    out = np.where(active, xd, 0.0)
    return _emit("relu", out, (x,), lambda g: (g * active,))


def max_pool1d(x, width: int = 2) -> Tensor:
    """Non-overlapping max pool along the last axis; a trailing remainder is dropped.

    Ties route the gradient to the earliest index in the pool.
    """
    xd = _unwrap(x)
    if xd.ndim != 3 or xd.shape[2] < width:
        raise ShapeError(f"max_pool1d needs [batch, ch, length>={width}], got {xd.shape}")
    batch, ch, length = xd.shape
    lout = length // width
    grouped = xd[:, :, :lout * width].reshape(batch, ch, lout, width)
    arg = grouped.argmax(axis=3)[..., None]
    out = np.take_along_axis(grouped, arg, axis=3)[..., 0]

    def vjp(g):
        dg = np.zeros((batch, ch, lout, width))
        np.put_along_axis(dg, arg, g[..., None], axis=3)
        dx = np.zeros_like(xd)
        dx[:, :, :lout * width] = dg.reshape(batch, ch, lout * width)
        return (dx,)

    return _emit("max_pool1d", out, (x,), vjp)


def reshape(x, shape) -> Tensor:
    xd = _unwrap(x)
    out = xd.reshape(shape)
    return _emit("reshape", out, (x,), lambda g: (g.reshape(xd.shape),))


def transpose(x, axes) -> Tensor:
    xd = _unwrap(x)
    inverse = np.argsort(axes)
    out = np.ascontiguousarray(xd.transpose(axes))
    return _emit("transpose", out, (x,), lambda g: (g.transpose(inverse),))


def add(a, b) -> Tensor:
    ad, bd = _unwrap(a), _unwrap(b)
    if ad.shape != bd.shape:
        raise ShapeError(f"add needs equal shapes, got {ad.shape} and {bd.shape}")
    return _emit("add", ad + bd, (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    ad, bd = _unwrap(a), _unwrap(b)
    if ad.shape != bd.shape:
        raise ShapeError(f"mul needs equal shapes, got {ad.shape} and {bd.shape}")
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def total(x) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    xd = _unwrap(x)
    return _emit("sum", np.array(xd.sum()), (x,), lambda g: (np.full_like(xd, g),))


# ---------------------------------------------------------------- losses

def softmax(logits) -> np.ndarray:
    z = _unwrap(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    z = _unwrap(logits)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or z.shape[1] != 2:
        raise ShapeError(f"expected logits of shape [batch, 2], got {z.shape}")
    if z.shape[0] == 0:
        raise ShapeError("softmax_cross_entropy on an empty batch")
    if y.shape != (z.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match batch {z.shape[0]}")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = np.mean(log_norm - shifted[rows, y])

    def vjp(g):
        p = np.exp(shifted - log_norm[:, None])
        p[rows, y] -= 1.0
        return (g * p / z.shape[0],)

    return _emit("softmax_cross_entropy", np.array(loss), (logits,), vjp)


def masked_mse(pred, target, mask) -> Tensor:
    """Mean squared error over masked positions only.  ``target`` is treated as constant."""
    p, t = _unwrap(pred), _unwrap(target)
    m = np.asarray(mask, dtype=bool)
    if p.shape != t.shape or p.shape != m.shape:
        raise ShapeError(f"masked_mse shapes differ: {p.shape}, {t.shape}, {m.shape}")
    count = int(m.sum())
    if count == 0:
        raise ValueError("masked_mse needs at least one masked position")
    diff = np.where(m, p - t, 0.0)
    loss = np.sum(diff * diff) / count
    return _emit("masked_mse", np.array(loss), (pred,), lambda g: (g * 2.0 * diff / count,))


# ---------------------------------------------------------------- reverse pass

def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse-accumulate d(loss)/d(leaf) for every leaf on the tape.

    Leaves that the loss does not depend on receive zeros.
    """
    if loss.tape is not tape or loss.index is None:
        raise ValueError("loss is not recorded on this tape")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.index] = np.ones_like(loss.data)
    for idx in range(loss.index, -1, -1):
        node = tape.nodes[idx]
        g = grads[idx]
        if g is None or node.vjp is None:
            continue
        for ref, gin in zip(node.inputs, node.vjp(g)):
            if ref is None or gin is None:
                continue
            if grads[ref] is None:
                grads[ref] = np.array(gin, dtype=DTYPE)
            else:
                grads[ref] = grads[ref] + gin
    out = {}
    for idx, node in enumerate(tape.nodes):
        if node.op == "leaf":
            g = grads[idx]
            out[node.name] = np.zeros_like(node.value) if g is None else g.reshape(node.value.shape)
    return out


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Compare ``backward`` against central differences of ``f`` at ``x``.

    Returns the largest absolute discrepancy divided by the largest gradient
    magnitude (either route); 0.0 when both gradients vanish.
    """
    x0 = np.array(_unwrap(x), dtype=DTYPE)
    tape = Tape()
    leaf = tape.leaf(x0.copy(), name="x")
    analytic = backward(tape, f(leaf))["x"]

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(_unwrap(f(Tensor(x0))))
        flat[i] = orig - eps
        lo = float(_unwrap(f(Tensor(x0))))
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)

    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **hyper) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()}, **hyper)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Inputs are left untouched; new objects are returned.

    Only the keys present in ``grads`` are updated; other params pass through.
    """
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params = dict(params)
    new_m, new_v = dict(state.m), dict(state.v)
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, param {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"optimizer moments for {name!r} do not match param shape")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_params[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        new_m[name], new_v[name] = m, v
    new_state = AdamState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.epsilon)
    return new_params, new_state
