"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import RocCurve, auc  # noqa: E402

_STYLE = {"ssl": dict(color="tab:blue", ls="-"), "supervised": dict(color="tab:orange", ls="--")}


def savefig(fig, filename) -> Path:
    """Write ``fig`` to ``filename`` and close it."""
    filename = Path(filename)
    fig.savefig(filename, dpi=120, bbox_inches="tight", pad_inches=0.1,
                metadata={"Software": None})
    plt.close(fig)
    return filename


def plot_roc(curves: Mapping[str, RocCurve], filename, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls=":")
    for name, c in curves.items():
        ax.step(c.fpr, c.tpr, where="post", lw=1.5, label=f"{name} (AUC {auc(c):.3f})",
                **_STYLE.get(name, {}))
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", frameon=False)
    return savefig(fig, filename)


def plot_sweep(rows: Sequence[Mapping], filename) -> Path:
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    for ax, metric in zip(axes, ("auc", "precision", "accuracy")):
        for name in ("ssl", "supervised"):
            pts = sorted((r["fraction"], r[metric]) for r in rows
                         if r["model"] == name and r[metric] is not None)
            if pts:
                x, y = zip(*pts)
                ax.plot(x, y, marker="o", label=name, **_STYLE[name])
        ax.set_xlabel("fraction of labeled windows")
        ax.set_title(metric)
        ax.invert_xaxis()
    axes[0].legend(frameon=False)
    fig.tight_layout()
    return savefig(fig, filename)


def plot_stream(accel: np.ndarray, detections, fs: float, window_len: int, filename) -> Path:
    """Acceleration magnitude with the gate state and freeze scores underneath."""
    mag = np.sqrt(np.sum(accel * accel, axis=1))
    t = np.arange(len(mag)) / fs
    fig, (a0, a1) = plt.subplots(2, 1, figsize=(10, 4), sharex=True,
                                 gridspec_kw={"height_ratios": [2, 1]})
    a0.plot(t, mag, lw=0.5, color="0.3")
    a0.set_ylabel("|accel| (std units)")
    ends = np.array([(d.start + window_len) / fs for d in detections])
    active = np.array([d.score is not None for d in detections])
    a1.fill_between(ends, 0, active.astype(float), step="pre", color="tab:green", alpha=0.2,
                    label="classifier active")
    scored = [(e, d.score) for e, d in zip(ends, detections) if d.score is not None]
    if scored:
        x, y = zip(*scored)
        a1.plot(x, y, ".", ms=2, color="tab:red", label="P(freeze)")
    a1.set_ylim(-0.05, 1.05)
    a1.set_xlabel("time (s)")
    a1.legend(loc="upper right", frameon=False, fontsize=8)
    fig.tight_layout()
    return savefig(fig, filename)


def plot_losses(logs, filename) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for log in logs:
        if log.records:
            ax.plot([r.epoch for r in log.records], log.losses, marker=".", label=log.stage)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    return savefig(fig, filename)
