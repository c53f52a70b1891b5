"""Confusion metrics, ROC/AUC and leave-one-subject-out folds."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, MetricsError
from .ingest import Recording

METRIC_NAMES = ("sensitivity", "specificity", "precision", "accuracy", "f1", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        buf.write("threshold,fpr,tpr\n")
        for thr, f, t in self.points():
            buf.write(f"{thr!r},{f!r},{t!r}\n")
        return buf.getvalue()


def _check_pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise MetricsError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if s.size == 0:
        raise MetricsError("no scores to evaluate")
    if np.any((y != 0) & (y != 1)):
        raise MetricsError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def confusion_at(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    s, y = _check_pair(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)),
                           tn=int(np.sum(~pred & ~pos)), fn=int(np.sum(~pred & pos)))


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


def classification_metrics(c: ConfusionCounts) -> dict[str, float | None]:
    """Sensitivity, specificity, precision, accuracy and F1; ``None`` where undefined."""
    sens = _ratio(c.tp, c.tp + c.fn)
    prec = _ratio(c.tp, c.tp + c.fp)
    if sens is None or prec is None or prec + sens == 0:
        f1 = None
    else:
        f1 = 2 * prec * sens / (prec + sens)
    return {"sensitivity": sens, "specificity": _ratio(c.tn, c.tn + c.fp), "precision": prec,
            "accuracy": _ratio(c.tp + c.tn, c.total), "f1": f1}


def roc_curve(scores, labels) -> RocCurve:
    """ROC points at every distinct score, highest first, after a +inf sentinel at (0, 0)."""
    s, y = _check_pair(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_run = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last_of_run]
    fp = np.cumsum(1 - y)[last_of_run]
    thresholds = np.r_[np.inf, s[last_of_run]]
    return RocCurve(thresholds, np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos])


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve (in fpr)."""
    f, t = curve.fpr, curve.tpr
    if len(f) < 2 or f[0] != 0 or t[0] != 0 or f[-1] != 1 or t[-1] != 1:
        raise MetricsError("ROC curve must run from (0, 0) to (1, 1)")
    if np.any(np.diff(f) < 0) or np.any(np.diff(t) < 0):
        raise MetricsError("ROC curve is not monotone")
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1])) / 2.0)


def roc_auc(scores, labels) -> float:
    return auc(roc_curve(scores, labels))


def concordance_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), by direct pairwise comparison."""
    s, y = _check_pair(scores, labels)
    pos, neg = s[y == 1], s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricsError("concordance needs both classes")
    diff = pos[:, None] - neg[None, :]
    return float((np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size)


def evaluate_scores(scores, labels, threshold: float = 0.5) -> dict[str, float | None]:
    """All threshold metrics plus AUC (``None`` when the test set lacks a class)."""
    c = confusion_at(scores, labels, threshold)
    out = classification_metrics(c)
    y = np.asarray(labels)
    out["auc"] = roc_auc(scores, labels) if 0 < y.sum() < len(y) else None
    out.update(tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn)
    return out


# ---------------------------------------------------------------- subject-independent folds

@dataclass(frozen=True)
class Fold:
    train_subjects: tuple[str, ...]
    test_subject: str

    def split(self, recordings: Sequence[Recording]) -> tuple[list[Recording], list[Recording]]:
        train = [r for r in recordings if r.subject_id in self.train_subjects]
        test = [r for r in recordings if r.subject_id == self.test_subject]
        return train, test


def loso_folds(recordings: Sequence[Recording]) -> list[Fold]:
    """One fold per subject; every trial of a subject lands on the same side."""
    subjects = sorted({r.subject_id for r in recordings})
    if len(subjects) < 2:
        raise DataError(f"LOSO needs at least 2 subjects, got {subjects}")
    return [Fold(tuple(s for s in subjects if s != test), test) for test in subjects]


def aggregate_report(per_fold: Sequence[Mapping[str, float | None]],
                     names: Sequence[str] = METRIC_NAMES) -> dict:
    """Unweighted mean and population std per metric; undefined values are excluded."""
    if not per_fold:
        raise MetricsError("no folds to aggregate")
    mean, std, defined, notes = {}, {}, {}, []
    for name in names:
        vals = [f[name] for f in per_fold if f.get(name) is not None]
        defined[name] = len(vals)
        if vals:
            mean[name] = float(np.mean(vals))
            std[name] = float(np.std(vals))
        else:
            mean[name] = std[name] = None
        if len(vals) < len(per_fold):
            notes.append(f"{name}: undefined in {len(per_fold) - len(vals)} of "
                         f"{len(per_fold)} folds, excluded from mean")
    return {"folds": [dict(f) for f in per_fold], "mean": mean, "std": std,
            "n_defined": defined, "notes": notes}


def format_table(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    """Comma-delimited table; ``None`` renders as ``undefined``."""
    def cell(v):
        if v is None:
            return "undefined"
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.4f}"
        return str(v)

    lines = [",".join(columns)]
    lines += [",".join(cell(r.get(c)) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"
