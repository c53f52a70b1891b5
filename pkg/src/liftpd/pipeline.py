"""Subject-independent experiments: per-fold preparation, LOSO evaluation and label sweeps.

Within a fold the held-out subject never touches standardization, windowing,
pretraining or fine-tuning.  All file outputs are byte-stable for a fixed
config; wall times only go to the training-log CSVs.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evaluation as ev
from .config import RunConfig
from .ingest import (ChannelStats, Recording, apply_standardizer, fit_standardizer,
                     select_sensor, split_labeled_segments)
from .model import Model
from .training import (TrainLog, finetune, predict_scores, pretrain, subsample_labels,
                       supervised_baseline)
from .windowing import DhwtConfig, WindowSet, dhwt_segment, fit_dhwt_config, segment_fixed_many

logger = logging.getLogger(__name__)

# Headline figures the comparison tables are set against.
PUBLISHED_TARGETS = {
    "supervised_auc": 0.9078,
    "ssl_auc": 0.908,
    "precision_gain": 0.0725,
    "accuracy_gain": 0.044,
    "label_reduction": 0.40,
    "inference_reduction": 0.67,
}

MODELS = ("ssl", "supervised")


def single_site(recs: Sequence[Recording], site: str) -> list[Recording]:
    return [r if r.n_channels == 3 else select_sensor(r, site) for r in recs]


@dataclass
class FoldData:
    stats: ChannelStats
    pretrain_windows: WindowSet
    labeled: WindowSet
    test: WindowSet | None
    dhwt: DhwtConfig


def prepare_training(train: Sequence[Recording], cfg: RunConfig,
                     test: Sequence[Recording] = (), stats: ChannelStats | None = None
                     ) -> FoldData:
    """Standardize with training statistics and cut every window set a fold needs."""
    wp = cfg.windowing
    segments = [s for r in train for s in split_labeled_segments(r)]
    if stats is None:
        stats = fit_standardizer(segments)
    pre = segment_fixed_many([apply_standardizer(r, stats) for r in train], wp.window_len,
                             wp.pretrain_stride)
    std_segments = [apply_standardizer(s, stats) for s in segments]
    dhwt = fit_dhwt_config(std_segments, wp.window_len, wp.hop_minority, wp.tau)
    labeled = dhwt_segment(std_segments, dhwt)
    test_ws = None
    if test:
        test_segments = [apply_standardizer(s, stats) for r in test
                         for s in split_labeled_segments(r)]
        plain = DhwtConfig(wp.window_len, wp.test_stride, wp.test_stride, wp.tau)
        test_ws = dhwt_segment(test_segments, plain)
    return FoldData(stats, pre, labeled, test_ws, dhwt)


def train_ssl(data: FoldData, cfg: RunConfig, fraction: float = 1.0,
              base: Model | None = None) -> tuple[Model, Model, list[TrainLog]]:
    tp = cfg.training
    logs = []
    if base is None:
        base, log = pretrain(data.pretrain_windows, cfg.encoder, cfg.mask, tp.pretrain_epochs,
                             min(tp.batch_size, len(data.pretrain_windows)), tp.seed, tp.lr)
        logs.append(log)
    labeled = data.labeled if fraction == 1.0 else subsample_labels(data.labeled, fraction,
                                                                    tp.seed)
    model, log = finetune(base, labeled, tp.finetune_epochs, tp.batch_size, tp.seed, tp.lr)
    logs.append(log)
    return base, model, logs


def train_supervised(data: FoldData, cfg: RunConfig, fraction: float = 1.0
                     ) -> tuple[Model, TrainLog]:
    tp = cfg.training
    labeled = data.labeled if fraction == 1.0 else subsample_labels(data.labeled, fraction,
                                                                    tp.seed)
    return supervised_baseline(labeled, cfg.encoder, tp.baseline_epochs, tp.batch_size,
                               tp.seed, tp.lr)


@dataclass
class FoldResult:
    fold: ev.Fold
    scores: dict[str, np.ndarray]
    labels: np.ndarray
    metrics: dict[str, dict]
    class_counts: dict
    logs: list[TrainLog]


def run_fold(recordings: Sequence[Recording], fold: ev.Fold, cfg: RunConfig) -> FoldResult:
    train, test = fold.split(recordings)
    data = prepare_training(train, cfg, test)
    logger.info("fold %s: %d pretrain / %d labeled / %d test windows", fold.test_subject,
                len(data.pretrain_windows), len(data.labeled), len(data.test))
    _, ssl, logs = train_ssl(data, cfg)
    models = {"ssl": ssl}
    if cfg.evaluation.baseline:
        sup, log = train_supervised(data, cfg)
        models["supervised"] = sup
        logs.append(log)
    scores, metrics = {}, {}
    for name, m in models.items():
        scores[name] = predict_scores(m, data.test)
        metrics[name] = ev.evaluate_scores(scores[name], data.test.labels,
                                           cfg.evaluation.threshold)
    return FoldResult(fold, scores, data.test.labels.copy(), metrics,
                      {"train": data.labeled.class_counts(), "test": data.test.class_counts(),
                       "hop_majority": data.dhwt.hop_majority}, logs)


def _folds(recordings, cfg: RunConfig) -> list[ev.Fold]:
    folds = ev.loso_folds(recordings)
    if cfg.evaluation.max_folds:
        folds = folds[:cfg.evaluation.max_folds]
    return folds


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def run_loso(recordings: Sequence[Recording], cfg: RunConfig) -> list[FoldResult]:
    recs = single_site(recordings, cfg.site)
    return _map(run_fold, [(recs, f, cfg) for f in _folds(recs, cfg)], cfg.evaluation.workers)


def _pooled_curve(results: Sequence[FoldResult], name: str) -> ev.RocCurve | None:
    s = np.concatenate([r.scores[name] for r in results])
    y = np.concatenate([r.labels for r in results])
    if y.min() == y.max():
        return None
    return ev.roc_curve(s, y)


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _stamp(cfg: RunConfig) -> str:
    return f"config_digest={cfg.digest()} seed={cfg.seed}"


def comparison_rows(report: dict) -> list[dict]:
    """Side-by-side rows: measured mean vs the published figures."""
    mean = {m: report[m]["mean"] for m in report if m in MODELS}
    rows = []
    for m, target in (("supervised", "supervised_auc"), ("ssl", "ssl_auc")):
        if m not in mean:
            continue
        got = mean[m]["auc"]
        rows.append({"quantity": f"{m}_auc", "measured": got,
                     "published": PUBLISHED_TARGETS[target],
                     "gap": None if got is None else got - PUBLISHED_TARGETS[target],
                     "flag": "" if got is None or got >= PUBLISHED_TARGETS[target] else "below"})
    if "supervised" in mean:
        for metric, target in (("precision", "precision_gain"), ("accuracy", "accuracy_gain")):
            a, b = mean["ssl"][metric], mean["supervised"][metric]
            gain = None if a is None or b is None or b == 0 else (a - b) / b
            rows.append({"quantity": f"{metric}_gain_ssl_vs_supervised", "measured": gain,
                         "published": PUBLISHED_TARGETS[target],
                         "gap": None if gain is None else gain - PUBLISHED_TARGETS[target],
                         "flag": "" if gain is not None and gain >= PUBLISHED_TARGETS[target]
                         else "below"})
    return rows


def write_eval(results: Sequence[FoldResult], cfg: RunConfig, out: Path,
               figures: bool = True) -> dict:
    """Per-fold directories plus the aggregate report; returns the aggregate dict."""
    out.mkdir(parents=True, exist_ok=True)
    stamp = _stamp(cfg)
    names = list(results[0].metrics)
    for r in results:
        d = out / f"fold_{r.fold.test_subject}"
        d.mkdir(exist_ok=True)
        _dump_json({"config_digest": cfg.digest(), "seed": cfg.seed,
                    "test_subject": r.fold.test_subject,
                    "train_subjects": list(r.fold.train_subjects),
                    "windows": r.class_counts, "metrics": r.metrics}, d / "metrics.json")
        curves = {}
        for name in names:
            sub = d / name
            sub.mkdir(exist_ok=True)
            if 0 < r.labels.sum() < len(r.labels):
                curves[name] = ev.roc_curve(r.scores[name], r.labels)
                (sub / "roc.csv").write_text(curves[name].to_csv(stamp))
        for log in r.logs:
            (d / f"train_{log.stage}.csv").write_text(log.to_csv())
        if figures and curves:
            from .plotting import plot_roc
            plot_roc(curves, d / "roc.png", title=f"held-out {r.fold.test_subject}")

    report = {"config_digest": cfg.digest(), "seed": cfg.seed,
              "folds": [r.fold.test_subject for r in results]}
    pooled = {}
    for name in names:
        report[name] = ev.aggregate_report([r.metrics[name] for r in results])
        curve = _pooled_curve(results, name)
        if curve is not None:
            pooled[name] = curve
            report[name]["pooled_auc"] = ev.auc(curve)
            (out / name).mkdir(exist_ok=True)
            (out / name / "roc.csv").write_text(curve.to_csv(stamp))
    rows = comparison_rows(report)
    report["comparison"] = rows
    report["published_targets"] = PUBLISHED_TARGETS
    _dump_json(report, out / "metrics.json")
    (out / "comparison.csv").write_text(
        f"# {stamp}\n"
        + ev.format_table(rows, ["quantity", "measured", "published", "gap", "flag"]))
    if figures and pooled:
        from .plotting import plot_roc
        plot_roc(pooled, out / "roc.png", title="pooled over folds")
    return report


# ---------------------------------------------------------------- label-efficiency sweep

def sweep_fold(recordings: Sequence[Recording], fold: ev.Fold, cfg: RunConfig) -> dict:
    """Metrics per (model, fraction) for one fold; pretraining is shared across fractions."""
    train, test = fold.split(recordings)
    data = prepare_training(train, cfg, test)
    base = None
    out = {}
    for frac in cfg.label_fractions:
        base_new, ssl, _ = train_ssl(data, cfg, frac, base)
        base = base or base_new
        sup, _ = train_supervised(data, cfg, frac)
        for name, m in (("ssl", ssl), ("supervised", sup)):
            s = predict_scores(m, data.test)
            out[(name, frac)] = ev.evaluate_scores(s, data.test.labels, cfg.evaluation.threshold)
    return out


def run_sweep(recordings: Sequence[Recording], cfg: RunConfig) -> list[dict]:
    """Fold-averaged rows for every (fraction, model) plus the cross comparisons."""
    recs = single_site(recordings, cfg.site)
    folds = _folds(recs, cfg)
    per_fold = _map(sweep_fold, [(recs, f, cfg) for f in folds], cfg.evaluation.workers)
    rows = []
    agg = {}
    for frac in cfg.label_fractions:
        for name in MODELS:
            rep = ev.aggregate_report([pf[(name, frac)] for pf in per_fold])
            agg[(name, frac)] = rep["mean"]
            rows.append({"fraction": frac, "model": name, "labels_used": frac,
                         **{k: rep["mean"][k] for k in ev.METRIC_NAMES},
                         "auc_std": rep["std"]["auc"]})
    full = max(cfg.label_fractions)
    for row in rows:
        ref_same = agg[(row["model"], full)]
        ref_sup = agg[("supervised", full)]
        row["auc_delta_vs_own_full"] = _delta(row["auc"], ref_same["auc"])
        row["auc_delta_vs_supervised_full"] = _delta(row["auc"], ref_sup["auc"])
        row["precision_gain_vs_supervised_full"] = _rel(row["precision"], ref_sup["precision"])
        row["accuracy_gain_vs_supervised_full"] = _rel(row["accuracy"], ref_sup["accuracy"])
    return rows


def _delta(a, b):
    return None if a is None or b is None else a - b


def _rel(a, b):
    return None if a is None or b is None or b == 0 else (a - b) / b


SWEEP_COLUMNS = ["fraction", "model", "auc", "auc_std", "sensitivity", "specificity",
                 "precision", "accuracy", "f1", "auc_delta_vs_own_full",
                 "auc_delta_vs_supervised_full", "precision_gain_vs_supervised_full",
                 "accuracy_gain_vs_supervised_full"]


def write_sweep(rows: list[dict], cfg: RunConfig, out: Path, figures: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stamp = _stamp(cfg)
    (out / "sweep.csv").write_text(f"# {stamp}\n" + ev.format_table(rows, SWEEP_COLUMNS))
    _dump_json({"config_digest": cfg.digest(), "seed": cfg.seed, "rows": rows,
                "published_targets": PUBLISHED_TARGETS}, out / "sweep.json")
    if figures:
        from .plotting import plot_sweep
        plot_sweep(rows, out / "sweep.png")
