"""``liftpd`` command line.

    liftpd synth --out data/synth
    liftpd eval --data-root data/synth --out runs/eval
    liftpd stream --checkpoint runs/ft/finetune.ckpt --recording data/synth/stream/S90R01.txt
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig, load_config
from .errors import ConfigError, LiftPDError
from .gate import run_stream, stream_summary
from .ingest import (Annotation, ChannelStats, apply_standardizer, fit_standardizer,
                     load_dataset, read_recording, recording_filename,
                     split_labeled_segments, write_recording)
from .model import checkpoint_digest, load_checkpoint, save_checkpoint
from .synth import write_benchmark
from .training import finetune, pretrain, subsample_labels, supervised_baseline

COMMANDS = ("ingest", "pretrain", "finetune", "baseline", "eval", "sweep-labels", "stream",
            "synth")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--data-root", help="dataset directory (overrides $LIFTPD_DATA_ROOT)")
    p.add_argument("--site", choices=["ankle", "thigh", "trunk"])
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--baseline-epochs", type=int)
    p.add_argument("--max-folds", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liftpd",
                                     description="Freezing-of-gait detection pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    common = _common()

    p = sub.add_parser("ingest", parents=[common], help="validate and summarize a dataset")
    p.add_argument("--write-normalized", action="store_true",
                   help="also write standardized single-site copies")
    sub.add_parser("pretrain", parents=[common], help="masked-reconstruction pretraining")
    p = sub.add_parser("finetune", parents=[common], help="fine-tune the head of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fraction", type=float, default=1.0)
    p = sub.add_parser("baseline", parents=[common], help="supervised baseline from scratch")
    p.add_argument("--fraction", type=float, default=1.0)
    p = sub.add_parser("eval", parents=[common], help="leave-one-subject-out evaluation")
    p.add_argument("--no-baseline", action="store_true")
    p = sub.add_parser("sweep-labels", parents=[common], help="label-efficiency sweep")
    p.add_argument("--fractions", type=float, nargs="+")
    p = sub.add_parser("stream", parents=[common], help="activity-gated streaming inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--theta-on", type=float)
    p.add_argument("--theta-off", type=float)
    p.add_argument("--stride", type=int)
    p = sub.add_parser("synth", parents=[common], help="write the synthetic benchmark")
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--duration", type=float, default=600.0, help="seconds per subject")
    return parser


def _config(args) -> RunConfig:
    overrides = {
        "training.seed": args.seed, "out": args.out, "data_root": args.data_root,
        "site": args.site, "training.pretrain_epochs": args.pretrain_epochs,
        "training.finetune_epochs": args.finetune_epochs,
        "training.baseline_epochs": args.baseline_epochs,
        "evaluation.max_folds": args.max_folds, "evaluation.workers": args.workers,
    }
    if getattr(args, "no_baseline", False):
        overrides["evaluation.baseline"] = False
    if getattr(args, "fractions", None):
        overrides["label_fractions"] = args.fractions
    for flag, key in (("theta_on", "gate.theta_on"), ("theta_off", "gate.theta_off")):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    if getattr(args, "stride", None) is not None:
        overrides["stream_stride"] = args.stride
    return load_config(args.config, overrides)


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"config_digest": cfg.digest(), "seed": cfg.seed, "config": cfg.to_dict()},
                   indent=2, sort_keys=True) + "\n")
    return out


def _dataset(cfg: RunConfig):
    return pipeline.single_site(load_dataset(cfg.data_root), cfg.site)


def _write_manifest(out: Path, cfg: RunConfig, **extra) -> None:
    body = {"config_digest": cfg.digest(), "seed": cfg.seed, **extra}
    (out / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _finish_model(model, stats: ChannelStats, cfg: RunConfig, out: Path, name: str, logs,
                  figures: bool):
    model.meta["standardizer"] = stats.to_dict()
    model.meta["run_digest"] = cfg.digest()
    save_checkpoint(model, out / f"{name}.ckpt")
    for lg in logs:
        (out / f"train_{lg.stage}.csv").write_text(lg.to_csv())
    stages = [{"stage": lg.stage, "config_digest": lg.config_digest, "epochs": len(lg.records)}
              for lg in logs]
    _write_manifest(out, cfg, checkpoint=f"{name}.ckpt",
                    checkpoint_sha256=checkpoint_digest(model), stages=stages)
    if figures:
        from .plotting import plot_losses
        plot_losses(logs, out / f"{name}_loss.png")
    print(f"wrote {out / (name + '.ckpt')}")


# ---------------------------------------------------------------- subcommands

def cmd_ingest(args, cfg: RunConfig) -> int:
    out = _out(cfg)
    raw = load_dataset(cfg.data_root)
    recs = pipeline.single_site(raw, cfg.site)
    lines = ["# " + f"config_digest={cfg.digest()} seed={cfg.seed}",
             "subject,trial,samples,rate_hz,out_of_experiment,no_freeze,freeze,segments"]
    for r in recs:
        ann = r.annotation
        lines.append(",".join([r.subject_id, r.trial_id, str(len(r)), f"{r.sample_rate_hz:.3f}",
                               *(str(int((ann == a).sum())) for a in Annotation),
                               str(len(split_labeled_segments(r)))]))
    (out / "ingest.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines[1:]))
    if args.write_normalized:
        stats = fit_standardizer([s for r in recs for s in split_labeled_segments(r)])
        norm = out / "normalized"
        norm.mkdir(exist_ok=True)
        for r in recs:
            write_recording(apply_standardizer(r, stats), norm / recording_filename(r))
        (norm / "standardizer.json").write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    return 0


def cmd_pretrain(args, cfg: RunConfig) -> int:
    out = _out(cfg)
    data = pipeline.prepare_training(_dataset(cfg), cfg)
    tp = cfg.training
    model, lg = pretrain(data.pretrain_windows, cfg.encoder, cfg.mask, tp.pretrain_epochs,
                         min(tp.batch_size, len(data.pretrain_windows)), tp.seed, tp.lr)
    _finish_model(model, data.stats, cfg, out, "pretrain", [lg], not args.no_figures)
    return 0


def _labeled(cfg: RunConfig, fraction: float, stats: ChannelStats | None = None):
    data = pipeline.prepare_training(_dataset(cfg), cfg, stats=stats)
    labeled = data.labeled
    if fraction != 1.0:
        labeled = subsample_labels(labeled, fraction, cfg.seed)
    return data, labeled


def _checkpoint_stats(model) -> ChannelStats:
    if "standardizer" not in model.meta:
        raise ConfigError("checkpoint carries no standardizer statistics")
    return ChannelStats.from_dict(model.meta["standardizer"])


def cmd_finetune(args, cfg: RunConfig) -> int:
    out = _out(cfg)
    base = load_checkpoint(args.checkpoint)
    stats = _checkpoint_stats(base)
    _, labeled = _labeled(cfg, args.fraction, stats)
    tp = cfg.training
    model, lg = finetune(base, labeled, tp.finetune_epochs, tp.batch_size, tp.seed, tp.lr)
    _finish_model(model, stats, cfg, out, "finetune", [lg], not args.no_figures)
    return 0


def cmd_baseline(args, cfg: RunConfig) -> int:
    out = _out(cfg)
    data, labeled = _labeled(cfg, args.fraction)
    tp = cfg.training
    model, lg = supervised_baseline(labeled, cfg.encoder, tp.baseline_epochs, tp.batch_size,
                                    tp.seed, tp.lr)
    _finish_model(model, data.stats, cfg, out, "baseline", [lg], not args.no_figures)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _out(cfg)
    results = pipeline.run_loso(load_dataset(cfg.data_root), cfg)
    report = pipeline.write_eval(results, cfg, out, figures=not args.no_figures)
    for name in pipeline.MODELS:
        if name in report:
            m = report[name]["mean"]
            print(f"{name}: mean AUC {_f(m['auc'])}  precision {_f(m['precision'])}  "
                  f"accuracy {_f(m['accuracy'])}")
    print((out / "comparison.csv").read_text(), end="")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = _out(cfg)
    rows = pipeline.run_sweep(load_dataset(cfg.data_root), cfg)
    pipeline.write_sweep(rows, cfg, out, figures=not args.no_figures)
    print((out / "sweep.csv").read_text(), end="")
    return 0


def cmd_stream(args, cfg: RunConfig) -> int:
    out = _out(cfg)
    model = load_checkpoint(args.checkpoint)
    stats = _checkpoint_stats(model)
    rec = read_recording(args.recording)
    if rec.n_channels != 3:
        rec = pipeline.single_site([rec], cfg.site)[0]
    rec = apply_standardizer(rec, stats)
    L = model.config.window_len
    detections, stats_ = run_stream(rec, model, cfg.gate, L, cfg.stream_stride)
    stamp = f"# config_digest={cfg.digest()} seed={cfg.seed}\n"
    (out / "stream.csv").write_text(stamp + "start_index,mode,score\n"
                                    + "".join(d.line() + "\n" for d in detections))
    (out / "stream_summary.json").write_text(stream_summary(
        stats_, cfg.gate, config_digest=cfg.digest(), seed=cfg.seed,
        recording=Path(args.recording).name, window_len=L, stride=cfg.stream_stride))
    if not args.no_figures:
        from .plotting import plot_stream
        plot_stream(rec.accel, detections, rec.sample_rate_hz, L, out / "stream.png")
    print(stream_summary(stats_, cfg.gate), end="")
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out or "data/synth")
    paths = write_benchmark(out, args.subjects, cfg.seed, args.duration)
    digest = hashlib.sha256(b"".join(p.read_bytes() for p in paths)).hexdigest()[:16]
    (out / "synth.json").write_text(json.dumps(
        {"seed": cfg.seed, "subjects": args.subjects, "duration_s": args.duration,
         "files": [str(p.relative_to(out)) for p in paths], "content_digest": digest},
        indent=2) + "\n")
    print(f"wrote {len(paths)} recordings to {out}")
    return 0


HANDLERS = {"ingest": cmd_ingest, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "baseline": cmd_baseline, "eval": cmd_eval, "sweep-labels": cmd_sweep,
            "stream": cmd_stream, "synth": cmd_synth}


def _f(v) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"liftpd: config error: {exc}", file=sys.stderr)
        return 2
    try:
        return HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"liftpd {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (LiftPDError, OSError) as exc:
        print(f"liftpd {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
