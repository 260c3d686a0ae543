"""Command-line driver: project, train, eval, gradcheck, stats.

Results go to stdout; progress and diagnostics go to stderr. Every failure
exits nonzero with a one-line message naming the offending file or field.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from .autodiff.checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, apply_overrides, dump_run_config, load_run_config, parse_run_config
from .kitti import LabelRemap, PointCloud, TruncatedFileError, read_labeled_scan, read_scan

EXIT_ERROR = 1
EXIT_USAGE = 2


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------
def add_config_args(p: argparse.ArgumentParser, synthetic=True):
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--toy", action="store_true", help="start from the desk-scale toy preset")
    if synthetic:
        p.add_argument("--synthetic", action="store_true", help="use procedurally generated scenes")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dot-path override, e.g. --set optimizer.head.lr=0.002 (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    if base is None:
        base = RunConfig.toy(synthetic=False) if args.toy else RunConfig()
    cfg = load_run_config(args.config, base) if args.config else base
    if getattr(args, "synthetic", False):
        cfg = apply_overrides(cfg, ["data.synthetic=true"])
    cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg = apply_overrides(cfg, [f"seed={args.seed}"])
    return cfg


# ---------------------------------------------------------------------------
# project
# ---------------------------------------------------------------------------
def _load_cloud(args, cfg) -> PointCloud:
    if args.scan == "synthetic":
        from .synthetic import SyntheticDataset
        return SyntheticDataset(args.index + 1, cfg.projection, seed=cfg.seed)[args.index]
    if args.labels:
        return read_labeled_scan(args.scan, args.labels, LabelRemap.default())
    return read_scan(args.scan)


def cmd_project(args) -> int:
    from .projection import rasterize
    from .viz import labels_to_rgb, range_to_rgb, write_ppm
    cfg = resolve_config(args)
    pc = _load_cloud(args, cfg)
    img = rasterize(pc, cfg.projection)
    prefix = Path(args.out)
    if prefix.parent and not prefix.parent.exists():
        prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []
    path = prefix.with_name(prefix.name + "_range.ppm")
    write_ppm(path, range_to_rgb(img.range, img.valid))
    written.append(path)
    if img.labels is not None:
        path = prefix.with_name(prefix.name + "_labels.ppm")
        write_ppm(path, labels_to_rgb(img.labels, img.valid))
        written.append(path)
    path = prefix.with_name(prefix.name + "_raster.npz")
    dump = {"channels": img.channels, "pixel_point": img.pixel_point}
    if img.labels is not None:
        dump["labels"] = img.labels
    np.savez(path, **dump)
    written.append(path)
    for p in written:
        log(f"wrote {p}")
    n_valid = int(img.valid.sum())
    H, W = img.shape
    stats = {"points": len(pc), "pixels": H * W, "valid_pixels": n_valid, "occupancy": n_valid / (H * W),
             "points_per_valid_pixel": (len(pc) / n_valid) if n_valid else 0.0}
    print(json.dumps(stats))
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------
def cmd_train(args) -> int:
    from .engine import Trainer
    cfg = resolve_config(args, RunConfig.toy(synthetic=args.synthetic) if args.toy else None)
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(dump_run_config(cfg), encoding="utf-8")
    trainer = Trainer(cfg, out_dir=out_dir)
    if args.resume:
        meta = trainer.load(args.resume)
        log(f"resumed from {args.resume} at step {meta['step']}")
    log(f"training {trainer.total_steps} steps ({trainer.spe}/epoch), warmup {trainer.warmup_steps}, "
        f"output {out_dir}")
    t0 = time.perf_counter()

    def progress(tr, rec):
        if not args.quiet and (tr.step % cfg.log_every == 0 or tr.step == tr.total_steps):
            log(f"step {rec['step']:5d} epoch {rec['epoch']:3d} loss {rec['total']:.4f} "
                f"lr {rec['lr_backbone']:.2e}/{rec['lr_head']:.2e} ({time.perf_counter() - t0:.1f}s)")

    trainer.fit(max_steps=args.max_steps, callback=progress)
    if trainer.step % trainer.spe:
        trainer.save(out_dir / "last.ckpt")
    log(f"done at step {trainer.step}; checkpoint {out_dir / 'last.ckpt'}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------
def _checkpoint_config(path) -> RunConfig:
    _, meta = load_checkpoint(path)
    if "config" not in meta:
        raise CliError(f"{path}: checkpoint carries no config; pass --config")
    return parse_run_config(yaml.safe_dump(meta["config"]), f"{path}[config]")


def cmd_eval(args) -> int:
    from .engine import build_dataset, evaluate_points, gt_predictor, load_model_weights, model_predictor
    from .engine import random_predictor
    from .metrics import format_table, to_json
    from .model import RangeSAM

    if args.checkpoint is None and args.predictor == "model":
        raise CliError("eval needs --checkpoint (or --predictor gt/random)")
    base = None
    if args.checkpoint and not args.config and not args.toy:
        base = _checkpoint_config(args.checkpoint)
    elif args.toy:
        base = RunConfig.toy(synthetic=args.synthetic)
    cfg = resolve_config(args, base)
    ds = build_dataset(cfg, args.split or cfg.data.eval_split)
    if args.predictor == "model":
        tensors, _ = load_checkpoint(args.checkpoint)
        model = RangeSAM(cfg.model, seed=cfg.seed)
        load_model_weights(model, tensors, args.checkpoint)
        predict = model_predictor(model, cfg)
    elif args.predictor == "gt":
        predict = gt_predictor
    else:
        predict = random_predictor(range(cfg.model.num_classes), seed=cfg.seed)
    n = len(ds) if args.limit is None else min(args.limit, len(ds))
    log(f"evaluating {n} scans with predictor={args.predictor}, k={args.k}")
    cm = evaluate_points(ds, cfg, predict, k=args.k, window=args.window, limit=args.limit)
    res = cm.miou()
    print(format_table(res, label=args.label))
    if args.metrics:
        Path(args.metrics).write_text(to_json(res, cm, predictor=args.predictor, scans=n, k=args.k) + "\n",
                                      encoding="utf-8")
        log(f"wrote {args.metrics}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------
def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite
    dtype = np.float64 if args.float64 else np.float32
    h = args.h if args.h is not None else (1e-5 if args.float64 else 1e-2)
    tol = args.tol if args.tol is not None else (1e-4 if args.float64 else 5e-2)
    log(f"finite differences: dtype={np.dtype(dtype).name} h={h:g} tol={tol:g}")
    t0 = time.perf_counter()
    print(f"{'op':26s} {'max rel err':>12s}  status")

    def row(r):
        print(f"{r.name:26s} {r.error:12.3e}  {'ok' if r.ok else 'FAIL'}", flush=True)

    results = run_suite(h=h, tol=tol, include_model=not args.skip_model, dtype=dtype, log=row)
    failed = [r.name for r in results if not r.ok]
    log(f"{len(results) - len(failed)}/{len(results)} passed in {time.perf_counter() - t0:.1f}s")
    if failed:
        log("failed: " + ", ".join(failed))
        return EXIT_ERROR
    return 0


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------
def cmd_stats(args) -> int:
    from .model import RangeSAM, parameter_report
    cfg = resolve_config(args)
    model = RangeSAM(cfg.model, seed=cfg.seed)
    print(parameter_report(model))
    if args.show_config:
        print(dump_run_config(cfg), end="")
    if args.data:
        from .engine import build_dataset, raster_labels
        from .kitti import CLASS_NAMES
        from .losses import class_weights_from_freq, label_frequencies
        from .projection import rasterize
        ds = build_dataset(cfg, cfg.data.split)
        n = len(ds) if args.limit is None else min(args.limit, len(ds))
        counts = np.zeros(cfg.model.num_classes)
        occ = []
        for i in range(n):
            img = rasterize(ds[i], cfg.projection)
            counts += label_frequencies(raster_labels(img), cfg.model.num_classes)
            occ.append(img.valid.mean())
        w = class_weights_from_freq(counts)
        print(f"scans {n}, mean occupancy {np.mean(occ):.4f}")
        print(f"{'class':16s} {'pixels':>10s} {'weight':>8s}")
        for c in range(cfg.model.num_classes):
            print(f"{CLASS_NAMES[c]:16s} {int(counts[c]):10d} {w[c]:8.3f}")
    return 0


# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rangesam", description="Range-view LiDAR segmentation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="rasterize one scan and write PPM images plus a raw dump")
    p.add_argument("scan", help="KITTI .bin scan, or 'synthetic'")
    p.add_argument("--labels", help="matching .label file")
    p.add_argument("--index", type=int, default=0, help="scene index when scan is 'synthetic'")
    p.add_argument("--out", required=True, help="output prefix")
    add_config_args(p, synthetic=False)
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("train", help="train a model")
    add_config_args(p)
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.add_argument("--resume", help="training checkpoint to continue from")
    p.add_argument("--max-steps", type=int, help="stop after this many steps")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="point-level mIoU after k-NN back-projection")
    add_config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--predictor", choices=("model", "gt", "random"), default="model")
    p.add_argument("--split")
    p.add_argument("--limit", type=int)
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--label", default="ours", help="row label in the results table")
    p.add_argument("--metrics", help="write JSON metrics here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--float64", dest="float64", action="store_true", default=True, help="64-bit (default)")
    p.add_argument("--float32", dest="float64", action="store_false", help="32-bit, diagnostic only")
    p.add_argument("--h", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--skip-model", action="store_true", help="omit the toy end-to-end model")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("stats", help="parameter report, optional config and label statistics")
    add_config_args(p)
    p.add_argument("--show-config", action="store_true")
    p.add_argument("--data", action="store_true", help="also scan the training split for label counts")
    p.add_argument("--limit", type=int)
    p.set_defaults(fn=cmd_stats)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CliError, CheckpointError, TruncatedFileError) as e:
        log(f"rangesam {args.command}: error: {e}")
    except OSError as e:
        msg = f"{e.filename}: {e.strerror}" if e.filename and e.strerror else str(e)
        log(f"rangesam {args.command}: error: {msg}")
    except (ValueError, RuntimeError) as e:
        log(f"rangesam {args.command}: error: {e}")
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
