"""Command-line entry points: synth / train / eval / infer / bench.

`--threads` must take effect before numpy initializes its thread pools,
so everything heavier than argparse is imported inside the command
handlers, after the environment variables are set.

Exit codes: 0 success, 2 configuration or validation error, 3 data or
format error, 4 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ConfigError, DataError, NumericError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _read_config(path) -> dict:
    from . import formats

    return formats.load_config(path) if path else {}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# handlers


def cmd_synth(args) -> int:
    from dataclasses import replace

    from . import synthvid

    spec = synthvid.SynthSpec.from_config(_read_config(args.config))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    records = synthvid.generate_dataset(spec, args.out)

    splits = {"train": 0, "test": 0}
    actors = 0
    for rec in records:
        splits[rec["split"]] += 1
        actors += len(rec["labels"])
    print(f"wrote {len(records)} clips ({splits['train']} train / "
          f"{splits['test']} test), {actors} actor tracks, "
          f"classes: {', '.join(spec.classes)}")
    print(f"dataset at {args.out}")
    return 0


def cmd_train(args) -> int:
    from dataclasses import replace

    from . import figures, formats, model, synthvid, trainer

    cfg = _read_config(args.config)
    classes, _ = synthvid.load_dataset(args.data)
    names = None if "model.classes" in cfg else classes
    model_cfg = model.ModelConfig.from_config(cfg, class_names=names)
    train_cfg = trainer.TrainConfig.from_config(cfg)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    out = _out_dir(args)

    def progress(epoch, report):
        print(f"epoch {epoch}: test mAP {report.mean_ap:.4f}", flush=True)

    result = trainer.train(args.data, model_cfg, train_cfg, progress=progress)

    result.detector.save(out / "model.ckpt")
    formats.write_records(
        out / "train_log.tsv", "trainlog", trainer.LOG_COLUMNS,
        [tuple(rec[k] for k in trainer.LOG_COLUMNS)
         for rec in result.log_records],
    )
    figures.save_loss_curve(out / "loss_curve.png", result.log_records)
    print(f"best epoch {result.best_epoch} (test mAP {result.best_map:.4f}); "
          f"checkpoint, log, and loss curve in {out}")
    return 0


def _metrics_rows(report, class_names) -> list:
    rows = [("map", report.mean_ap)]
    for c, name in enumerate(class_names, start=1):
        rows.append((f"ap.{name}", report.per_class_ap.get(c)))
        rows.append((f"gt.{name}", report.gt_counts.get(c, 0)))
    for i, name in enumerate(class_names):
        for j in range(len(class_names) + 1):
            pred = class_names[j] if j < len(class_names) else "missed"
            rows.append((f"confusion.{name}.{pred}", int(report.confusion[i, j])))
    if report.fall is not None:
        f = report.fall
        rows.extend([("fall.tp", f.tp), ("fall.tn", f.tn), ("fall.fp", f.fp),
                     ("fall.fn", f.fn), ("fall.sensitivity", f.sensitivity),
                     ("fall.specificity", f.specificity),
                     ("fall.accuracy", f.accuracy)])
    return rows


def cmd_eval(args) -> int:
    from . import figures, formats, model, trainer

    detector = model.Detector.load(args.ckpt)
    report = trainer.evaluate(args.data, detector, split=args.split,
                              score_thresh=args.score_thresh,
                              iou_thresh=args.iou_thresh)
    out = _out_dir(args)
    names = detector.cfg.class_names
    formats.write_records(out / "metrics.tsv", "metrics", ("key", "value"),
                          _metrics_rows(report, names))
    figures.save_pr_curves(out / "pr_curves.png", report, names)
    figures.save_confusion_matrix(out / "confusion_matrix.png",
                                  report.confusion, names)

    for c, name in enumerate(names, start=1):
        ap = report.per_class_ap.get(c)
        shown = "    -" if ap is None else f"{ap:.4f}"
        print(f"AP {name:<12} {shown}  ({report.gt_counts.get(c, 0)} gt)")
    print(f"mAP@{args.iou_thresh:g} {report.mean_ap:.4f} on split "
          f"{args.split!r}")
    if report.fall is not None:
        f = report.fall

        def pct(v):
            return "-" if v is None else f"{v:.2f}%"

        print(f"fall screening: sensitivity {pct(f.sensitivity)}, "
              f"specificity {pct(f.specificity)}, accuracy {pct(f.accuracy)}")
    print(f"report in {out}")
    return 0


def cmd_infer(args) -> int:
    from . import figures, formats, model, synthvid

    detector = model.Detector.load(args.ckpt)
    cfg = detector.cfg
    frames_u8 = formats.load_video(args.data)
    idx = synthvid.sample_frames(frames_u8.shape[0], cfg.num_frames, "infer")
    picked, (sx, sy) = synthvid.resize_frames(
        frames_u8[idx], (cfg.image_height, cfg.image_width))
    detections = detector.detect(formats.frames_to_float(picked),
                                 score_thresh=args.score_thresh,
                                 nms_iou=args.iou_thresh)

    rows = []
    for f, dets in enumerate(detections):
        for d in dets:
            x1, y1, x2, y2 = d.box
            rows.append((int(idx[f]), d.class_id, cfg.class_names[d.class_id - 1],
                         d.score, x1 / sx, y1 / sy, x2 / sx, y2 / sy))
    out = _out_dir(args)
    formats.write_records(
        out / "detections.tsv", "detections",
        ("frame", "class_id", "class", "score", "x1", "y1", "x2", "y2"), rows)
    if args.dump_frames:
        annotated = figures.burn_boxes(picked, detections)
        formats.save_video(out / "annotated.srvf", annotated)
    print(f"{len(rows)} detections over {cfg.num_frames} sampled frames "
          f"-> {out / 'detections.tsv'}")
    return 0


def cmd_bench(args) -> int:
    from . import bench, figures, formats, model

    detector = model.Detector.load(args.ckpt)
    report = bench.run_bench(detector, clips=args.clips, warmup=args.warmup,
                             seed=args.seed if args.seed is not None else 0)
    out = _out_dir(args)
    formats.write_records(out / "bench.tsv", "bench", ("key", "value"),
                          bench.report_rows(report))
    figures.save_stage_latency(out / "stage_latency.png",
                               report.stage_seconds, report.clips)
    print(f"{report.fps:.2f} frames/s over {report.clips} clips "
          f"({report.num_frames} frames each, {report.warmup} warmup), "
          f"{report.params} params, "
          f"peak rss {report.peak_rss_bytes / 2**20:.1f} MiB")
    print(f"report in {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftdet",
        description="Temporal-shift action detector: synthesize data, "
                    "train, evaluate, run, and benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=None,
                       help="cap math-library threads (default: all cores)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train a detector on a dataset")
    common(p)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True,
                   help="output directory (checkpoint, log, loss curve)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True,
                   help="output directory (metrics, figures)")
    p.add_argument("--split", default="test", help="dataset split (default test)")
    p.add_argument("--score-thresh", type=float, default=0.05)
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint on one clip file")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="clip file (SRVF)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--score-thresh", type=float, default=0.5)
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--dump-frames", action="store_true",
                   help="also write sampled frames with boxes burned in")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("bench", help="measure inference throughput")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clips", type=int, default=20, help="timed clips")
    p.add_argument("--warmup", type=int, default=3, help="untimed warmup clips")
    p.set_defaults(handler=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be at least 1", file=sys.stderr)
            return EXIT_CONFIG
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
