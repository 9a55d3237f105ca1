"""Command-line surface: synth | train | eval | ablate.

Exit codes: 0 ok, 2 config error, 3 I/O or checkpoint error, 4 runtime
failure.  Diagnostics go to stderr; machine-readable output to stdout.
"""

import argparse
import csv
import dataclasses
import json
import os
import sys

from .config import ConfigError, RunConfig, dump_run_config, load_run_config
from .data import CLASS_NAMES, export_dataset, write_manifest
from .model import CheckpointError, load_checkpoint
from .train import evaluate_model, train

ABLATION_ROWS = (
    ("Baseline", False, False, False),
    ("+A", True, False, False),
    ("+B", False, True, False),
    ("+C", False, False, True),
    ("+A+B", True, True, False),
    ("+A+C", True, False, True),
    ("+B+C", False, True, True),
    ("+A+B+C", True, True, True),
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_RUNTIME = 4


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = load_run_config(args.config)
    else:
        cfg = RunConfig().validate()
    if args.seed is not None:
        cfg.model.seed = args.seed
        cfg.scene = dataclasses.replace(cfg.scene, seed=args.seed)
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    dump_run_config(cfg, os.path.join(out_dir, "effective_config.json"))


def _check_class_count(cfg, dataset_root):
    manifest = os.path.join(os.path.dirname(str(dataset_root).rstrip("/")), "manifest.json")
    if os.path.exists(manifest):
        with open(manifest) as fh:
            classes = json.load(fh).get("classes", [])
        if classes and len(classes) != cfg.model.num_classes:
            raise ConfigError(
                f"dataset has {len(classes)} classes but model expects "
                f"{cfg.model.num_classes}")


def cmd_synth(args):
    cfg = _load_config(args)
    root = cfg.dataset_dir
    os.makedirs(root, exist_ok=True)
    splits = {
        "train": export_dataset(cfg.scene, cfg.train_images, os.path.join(root, "train")),
        "val": export_dataset(cfg.scene, cfg.val_images, os.path.join(root, "val"),
                              start_index=cfg.train_images),
    }
    manifest = write_manifest(root, splits)
    if args.json:
        print(json.dumps(manifest, sort_keys=True))
    else:
        print(f"wrote {cfg.train_images} train + {cfg.val_images} val images to {root}")
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args)
    out_dir = cfg.output_dir
    _echo_config(cfg, out_dir)
    dataset_root = os.path.join(cfg.dataset_dir, "train")
    if not os.path.isdir(dataset_root):
        print(f"error: dataset not found at {dataset_root}", file=sys.stderr)
        return EXIT_IO
    _check_class_count(cfg, dataset_root)
    _, breakdown = train(cfg, dataset_root, out_dir,
                         log_stream=sys.stdout if args.json else None)
    if not args.json:
        print(f"final total loss {breakdown.total:.4f}; checkpoints in {out_dir}")
    return EXIT_OK


def cmd_eval(args):
    try:
        model = load_checkpoint(args.checkpoint)
    except (CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    report = evaluate_model(model, args.dataset,
                            conf_threshold=args.conf, nms_threshold=args.nms)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_ablate(args):
    cfg = _load_config(args)
    out_dir = cfg.output_dir
    _echo_config(cfg, out_dir)
    train_root = os.path.join(cfg.dataset_dir, "train")
    if not os.path.isdir(train_root):
        print(f"error: dataset not found at {train_root}", file=sys.stderr)
        return EXIT_IO
    val_root = os.path.join(cfg.dataset_dir, "val")
    eval_root = val_root if os.path.isdir(val_root) else train_root

    rows = []
    failed = False
    for name, a, b, c in ABLATION_ROWS:
        row_cfg = load_run_config(args.config) if args.config else RunConfig().validate()
        row_cfg.model.seed = cfg.model.seed
        row_cfg.model.enable_A = a
        row_cfg.model.enable_B = b
        row_cfg.model.enable_C = c
        row_dir = os.path.join(out_dir, name.replace("+", "p"))
        try:
            model, _ = train(row_cfg, train_root, row_dir)
            report = evaluate_model(model, eval_root, cfg.conf_threshold, cfg.nms_threshold)
            rows.append((name, report.precision, report.recall,
                         report.map50, report.map50_95))
        except Exception as exc:  # noqa: BLE001 - a row failure must not kill the table
            print(f"error: ablation row {name} failed: {exc}", file=sys.stderr)
            rows.append((name, None, None, None, None))
            failed = True

    header = ("Model", "P", "R", "mAP50", "mAP50-95")
    print("{:<10} {:>8} {:>8} {:>8} {:>8}".format(*header))
    for name, p, r, m50, m5095 in rows:
        if p is None:
            print(f"{name:<10} {'failed':>8} {'failed':>8} {'failed':>8} {'failed':>8}")
        else:
            print(f"{name:<10} {p:>8.3f} {r:>8.3f} {m50:>8.3f} {m5095:>8.3f}")

    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name, p, r, m50, m5095 in rows:
            if p is None:
                writer.writerow([name, "failed", "failed", "failed", "failed"])
            else:
                writer.writerow([name, f"{p:.3f}", f"{r:.3f}", f"{m50:.3f}", f"{m5095:.3f}"])
    return EXIT_RUNTIME if failed else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="deskdet")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run config JSON (every field has a default)")
        p.add_argument("--seed", type=int, help="override model and scene seeds")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--json", action="store_true", help="machine-readable stdout")

    common(sub.add_parser("synth", help="write a synthetic train/val dataset"))
    common(sub.add_parser("train", help="train a model on the configured dataset"))
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p_eval)
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--conf", type=float, default=0.25)
    p_eval.add_argument("--nms", type=float, default=0.60)
    common(sub.add_parser("ablate", help="run the 8-row toggle ablation"))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"synth": cmd_synth, "train": cmd_train,
               "eval": cmd_eval, "ablate": cmd_ablate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
