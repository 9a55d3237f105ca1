#!/usr/bin/env python3
"""Overfit sanity run: synthesize a small dataset, train on it, evaluate on
the same images.  A healthy setup reaches mAP50 >= 0.90 well inside the
default 500 iterations."""

import argparse
import json
import sys
import time

from deskdet.config import RunConfig
from deskdet.data import export_dataset
from deskdet.train import evaluate_model, train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/overfit", help="output directory")
    parser.add_argument("--images", type=int, default=32)
    parser.add_argument("--iterations", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = RunConfig()
    cfg.model.seed = args.seed
    cfg.scene.seed = args.seed
    cfg.train_images = args.images
    cfg.optimizer.iterations = args.iterations
    cfg.output_dir = args.out

    data_root = f"{args.out}/dataset/train"
    export_dataset(cfg.scene, args.images, data_root)
    t0 = time.time()
    model, breakdown = train(cfg, data_root, args.out)
    report = evaluate_model(model, data_root)
    print(json.dumps({
        "final_loss": breakdown.total,
        "map50": report.map50,
        "map50_95": report.map50_95,
        "precision": report.precision,
        "recall": report.recall,
        "seconds": round(time.time() - t0, 1),
    }, indent=2))
    return 0 if report.map50 >= 0.90 else 1


if __name__ == "__main__":
    sys.exit(main())
