#!/usr/bin/env python3
"""End-to-end ablation: synthesize a long-tail dataset, then run the 8-row
toggle table (Baseline ... +A+B+C) with a shared seed."""

import argparse
import json
import sys
import tempfile

from deskdet.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--train-images", type=int, default=64)
    parser.add_argument("--iterations", type=int, default=500)
    parser.add_argument("--dataset", default=None,
                        help="existing dataset dir (skips synthesis)")
    args = parser.parse_args()

    config = {
        "model": {"seed": args.seed},
        "optimizer": {"iterations": args.iterations},
        "scene": {
            # long-tail profile: two classes dominate, the rest trail off
            "class_frequencies": [0.40, 0.20, 0.15, 0.10, 0.08, 0.05, 0.02],
            "seed": args.seed,
        },
        "train_images": args.train_images,
        "output_dir": args.out,
    }
    if args.dataset:
        config["dataset_dir"] = args.dataset
    else:
        config["dataset_dir"] = f"{args.out}/dataset"

    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(config, fh)
        config_path = fh.name

    if not args.dataset:
        code = cli_main(["synth", "--config", config_path])
        if code != 0:
            return code
    return cli_main(["ablate", "--config", config_path])


if __name__ == "__main__":
    sys.exit(main())
