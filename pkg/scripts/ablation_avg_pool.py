#!/usr/bin/env python3
"""Run the same cross-validation with and without coarse-grid average
pooling and print the two reports side by side."""

import argparse
import sys
import tempfile
from pathlib import Path

from mgnet3d.cli import main as cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--subjects-per-class", type=int, default=20)
    parser.add_argument("--size", type=int, default=16)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--learning-rate", type=float, default=0.1)
    parser.add_argument("--seed-data", type=int, default=7)
    parser.add_argument("--seed-model", type=int, default=0)
    parser.add_argument("--seed-train", type=int, default=0)
    parser.add_argument("--seed-split", type=int, default=11)
    args = parser.parse_args()

    work = args.out or Path(tempfile.mkdtemp(prefix="mgnet3d_ablation_"))
    work.mkdir(parents=True, exist_ok=True)
    data_dir = work / "data"

    code = cli([
        "synth", "--out", str(data_dir),
        "--subjects-per-class", str(args.subjects_per_class),
        "--scans-per-subject", "2", "--size", str(args.size),
        "--effect-size", "1.0", "--noise-std", "0.1",
        "--seed-data", str(args.seed_data),
    ])
    if code != 0:
        return code

    cfg = work / "reduced.cfg"
    cfg.write_text(
        "num_grids=3\nsmoothing_iters=2\nfeature_channels=16\ndata_channels=16\n"
        f"learning_rate={args.learning_rate}\nbatch_size=2\n"
        f"epochs={args.epochs}\nlog_every=0\n"
    )

    common = [
        "cv", "--manifest", str(data_dir / "manifest.csv"), "--k", "2",
        "--config", str(cfg),
        "--seed-model", str(args.seed_model),
        "--seed-train", str(args.seed_train),
        "--seed-split", str(args.seed_split),
    ]
    for label, extra in (("with average pooling", []),
                         ("without average pooling", ["--no-avg-pool"])):
        print(f"=== {label} ===")
        out_dir = work / label.replace(" ", "_")
        code = cli(common + ["--out", str(out_dir)] + extra)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
