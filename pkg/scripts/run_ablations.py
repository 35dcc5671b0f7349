#!/usr/bin/env python3
"""Train the full model and its structural ablations on one synthetic dataset.

Generates a desk-scale dataset, trains each variant with identical
settings, and prints the segment-level test metrics side by side.

    python scripts/run_ablations.py --out /tmp/ablations --seed 0 --epochs 60
"""

import argparse
import json
import sys
from pathlib import Path

from avparse.cli import main as avparse_main

VARIANTS = {
    "full": [],
    "no-sa": ["--ablate", "sa"],
    "no-cma": ["--ablate", "cma"],
    "cma-audio-only": ["--cma-audio-only"],
    "cma-visual-only": ["--cma-visual-only"],
    "han-only": ["--ablate", "sa", "--ablate", "cma"],
}


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--seed", default="0")
    parser.add_argument("--epochs", default=None)
    args = parser.parse_args(argv)

    data_dir = args.out / "data"
    if avparse_main(["gen-data", "--out", str(data_dir), "--seed", args.seed]) != 0:
        return 1

    rows = []
    for name, flags in VARIANTS.items():
        run_dir = args.out / name
        train_args = ["train", "--data", str(data_dir), "--out", str(run_dir),
                      "--seed", args.seed, *flags]
        if args.epochs is not None:
            train_args += ["--epochs", args.epochs]
        if avparse_main(train_args) != 0:
            return 1
        eval_dir = args.out / f"{name}-eval"
        eval_args = ["eval", "--data", str(data_dir), "--checkpoint",
                     str(run_dir / "checkpoint.ckpt"), "--split", "test",
                     "--out", str(eval_dir), "--seed", args.seed, *flags]
        if avparse_main(eval_args) != 0:
            return 1
        report = json.loads((eval_dir / "report.json").read_text())
        rows.append((name, report["segment"]))

    print()
    print(f"{'variant':<16}{'Audio':>8}{'Visual':>8}{'AV':>8}{'Ty@AV':>8}{'Ev@AV':>8}")
    for name, seg in rows:
        cells = "".join(
            f"{100.0 * seg[k]:>8.1f}" for k in ("audio", "visual", "av", "ty_at_av", "ev_at_av")
        )
        print(f"{name:<16}{cells}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
