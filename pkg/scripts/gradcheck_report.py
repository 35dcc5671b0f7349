#!/usr/bin/env python3
"""Run gradient verification in both precisions and print the comparison.

    python scripts/gradcheck_report.py --seed 0
"""

import argparse
import sys

from avparse.model import Model, ModelConfig
from avparse.synth import DatasetConfig, generate
from avparse.tensor import grad_check


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    data = generate(
        DatasetConfig(
            train_videos=1, val_videos=1, test_videos=1, segments=4, classes=3,
            audio_dim=6, visual_dim=7, separability=4.0, asynchrony=0.3, seed=args.seed,
        )
    )
    batch = [(v.audio, v.visual, v.weak) for v in data.train]

    results = {}
    for precision, eps in ((64, 1e-5), (32, 1e-3)):
        mc = ModelConfig(
            model_dim=8, heads=2, audio_dim=6, visual_dim=7, classes=3, segments=4,
            precision=precision, local_init=False,
        )
        model = Model(mc, seed=args.seed)
        report = grad_check(lambda: model.batch_loss(batch), model.store, eps=eps)
        results[precision] = report.max_rel_error
        print(f"{precision}-bit (eps {eps:.0e}): max relative error {report.max_rel_error:.3e}")
    if results[64] < results[32]:
        print("64-bit error is strictly smaller, as expected")
        return 0
    print("unexpected: 64-bit error not smaller than 32-bit")
    return 3


if __name__ == "__main__":
    sys.exit(run())
