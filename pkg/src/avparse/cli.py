"""Command-line surface: gen-data, train, eval, score, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure. Every command accepts ``--config FILE`` plus flag overrides and
echoes its effective configuration into the output directory, so a run
is reproducible from the echo alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import fileio, tensor
from .errors import AvparseError, DataError, UsageError
from .head import PredictionTensor
from .metrics import DenseAnnotation, full_report
from .model import Model, ModelConfig
from .params import ParamStore
from .synth import generate
from .tensor import grad_check
from .train import evaluate_split, train_model


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="config file (key = value lines)")
    p.add_argument("--seed", default=None, help="master seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avparse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset", parents=[])
    _add_common(g)
    g.add_argument("--out", type=Path, required=True)
    for flag, key in [
        ("--train-videos", "data.videos_train"),
        ("--val-videos", "data.videos_val"),
        ("--test-videos", "data.videos_test"),
        ("--segments", "data.segments"),
        ("--classes", "data.classes"),
        ("--audio-dim", "data.audio_dim"),
        ("--visual-dim", "data.visual_dim"),
        ("--separability", "data.separability"),
        ("--asynchrony", "data.asynchrony"),
        ("--events-min", "data.events_min"),
        ("--events-max", "data.events_max"),
    ]:
        g.add_argument(flag, dest=key, default=None)

    t = sub.add_parser("train", help="train on a generated dataset")
    _add_common(t)
    t.add_argument("--data", type=Path, required=True, help="dataset directory (manifests inside)")
    t.add_argument("--out", type=Path, required=True)
    for flag, key in [
        ("--dim", "model.dim"),
        ("--heads", "model.heads"),
        ("--precision", "model.precision"),
        ("--retrieval-gain", "model.retrieval_gain"),
        ("--sa-axis-mode", "sa.axis_mode"),
        ("--sa-reduction", "sa.reduction_ratio"),
        ("--epochs", "train.epochs"),
        ("--batch-size", "train.batch_size"),
        ("--lr", "train.lr"),
        ("--optimizer", "train.optimizer"),
        ("--cosine-lr", "train.cosine_lr"),
        ("--attention-decay", "train.attention_decay"),
        ("--clamp-eps", "train.clamp_eps"),
        ("--threshold", "eval.threshold"),
        ("--iou", "eval.iou"),
    ]:
        t.add_argument(flag, dest=key, default=None)
    t.add_argument("--aux-loss", dest="train.aux_modality_loss", default=None,
                   help="true/false: per-modality auxiliary losses (default true)")
    for flag, key in [
        ("--sa-share-han", "sa.share_han_params"),
        ("--cma-share-streams", "cma.share_streams"),
        ("--permute-labels", "train.permute_labels"),
    ]:
        t.add_argument(flag, dest=key, action="store_true", default=None)
    t.add_argument("--ablate", action="append", choices=["sa", "cma"], default=None)
    t.add_argument("--cma-audio-only", action="store_true")
    t.add_argument("--cma-visual-only", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(e)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--out", type=Path, required=True)
    for flag, key in [
        ("--dim", "model.dim"),
        ("--heads", "model.heads"),
        ("--precision", "model.precision"),
        ("--retrieval-gain", "model.retrieval_gain"),
        ("--sa-axis-mode", "sa.axis_mode"),
        ("--sa-reduction", "sa.reduction_ratio"),
        ("--threshold", "eval.threshold"),
        ("--iou", "eval.iou"),
        ("--eval-workers", "eval.workers"),
    ]:
        e.add_argument(flag, dest=key, default=None)
    for flag, key in [
        ("--sa-share-han", "sa.share_han_params"),
        ("--cma-share-streams", "cma.share_streams"),
    ]:
        e.add_argument(flag, dest=key, action="store_true", default=None)
    e.add_argument("--ablate", action="append", choices=["sa", "cma"], default=None)
    e.add_argument("--cma-audio-only", action="store_true")
    e.add_argument("--cma-visual-only", action="store_true")

    s = sub.add_parser("score", help="score a prediction file against annotations")
    _add_common(s)
    s.add_argument("--pred", type=Path, required=True, help="prediction container (.pred)")
    s.add_argument("--truth", type=Path, required=True, help="split manifest with dense files")
    s.add_argument("--out", type=Path, default=None)
    s.add_argument("--iou", dest="eval.iou", default=None)

    c = sub.add_parser("gradcheck", help="verify tape gradients on a tiny full model")
    _add_common(c)
    c.add_argument("--eps", type=float, default=None, help="finite-difference step")
    c.add_argument("--precision", dest="model.precision", default=None, choices=["32", "64"])
    c.add_argument("--heads", dest="model.heads", default=None)
    c.add_argument("--threshold", type=float, default=1e-4, help="pass/fail bound")
    c.add_argument("--break-gradient", action="store_true",
                   help="debug: corrupt one backward rule so the check must fail")

    return parser


def _collect_overrides(args: argparse.Namespace) -> dict[str, object]:
    overrides = {}
    for key, value in vars(args).items():
        if key in cfgmod.DEFAULTS and value is not None:
            overrides[key] = value
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for name in getattr(args, "ablate", None) or []:
        overrides[f"train.ablate_{name}"] = True
    if getattr(args, "cma_audio_only", False) and getattr(args, "cma_visual_only", False):
        raise UsageError("--cma-audio-only and --cma-visual-only are mutually exclusive")
    if getattr(args, "cma_audio_only", False):
        overrides["train.cma_mode"] = "audio-only"
    if getattr(args, "cma_visual_only", False):
        overrides["train.cma_mode"] = "visual-only"
    return overrides


def _effective(args: argparse.Namespace) -> dict[str, object]:
    return cfgmod.effective_config(args.config, _collect_overrides(args))


def _echo(cfg: dict[str, object], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfgmod.echo_config(cfg, out_dir / "effective-config.txt")


def _write_report(report, out_dir: Path, stem: str) -> None:
    (out_dir / f"{stem}.txt").write_text(report.render() + "\n", encoding="utf-8")
    (out_dir / f"{stem}.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_model_for_data(cfg: dict[str, object], videos) -> Model:
    sample = videos[0]
    mc = cfgmod.model_config(
        cfg,
        segments=sample.audio.shape[0],
        audio_dim=sample.audio.shape[1],
        visual_dim=sample.visual.shape[1],
        classes=sample.weak.shape[0],
    )
    return Model(mc, seed=cfg["seed"])


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _effective(args)
    _echo(cfg, args.out)
    dataset = generate(cfgmod.dataset_config(cfg))
    fileio.save_dataset(dataset, args.out)
    total = 0
    for split in ("train", "val", "test"):
        videos = fileio.load_split(args.out / f"{split}.txt")
        expected = len(dataset.split(split))
        if len(videos) != expected:
            raise DataError(f"{split} manifest lists {len(videos)} videos, expected {expected}")
        for v in videos:
            dense_or = (v.dense.audio.any(axis=0) | v.dense.visual.any(axis=0)).astype(np.uint8)
            if not np.array_equal(v.weak, dense_or):
                raise DataError(f"{v.id}: weak label is not the OR of its dense annotation")
            if cfg["data.asynchrony"] == 0.0 and not np.array_equal(
                v.dense.audio, v.dense.visual
            ):
                raise DataError(f"{v.id}: zero asynchrony but modalities differ")
        total += len(videos)
    print(
        f"wrote {total} videos "
        f"(train {cfg['data.videos_train']} / val {cfg['data.videos_val']} "
        f"/ test {cfg['data.videos_test']}) to {args.out}"
    )
    print(f"validated {total} videos")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _effective(args)
    _echo(cfg, args.out)
    train_videos = fileio.load_split(args.data / "train.txt")
    val_videos = fileio.load_split(args.data / "val.txt")
    model = _load_model_for_data(cfg, train_videos)
    tc = cfgmod.train_config(cfg)
    with open(args.out / "train.log", "w", encoding="utf-8") as log_fh:
        losses = train_model(model, train_videos, tc, log_fh=log_fh)
    model.store.save(args.out / "checkpoint.ckpt")
    report, _ = evaluate_split(
        model,
        val_videos,
        threshold=cfg["eval.threshold"],
        iou_threshold=cfg["eval.iou"],
    )
    _write_report(report, args.out, "val-report")
    if losses:
        print(f"trained {tc.epochs} epochs, loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    else:
        print("trained 0 epochs, checkpoint is the seeded initialization")
    print(report.render())
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _effective(args)
    _echo(cfg, args.out)
    videos = fileio.load_split(args.data / f"{args.split}.txt")
    model = _load_model_for_data(cfg, videos)
    loaded = ParamStore.load(args.checkpoint)
    if loaded.schema_hash() != model.store.schema_hash():
        raise DataError("checkpoint schema does not match the model configuration")
    model.store = loaded
    report, preds = evaluate_split(
        model,
        videos,
        threshold=cfg["eval.threshold"],
        iou_threshold=cfg["eval.iou"],
        workers=cfg["eval.workers"],
    )
    fileio.export_predictions(
        args.out / "predictions.pred", preds, threshold=cfg["eval.threshold"]
    )
    _write_report(report, args.out, "report")
    print(report.render())
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _effective(args)
    raw = fileio.read_predictions(args.pred)
    preds = {
        vid: PredictionTensor(
            p_audio=a.astype(np.float64),
            p_visual=v.astype(np.float64),
            p_av=(a & v).astype(np.float64),
            p_video=np.zeros(a.shape[1]),
        )
        for vid, (a, v) in raw.items()
    }
    gts: dict[str, DenseAnnotation] = {}
    for vid, files in fileio.read_manifest(args.truth):
        gts[vid] = fileio.read_dense(files["dense"])
    report = full_report(preds, gts, threshold=0.5, iou_threshold=cfg["eval.iou"])
    if args.out is not None:
        _echo(cfg, args.out)
        _write_report(report, args.out, "report")
    print(report.render())
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = _effective(args)
    precision = int(cfg["model.precision"])
    # the tiny verification model is pinned at 2 heads unless --heads is given
    heads = 2 if getattr(args, "model.heads") is None else int(cfg["model.heads"])
    eps = args.eps if args.eps is not None else (1e-5 if precision == 64 else 1e-3)

    from .synth import DatasetConfig

    data_cfg = DatasetConfig(
        train_videos=1, val_videos=1, test_videos=1, segments=4, classes=3,
        audio_dim=6, visual_dim=7, separability=4.0, asynchrony=0.3,
        seed=int(cfg["seed"]),
    )
    videos = generate(data_cfg).train
    mc = ModelConfig(
        model_dim=8, heads=heads, audio_dim=6, visual_dim=7, classes=3, segments=4,
        sa_axis_mode=cfg["sa.axis_mode"], sa_reduction_ratio=cfg["sa.reduction_ratio"],
        precision=precision, local_init=False,
    )
    model = Model(mc, seed=int(cfg["seed"]))
    batch = [(v.audio, v.visual, v.weak) for v in videos]

    tensor.set_break_gradient(bool(args.break_gradient))
    try:
        report = grad_check(lambda: model.batch_loss(batch), model.store, eps=eps)
    finally:
        tensor.set_break_gradient(False)
    print(report.summary())
    if report.passed(args.threshold):
        print(f"PASS: max relative error {report.max_rel_error:.3e} < {args.threshold:.1e}")
        return 0
    print(f"FAIL: max relative error {report.max_rel_error:.3e} >= {args.threshold:.1e}")
    return 3


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except AvparseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
