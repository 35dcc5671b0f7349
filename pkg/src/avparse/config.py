"""Run configuration: defaults, config-file parsing, env and CLI overrides.

Keys are dotted names with documented defaults. Precedence, lowest to
highest: built-in default, config file (``key = value`` lines, ``#``
comments), environment (``AVP_`` prefix, dots become underscores, upper
case — e.g. ``AVP_SA_AXIS_MODE``), command-line flag. The effective
configuration is echoed into every run's output directory as
``effective-config.txt``, which is itself a loadable config file.
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import UsageError
from .model import ModelConfig
from .synth import DatasetConfig
from .train import TrainConfig

ENV_PREFIX = "AVP_"

# key -> (default, type); bool values accept true/false/1/0/yes/no
DEFAULTS: dict[str, tuple] = {
    "seed": (0, int),
    "data.videos_train": (200, int),
    "data.videos_val": (50, int),
    "data.videos_test": (50, int),
    "data.segments": (10, int),
    "data.classes": (4, int),
    "data.audio_dim": (16, int),
    "data.visual_dim": (32, int),
    "data.separability": (2.0, float),
    "data.asynchrony": (0.15, float),
    "data.events_min": (1, int),
    "data.events_max": (3, int),
    "model.dim": (64, int),
    "model.heads": (1, int),
    "model.precision": (64, int),
    "model.retrieval_gain": (80.0, float),
    "sa.axis_mode": ("per-segment", str),
    "sa.reduction_ratio": (4, int),
    "sa.share_han_params": (False, bool),
    "cma.share_streams": (False, bool),
    "train.epochs": (60, int),
    "train.batch_size": (16, int),
    "train.lr": (1e-3, float),
    "train.optimizer": ("adam", str),
    "train.cosine_lr": (True, bool),
    "train.attention_decay": (0.3, float),
    "train.clamp_eps": (1e-7, float),
    "train.aux_modality_loss": (True, bool),
    "train.permute_labels": (False, bool),
    "train.ablate_sa": (False, bool),
    "train.ablate_cma": (False, bool),
    "train.cma_mode": ("both", str),
    "eval.threshold": (0.5, float),
    "eval.iou": (0.5, float),
    "eval.workers": (1, int),
}

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def coerce(key: str, raw) -> object:
    if key not in DEFAULTS:
        raise UsageError(f"unknown config key '{key}'")
    _, typ = DEFAULTS[key]
    if isinstance(raw, str):
        raw = raw.strip()
        if typ is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise UsageError(f"config key '{key}': expected a boolean, got '{raw}'")
        try:
            return typ(raw)
        except ValueError:
            raise UsageError(f"config key '{key}': cannot parse '{raw}' as {typ.__name__}") from None
    if typ is bool:
        return bool(raw)
    return typ(raw)


def parse_config_file(path) -> dict[str, object]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        out[key.strip()] = coerce(key.strip(), value)
    return out


def env_overrides(environ=None) -> dict[str, object]:
    environ = os.environ if environ is None else environ
    keys_by_env = {ENV_PREFIX + k.upper().replace(".", "_"): k for k in DEFAULTS}
    out = {}
    for env_name, raw in environ.items():
        if env_name in keys_by_env:
            out[keys_by_env[env_name]] = coerce(keys_by_env[env_name], raw)
    return out


def effective_config(
    config_file=None, cli_overrides: dict[str, object] | None = None, environ=None
) -> dict[str, object]:
    cfg = {k: default for k, (default, _) in DEFAULTS.items()}
    if config_file is not None:
        cfg.update(parse_config_file(config_file))
    cfg.update(env_overrides(environ))
    for key, value in (cli_overrides or {}).items():
        if value is not None:
            cfg[key] = coerce(key, value)
    return cfg


def echo_config(cfg: dict[str, object], path) -> None:
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_config(cfg: dict[str, object]) -> str:
    return "\n".join(f"{k} = {cfg[k]}" for k in sorted(cfg))


# ----- materialization into typed configs -----


def dataset_config(cfg: dict[str, object]) -> DatasetConfig:
    return DatasetConfig(
        train_videos=cfg["data.videos_train"],
        val_videos=cfg["data.videos_val"],
        test_videos=cfg["data.videos_test"],
        segments=cfg["data.segments"],
        classes=cfg["data.classes"],
        audio_dim=cfg["data.audio_dim"],
        visual_dim=cfg["data.visual_dim"],
        separability=cfg["data.separability"],
        asynchrony=cfg["data.asynchrony"],
        events_min=cfg["data.events_min"],
        events_max=cfg["data.events_max"],
        seed=cfg["seed"],
    )


def model_config(cfg: dict[str, object], segments: int, audio_dim: int, visual_dim: int,
                 classes: int) -> ModelConfig:
    return ModelConfig(
        model_dim=cfg["model.dim"],
        heads=cfg["model.heads"],
        retrieval_gain=cfg["model.retrieval_gain"],
        audio_dim=audio_dim,
        visual_dim=visual_dim,
        classes=classes,
        segments=segments,
        sa_axis_mode=cfg["sa.axis_mode"],
        sa_reduction_ratio=cfg["sa.reduction_ratio"],
        sa_share_han_params=cfg["sa.share_han_params"],
        cma_share_streams=cfg["cma.share_streams"],
        ablate_sa=cfg["train.ablate_sa"],
        ablate_cma=cfg["train.ablate_cma"],
        cma_mode=cfg["train.cma_mode"],
        aux_modality_loss=cfg["train.aux_modality_loss"],
        clamp_eps=cfg["train.clamp_eps"],
        precision=cfg["model.precision"],
    )


def train_config(cfg: dict[str, object]) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        optimizer=cfg["train.optimizer"],
        seed=cfg["seed"],
        permute_labels=cfg["train.permute_labels"],
        cosine_lr=cfg["train.cosine_lr"],
        attention_decay=cfg["train.attention_decay"],
    )
