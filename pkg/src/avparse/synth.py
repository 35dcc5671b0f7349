"""Deterministic synthetic weakly-labeled video generation.

Every video is T one-second segments. A video carries one to three event
classes; each event occupies a contiguous span, and within the span each
segment is active in both modalities unless an asynchrony draw makes it
audible-only or visible-only there. Feature rows are the sum of the
active classes' modality prototypes (a background prototype when nothing
is active) plus isotropic gaussian noise.

Prototypes are unit-norm, so the typical inter-prototype distance is
sqrt(2). Noise is drawn with a per-modality coordinate sigma chosen so
the expected noise vector norm is sqrt(2) / separability regardless of
the feature dimension: ``separability`` then reads as the ratio of
inter-prototype distance to noise magnitude, identically for both
modalities. Everything is a pure function of (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .metrics import DenseAnnotation

_PROTO_TAG = 0x70726F74  # namespaces the prototype stream within the seed
_SPLIT_TAGS = {"train": 1, "val": 2, "test": 3}


@dataclass(frozen=True)
class DatasetConfig:
    train_videos: int = 200
    val_videos: int = 50
    test_videos: int = 50
    segments: int = 10
    classes: int = 4
    audio_dim: int = 16
    visual_dim: int = 32
    separability: float = 2.0
    asynchrony: float = 0.15
    events_min: int = 1
    events_max: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("train_videos", "val_videos", "test_videos", "segments", "classes",
                     "audio_dim", "visual_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.separability > 0:
            raise ConfigError("separability must be > 0")
        if not 0.0 <= self.asynchrony <= 1.0:
            raise ConfigError(f"asynchrony {self.asynchrony} outside [0, 1]")
        if not 1 <= self.events_min <= self.events_max:
            raise ConfigError("need 1 <= events_min <= events_max")

    def noise_sigma(self, dim: int) -> float:
        """Coordinate sigma giving a noise-vector norm of sqrt(2)/separability."""
        if math.isinf(self.separability):
            return 0.0
        return math.sqrt(2.0) / (self.separability * math.sqrt(dim))


@dataclass
class SyntheticVideo:
    id: str
    audio: np.ndarray  # T x audio_dim
    visual: np.ndarray  # T x visual_dim
    weak: np.ndarray  # C, multi-hot
    dense: DenseAnnotation


@dataclass
class Dataset:
    config: DatasetConfig
    train: list[SyntheticVideo] = field(default_factory=list)
    val: list[SyntheticVideo] = field(default_factory=list)
    test: list[SyntheticVideo] = field(default_factory=list)

    def split(self, name: str) -> list[SyntheticVideo]:
        if name not in _SPLIT_TAGS:
            raise ConfigError(f"unknown split '{name}'")
        return getattr(self, name)


def class_prototypes(cfg: DatasetConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm prototype rows per class and modality; row index C is background.

    When the feature dimension allows it the prototypes are drawn as a
    random orthonormal set (QR of a gaussian matrix), so inter-class
    geometry does not vary with the seed; otherwise they are independent
    unit vectors.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, _PROTO_TAG]))
    protos = []
    for dim in (cfg.audio_dim, cfg.visual_dim):
        raw = rng.standard_normal((dim, cfg.classes + 1))
        if cfg.classes + 1 <= dim:
            q, r = np.linalg.qr(raw)
            protos.append((q * np.sign(np.diag(r))).T.copy())
        else:
            protos.append((raw / np.linalg.norm(raw, axis=0, keepdims=True)).T.copy())
    return protos[0], protos[1]


def _render_features(
    active: np.ndarray, protos: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """active: T x C binary; protos: (C+1) x dim with background last."""
    t_count, classes = active.shape
    dim = protos.shape[1]
    out = np.empty((t_count, dim))
    for t in range(t_count):
        idx = np.flatnonzero(active[t])
        out[t] = protos[idx].sum(axis=0) if idx.size else protos[classes]
    if sigma > 0:
        out += sigma * rng.standard_normal((t_count, dim))
    return out


def _generate_video(
    cfg: DatasetConfig, split: str, index: int, proto_a: np.ndarray, proto_v: np.ndarray
) -> SyntheticVideo:
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, _SPLIT_TAGS[split], index])
    )
    t_count, classes = cfg.segments, cfg.classes
    dense_a = np.zeros((t_count, classes), dtype=np.uint8)
    dense_v = np.zeros((t_count, classes), dtype=np.uint8)

    n_events = int(rng.integers(cfg.events_min, min(cfg.events_max, classes) + 1))
    event_classes = rng.choice(classes, size=n_events, replace=False)
    for c in event_classes:
        onset = int(rng.integers(0, t_count))
        offset = int(rng.integers(onset + 1, t_count + 1))
        for t in range(onset, offset):
            if rng.random() < cfg.asynchrony:
                if rng.random() < 0.5:
                    dense_a[t, c] = 1
                else:
                    dense_v[t, c] = 1
            else:
                dense_a[t, c] = 1
                dense_v[t, c] = 1

    weak = (dense_a.any(axis=0) | dense_v.any(axis=0)).astype(np.uint8)
    audio = _render_features(dense_a, proto_a, cfg.noise_sigma(cfg.audio_dim), rng)
    visual = _render_features(dense_v, proto_v, cfg.noise_sigma(cfg.visual_dim), rng)
    return SyntheticVideo(
        id=f"{split}{index:05d}",
        audio=audio,
        visual=visual,
        weak=weak,
        dense=DenseAnnotation(audio=dense_a, visual=dense_v),
    )


def _validate_video(video: SyntheticVideo, cfg: DatasetConfig) -> None:
    dense_or = (video.dense.audio.any(axis=0) | video.dense.visual.any(axis=0)).astype(np.uint8)
    if not np.array_equal(video.weak, dense_or):
        raise DataError(f"video {video.id}: weak label is not the OR of its dense annotation")
    av = video.dense.av
    if np.any(av & ~video.dense.audio) or np.any(av & ~video.dense.visual):
        raise DataError(f"video {video.id}: AV annotation not contained in both modalities")
    if cfg.asynchrony == 0.0 and not np.array_equal(video.dense.audio, video.dense.visual):
        raise DataError(f"video {video.id}: zero asynchrony but modalities differ")


def generate(cfg: DatasetConfig) -> Dataset:
    """Materialize the train/val/test splits; bitwise deterministic per seed."""
    proto_a, proto_v = class_prototypes(cfg)
    data = Dataset(config=cfg)
    sizes = {"train": cfg.train_videos, "val": cfg.val_videos, "test": cfg.test_videos}
    for split, count in sizes.items():
        videos = [_generate_video(cfg, split, i, proto_a, proto_v) for i in range(count)]
        for v in videos:
            _validate_video(v, cfg)
        getattr(data, split).extend(videos)
    return data
