"""Classifier head: per-segment event probabilities and video-level pooling.

A single affine classifier shared across modalities and time maps fused
features to per-segment, per-class logits. The audio-visual probability
is the elementwise product of the audio and visual probabilities. Video
level pooling attends over time (softmax over segments, per modality and
class) and over modality (two-way softmax per segment and class); the
product of the two attention maps is renormalized over all (segment,
modality) cells per class, so the pooled output is always a convex
combination of the 2T segment probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import FeatureSequence
from .errors import DataError, DimensionError, UsageError
from .params import ParamSpec, ParamStore
from .tensor import Tensor, add, clamp, div, log, matmul, mul, sigmoid, softmax, sub, tmean, tsum


@dataclass
class PredictionTensor:
    """Per-segment class probabilities per modality plus the pooled video vector."""

    p_audio: np.ndarray  # T x C
    p_visual: np.ndarray  # T x C
    p_av: np.ndarray  # T x C, equals p_audio * p_visual
    p_video: np.ndarray  # C

    def __post_init__(self):
        for name in ("p_audio", "p_visual", "p_av", "p_video"):
            arr = getattr(self, name)
            # pooling weights sum to 1 only to machine precision, so allow
            # (and remove) sub-1e-9 overshoot before rejecting
            if np.any(arr < -1e-9) or np.any(arr > 1.0 + 1e-9):
                raise DataError(f"{name}: probabilities outside [0, 1]")
            setattr(self, name, np.clip(arr, 0.0, 1.0))

    @property
    def segments(self) -> int:
        return self.p_audio.shape[0]

    @property
    def classes(self) -> int:
        return self.p_audio.shape[1]


def head_schema(dim: int, classes: int) -> dict[str, ParamSpec]:
    """Shared classifier plus the temporal and modality attention maps."""
    schema = {}
    for block in ("classifier", "temporal", "modality"):
        schema[f"mmil.{block}.w"] = ParamSpec((dim, classes))
        schema[f"mmil.{block}.b"] = ParamSpec((1, classes), scheme="zeros")
    return schema


def _require_fused(seq: FeatureSequence, which: str) -> None:
    if seq.stage != "fused":
        raise UsageError(f"{which}: expected fused features, got stage '{seq.stage}'")


def segment_probs(
    g_a: FeatureSequence, g_v: FeatureSequence, store: ParamStore
) -> tuple[Tensor, Tensor, Tensor]:
    """Per-segment probabilities (audio, visual, audio-visual product)."""
    _require_fused(g_a, "segment_probs")
    _require_fused(g_v, "segment_probs")
    w, b = store["mmil.classifier.w"], store["mmil.classifier.b"]
    p_a = sigmoid(add(matmul(g_a.x, w), b))
    p_v = sigmoid(add(matmul(g_v.x, w), b))
    return p_a, p_v, mul(p_a, p_v)


def mmil_pool(
    p_a: Tensor,
    p_v: Tensor,
    g_a: FeatureSequence,
    g_v: FeatureSequence,
    store: ParamStore,
    weights_out: dict | None = None,
) -> Tensor:
    """Pool segment probabilities into one video-level probability per class.

    Attention over time comes from a softmax over segments of the temporal
    logits (per modality and class); attention over modality is a two-way
    softmax of the modality logits (per segment and class). Their product
    is renormalized so the weights over all (t, modality) cells sum to one
    for each class. ``weights_out`` receives the numpy weight maps.
    """
    wt, bt = store["mmil.temporal.w"], store["mmil.temporal.b"]
    wm, bm = store["mmil.modality.w"], store["mmil.modality.b"]
    tl_a = add(matmul(g_a.x, wt), bt)
    tl_v = add(matmul(g_v.x, wt), bt)
    ml_a = add(matmul(g_a.x, wm), bm)
    ml_v = add(matmul(g_v.x, wm), bm)

    time_a = softmax(tl_a, axis=0)
    time_v = softmax(tl_v, axis=0)
    mod_a = sigmoid(sub(ml_a, ml_v))  # two-way softmax over modalities
    mod_v = sigmoid(sub(ml_v, ml_a))

    q_a = mul(time_a, mod_a)
    q_v = mul(time_v, mod_v)
    total = tsum(add(q_a, q_v), axis=0, keepdims=True)  # 1 x C
    alpha_a = div(q_a, total)
    alpha_v = div(q_v, total)
    if weights_out is not None:
        weights_out["audio"] = alpha_a.data.copy()
        weights_out["visual"] = alpha_v.data.copy()
    pooled = tsum(add(mul(alpha_a, p_a), mul(alpha_v, p_v)), axis=0, keepdims=True)
    return pooled


def modality_video_probs(
    p_a: Tensor, p_v: Tensor, g_a: FeatureSequence, g_v: FeatureSequence, store: ParamStore
) -> tuple[Tensor, Tensor]:
    """Per-modality video probabilities via temporal attention only (auxiliary loss)."""
    wt, bt = store["mmil.temporal.w"], store["mmil.temporal.b"]
    time_a = softmax(add(matmul(g_a.x, wt), bt), axis=0)
    time_v = softmax(add(matmul(g_v.x, wt), bt), axis=0)
    pa = tsum(mul(time_a, p_a), axis=0, keepdims=True)
    pv = tsum(mul(time_v, p_v), axis=0, keepdims=True)
    return pa, pv


def weak_label_loss(p_video: Tensor, y: np.ndarray, clamp_eps: float = 1e-7) -> Tensor:
    """Binary cross-entropy against the video-level multi-hot label, mean over classes."""
    if not (0.0 < clamp_eps <= 1e-3):
        raise UsageError(f"clamp_eps {clamp_eps} outside (0, 1e-3]")
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise DataError("weak labels must be binary")
    y_row = y.reshape(1, -1).astype(p_video.dtype)
    if p_video.shape != y_row.shape:
        raise DimensionError(f"predictions {p_video.shape} vs labels {y_row.shape}")
    p = clamp(p_video, clamp_eps, 1.0 - clamp_eps)
    y_t = Tensor(y_row)
    one_minus_y = Tensor(1.0 - y_row)
    nll = add(mul(y_t, log(p)), mul(one_minus_y, log(sub(Tensor(np.ones_like(y_row)), p))))
    return mul(tmean(nll), -1.0)
