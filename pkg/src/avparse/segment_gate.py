"""Segment importance gating (squeeze-excitation style).

Each modality is summarized into a descriptor vector, pushed through a
small two-layer bottleneck network with a sigmoid output, and the
resulting gates rescale the features before a dedicated hybrid-attention
pass. The default gates one weight per segment (length-T descriptor from
averaging over the feature axis); the alternate ``per-dimension`` mode
gates feature channels instead (length-d descriptor from averaging over
segments).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .attention import AttentionConfig, FeatureSequence, han_schema, han_update
from .errors import ConfigError, DimensionError
from .params import ParamSpec, ParamStore
from .tensor import Tensor, matmul, mul, relu, sigmoid, tmean, transpose

AXIS_MODES = ("per-segment", "per-dimension")


@dataclass(frozen=True)
class GateConfig:
    axis_mode: str = "per-segment"
    reduction_ratio: int = 4
    share_han_params: bool = False

    def __post_init__(self):
        if self.axis_mode not in AXIS_MODES:
            raise ConfigError(f"unknown axis mode '{self.axis_mode}'")
        if self.reduction_ratio < 1:
            raise ConfigError(f"reduction ratio must be >= 1, got {self.reduction_ratio}")

    def gated_length(self, segments: int, dim: int) -> int:
        return segments if self.axis_mode == "per-segment" else dim

    def hidden_width(self, length: int) -> int:
        return max(math.ceil(length / self.reduction_ratio), 1)


@dataclass
class SegmentWeights:
    """Sigmoid gates, one per gated-axis position, as a 1 x L row."""

    values: Tensor
    axis_mode: str


def gate_schema(
    prefix: str, length: int, cfg: GateConfig, neutral_start: bool = False
) -> dict[str, ParamSpec]:
    """``neutral_start`` zero-initializes the output affine so every gate
    begins at exactly sigmoid(0) = 0.5 and moves only when useful."""
    hidden = cfg.hidden_width(length)
    return {
        f"{prefix}.w1": ParamSpec((length, hidden)),
        f"{prefix}.b1": ParamSpec((1, hidden), scheme="zeros"),
        f"{prefix}.w2": ParamSpec((hidden, length), scheme="zeros" if neutral_start else "uniform-fan-in"),
        f"{prefix}.b2": ParamSpec((1, length), scheme="zeros"),
    }


def squeeze(seq: FeatureSequence, axis_mode: str = "per-segment") -> Tensor:
    """Average the T x d features down to a 1 x L descriptor row."""
    if axis_mode == "per-segment":
        return transpose(tmean(seq.x, axis=1, keepdims=True))
    if axis_mode == "per-dimension":
        return tmean(seq.x, axis=0, keepdims=True)
    raise ConfigError(f"unknown axis mode '{axis_mode}'")


def gate_weights(
    desc: Tensor, store: ParamStore, prefix: str, axis_mode: str = "per-segment"
) -> SegmentWeights:
    """sigmoid(affine2(relu(affine1(descriptor)))), every gate in (0, 1)."""
    w1 = store[f"{prefix}.w1"]
    if desc.shape[1] != w1.shape[0]:
        raise DimensionError(f"descriptor length {desc.shape} vs net input {w1.shape}")
    hidden = relu(matmul(desc, w1) + store[f"{prefix}.b1"])
    gates = sigmoid(matmul(hidden, store[f"{prefix}.w2"]) + store[f"{prefix}.b2"])
    return SegmentWeights(gates, axis_mode)


def apply_gates(seq: FeatureSequence, weights: SegmentWeights, axis_mode: str) -> FeatureSequence:
    """Broadcast-multiply the gates along the gated axis."""
    t, d = seq.x.shape
    length = weights.values.shape[1]
    expected = t if axis_mode == "per-segment" else d
    if length != expected:
        raise DimensionError(
            f"gate length {length} does not match {axis_mode} axis of features {seq.x.shape}"
        )
    if axis_mode == "per-segment":
        gated = mul(seq.x, transpose(weights.values))  # (T,d) * (T,1)
    else:
        gated = mul(seq.x, weights.values)  # (T,d) * (1,d)
    return FeatureSequence(seq.modality, "raw", gated)


def sa_schema(
    segments: int, dim: int, cfg: GateConfig, style: str = "uniform", query_gain: float = 1.0
) -> dict[str, ParamSpec]:
    length = cfg.gated_length(segments, dim)
    neutral = style != "uniform"
    schema = {}
    schema.update(gate_schema("sa.gate_a", length, cfg, neutral_start=neutral))
    schema.update(gate_schema("sa.gate_v", length, cfg, neutral_start=neutral))
    if not cfg.share_han_params:
        schema.update(han_schema(dim, prefix="sa.han", style=style, query_gain=query_gain))
    return schema


def sa_forward(
    fa: FeatureSequence,
    fv: FeatureSequence,
    store: ParamStore,
    attn_cfg: AttentionConfig,
    gate_cfg: GateConfig,
    branch_scales: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
) -> tuple[FeatureSequence, FeatureSequence]:
    """Gate each modality independently, then run the hybrid update on the gated pair."""
    mode = gate_cfg.axis_mode
    wa = gate_weights(squeeze(fa, mode), store, "sa.gate_a", mode)
    wv = gate_weights(squeeze(fv, mode), store, "sa.gate_v", mode)
    ga = apply_gates(fa, wa, mode)
    gv = apply_gates(fv, wv, mode)
    prefix = "han" if gate_cfg.share_han_params else "sa.han"
    return han_update(
        ga, gv, store, attn_cfg, prefix=prefix, stage="sa", branch_scales=branch_scales
    )
