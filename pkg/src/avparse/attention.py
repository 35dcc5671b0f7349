"""Attention blocks over per-segment feature sequences.

Three layers of machinery, all pure functions over immutable inputs:

* ``scaled_attention`` — multi-head scaled dot-product attention with
  learned query/key/value/output projections (bias-free, so identity
  weights give literal identity projections).
* ``han_update`` — the residual hybrid update: each modality attends to
  itself and to the other modality, and both attention terms are added
  on top of the unchanged input.
* ``cma_block`` — cross-modal aggregation: keys and values are the
  temporal concatenation of the audio and visual sequences (2T rows of
  width d), so every query sees both modalities in one softmax.
* ``fuse_mean`` — elementwise average of the two stream outputs.

Parameter names follow the documented schema: ``han.self_a.*``,
``han.cross_av.*``, ``han.self_v.*``, ``han.cross_va.*`` for the hybrid
update and ``cma.h.*`` / ``cma.s.*`` for the two aggregation blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, DimensionError, UsageError
from .params import ParamSpec, ParamStore
from .tensor import Tensor, concat, elementwise_mean, matmul, mul, narrow, softmax, transpose

MODALITIES = ("audio", "visual")
STAGES = ("raw", "han", "sa", "cma", "fused")

PROJECTION_NAMES = ("wq", "wk", "wv", "wo")


@dataclass
class FeatureSequence:
    """One modality's T x d feature matrix plus provenance tags."""

    modality: str
    stage: str
    x: Tensor

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise UsageError(f"unknown modality '{self.modality}'")
        if self.stage not in STAGES:
            raise UsageError(f"unknown stage '{self.stage}'")
        if self.x.data.ndim != 2 or self.x.shape[0] < 1:
            raise DimensionError(f"feature sequence must be T x d with T >= 1, got {self.x.shape}")

    @property
    def segments(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def with_stage(self, stage: str) -> "FeatureSequence":
        return FeatureSequence(self.modality, stage, self.x)


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 1
    model_dim: int = 64

    def __post_init__(self):
        if self.heads < 1 or self.model_dim % self.heads != 0:
            raise ConfigError(
                f"head count {self.heads} must divide model dim {self.model_dim}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


def projection_schema(
    prefix: str, dim: int, style: str = "uniform", query_gain: float = 1.0
) -> dict[str, ParamSpec]:
    """Schema entries for one attention block's four square projections.

    Styles:
      uniform             all four projections uniform fan-in.
      residual            output projection starts at zero, so a residual
                          block is silent at initialization and grows only
                          when it helps.
      retrieval           identity projections with the query scaled by
                          ``query_gain``: attention starts as sharpened
                          dot-product content retrieval instead of an
                          arbitrary mixture (for the non-residual
                          aggregation blocks).
      retrieval-residual  retrieval-style query/key/value with a zero
                          output projection: the block is silent at init
                          and, as the output grows, mixes in rows of
                          matching content rather than arbitrary ones.
    """
    if style in ("retrieval", "retrieval-residual"):
        wo = (
            ParamSpec((dim, dim), scheme="zeros")
            if style == "retrieval-residual"
            else ParamSpec((dim, dim), scheme="identity")
        )
        return {
            f"{prefix}.wq": ParamSpec((dim, dim), scheme="identity", gain=query_gain),
            f"{prefix}.wk": ParamSpec((dim, dim), scheme="identity"),
            f"{prefix}.wv": ParamSpec((dim, dim), scheme="identity"),
            f"{prefix}.wo": wo,
        }
    if style not in ("uniform", "residual"):
        raise ConfigError(f"unknown projection init style '{style}'")
    schema = {f"{prefix}.{n}": ParamSpec((dim, dim)) for n in ("wq", "wk", "wv")}
    schema[f"{prefix}.wo"] = ParamSpec(
        (dim, dim), scheme="zeros" if style == "residual" else "uniform-fan-in"
    )
    return schema


def scaled_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    store: ParamStore,
    prefix: str,
    cfg: AttentionConfig,
    weights_out: list | None = None,
) -> Tensor:
    """Multi-head softmax(Q Kt / sqrt(head_dim)) V with projections.

    ``weights_out``, when given, receives one row-stochastic numpy weight
    matrix per head (for inspection only; not part of the tape).
    """
    d = cfg.model_dim
    if q.shape[1] != d or k.shape[1] != d or v.shape[1] != d:
        raise DimensionError(
            f"attention expects width {d}, got q {q.shape}, k {k.shape}, v {v.shape}"
        )
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"key/value row counts differ: {k.shape} vs {v.shape}")
    if k.shape[0] < 1:
        raise DimensionError("attention requires at least one key")

    qp = matmul(q, store[f"{prefix}.wq"])
    kp = matmul(k, store[f"{prefix}.wk"])
    vp = matmul(v, store[f"{prefix}.wv"])

    hd = cfg.head_dim
    scale = 1.0 / math.sqrt(hd)
    head_outputs = []
    for h in range(cfg.heads):
        qh = narrow(qp, 1, h * hd, hd)
        kh = narrow(kp, 1, h * hd, hd)
        vh = narrow(vp, 1, h * hd, hd)
        logits = mul(matmul(qh, transpose(kh)), scale)
        attn = softmax(logits, axis=1)
        if weights_out is not None:
            weights_out.append(attn.data.copy())
        head_outputs.append(matmul(attn, vh))
    merged = head_outputs[0] if cfg.heads == 1 else concat(head_outputs, axis=1)
    return matmul(merged, store[f"{prefix}.wo"])


def han_schema(
    dim: int, prefix: str = "han", style: str = "uniform", query_gain: float = 1.0
) -> dict[str, ParamSpec]:
    schema: dict[str, ParamSpec] = {}
    for branch in ("self_a", "cross_av", "self_v", "cross_va"):
        schema.update(projection_schema(f"{prefix}.{branch}", dim, style, query_gain))
    return schema


def han_update(
    fa: FeatureSequence,
    fv: FeatureSequence,
    store: ParamStore,
    cfg: AttentionConfig,
    prefix: str = "han",
    stage: str = "han",
    branch_scales: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
) -> tuple[FeatureSequence, FeatureSequence]:
    """Residual self + cross attention update for both modalities.

    audio_out = audio + attn(audio, audio, audio) + attn(audio, visual, visual)
    and symmetrically for visual. The residual term is carried through
    unchanged, so zero value projections make this the identity map.

    ``branch_scales`` multiplies the (self_a, cross_av, self_v, cross_va)
    attention terms; the training loop uses it for stochastic branch
    dropout, and inference leaves all four at 1.
    """
    if fa.x.shape != fv.x.shape:
        raise DimensionError(f"han_update: audio {fa.x.shape} vs visual {fv.x.shape}")
    xa, xv = fa.x, fv.x
    s_a, c_av, s_v, c_va = branch_scales

    def term(scale, q, kv, branch):
        if scale == 0.0:
            return None
        out = scaled_attention(q, kv, kv, store, f"{prefix}.{branch}", cfg)
        return out if scale == 1.0 else mul(out, scale)

    out_a = xa
    for t in (term(s_a, xa, xa, "self_a"), term(c_av, xa, xv, "cross_av")):
        if t is not None:
            out_a = out_a + t
    out_v = xv
    for t in (term(s_v, xv, xv, "self_v"), term(c_va, xv, xa, "cross_va")):
        if t is not None:
            out_v = out_v + t
    return (
        FeatureSequence("audio", stage, out_a),
        FeatureSequence("visual", stage, out_v),
    )


def cma_block(
    query_seq: FeatureSequence,
    fa: FeatureSequence,
    fv: FeatureSequence,
    store: ParamStore,
    cfg: AttentionConfig,
    prefix: str,
) -> FeatureSequence:
    """Cross-modal aggregation: attend over the concatenation of both modalities.

    Keys and values are the 2T x d stack of the audio rows followed by the
    visual rows; concatenation is along the temporal axis so key width
    still matches the query width.
    """
    if fa.x.shape != fv.x.shape:
        raise DimensionError(f"cma_block: audio {fa.x.shape} vs visual {fv.x.shape}")
    if query_seq.dim != fa.dim:
        raise DimensionError(f"cma_block: query width {query_seq.dim} vs features {fa.dim}")
    kv = concat([fa.x, fv.x], axis=0)
    out = scaled_attention(query_seq.x, kv, kv, store, prefix, cfg)
    return FeatureSequence(query_seq.modality, "cma", out)


def fuse_mean(g_h: FeatureSequence, g_s: FeatureSequence) -> FeatureSequence:
    """Elementwise average of the two stream outputs for one modality."""
    if g_h.modality != g_s.modality:
        raise UsageError(f"fuse_mean: modality mismatch {g_h.modality} vs {g_s.modality}")
    if g_h.x.shape != g_s.x.shape:
        raise DimensionError(f"fuse_mean: shapes {g_h.x.shape} vs {g_s.x.shape}")
    return FeatureSequence(g_h.modality, "fused", elementwise_mean(g_h.x, g_s.x))
