"""The full parsing model: projections, two attention streams, aggregation, head.

Per video the forward pass is

    raw features --projection--> shared width d
      stream 1: hybrid attention update
      stream 2: segment gating, then its own hybrid attention update
    each stream: cross-modal aggregation over the concatenated modalities
    fuse the two streams per modality (elementwise mean)
    shared classifier -> segment probabilities -> pooled video probability

Ablation switches drop the gated stream (``ablate_sa``), skip aggregation
(``ablate_cma``), or restrict aggregation to one modality's queries
(``cma_mode``), mirroring the structural variants exercised by the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionConfig,
    FeatureSequence,
    cma_block,
    fuse_mean,
    han_schema,
    han_update,
    projection_schema,
)
from .errors import ConfigError, DimensionError
from .head import (
    PredictionTensor,
    head_schema,
    mmil_pool,
    modality_video_probs,
    segment_probs,
    weak_label_loss,
)
from .params import ParamSpec, ParamStore
from .segment_gate import GateConfig, sa_forward, sa_schema
from .tensor import Tensor, add, matmul, mul

CMA_MODES = ("both", "audio-only", "visual-only")


@dataclass(frozen=True)
class ModelConfig:
    model_dim: int = 64
    heads: int = 1
    audio_dim: int = 16
    visual_dim: int = 32
    classes: int = 4
    segments: int = 10
    sa_axis_mode: str = "per-segment"
    sa_reduction_ratio: int = 4
    sa_share_han_params: bool = False
    cma_share_streams: bool = False
    ablate_sa: bool = False
    ablate_cma: bool = False
    cma_mode: str = "both"
    # supervise the per-modality pooled predictions alongside the fused
    # one; prevents the modality-attention pooling from locking onto one
    # modality early and starving the other of gradient
    aux_modality_loss: bool = True
    clamp_eps: float = 1e-7
    precision: int = 64
    # locality-preserving initialization: residual attention blocks start
    # silent (zero output projection) and the non-residual aggregation
    # blocks start as content retrieval (identity projections, sharpened
    # query). Without this, weak supervision collapses onto the shortcut
    # of predicting the video label on every segment. Disabled for
    # gradient verification so every projection path carries gradient.
    local_init: bool = True
    retrieval_gain: float = 80.0
    # optional training-time dropout on the residual attention terms
    # (experimental regularizer; inference always runs every branch at
    # scale 1). The attention tether in the training loop is the primary
    # defense against global-shortcut co-adaptation, so this defaults off.
    branch_dropout: float = 0.0

    def __post_init__(self):
        if self.cma_mode not in CMA_MODES:
            raise ConfigError(f"unknown cma mode '{self.cma_mode}'")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(heads=self.heads, model_dim=self.model_dim)

    @property
    def gate(self) -> GateConfig:
        return GateConfig(
            axis_mode=self.sa_axis_mode,
            reduction_ratio=self.sa_reduction_ratio,
            share_han_params=self.sa_share_han_params,
        )

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


def build_schema(cfg: ModelConfig) -> dict[str, ParamSpec]:
    d = cfg.model_dim
    # both projections share one fan-in so the two modalities enter the
    # attention stages at the same scale regardless of their raw widths
    shared_fan = min(cfg.audio_dim, cfg.visual_dim)
    schema: dict[str, ParamSpec] = {
        "proj.audio.w": ParamSpec((cfg.audio_dim, d), fan_in=shared_fan),
        "proj.audio.b": ParamSpec((1, d), scheme="zeros"),
        "proj.visual.w": ParamSpec((cfg.visual_dim, d), fan_in=shared_fan),
        "proj.visual.b": ParamSpec((1, d), scheme="zeros"),
    }
    han_style = "retrieval-residual" if cfg.local_init else "uniform"
    cma_style = "retrieval" if cfg.local_init else "uniform"
    gain = cfg.retrieval_gain
    schema.update(han_schema(d, style=han_style, query_gain=gain))
    if not cfg.ablate_sa:
        schema.update(sa_schema(cfg.segments, d, cfg.gate, style=han_style, query_gain=gain))
    if not cfg.ablate_cma:
        schema.update(projection_schema("cma.h", d, cma_style, gain))
        if not cfg.cma_share_streams and not cfg.ablate_sa:
            schema.update(projection_schema("cma.s", d, cma_style, gain))
    schema.update(head_schema(d, cfg.classes))
    return schema


@dataclass
class ForwardResult:
    p_a: Tensor
    p_v: Tensor
    p_av: Tensor
    p_video: Tensor  # 1 x C
    fused_a: FeatureSequence
    fused_v: FeatureSequence
    pool_weights: dict = field(default_factory=dict)

    def detach(self) -> PredictionTensor:
        return PredictionTensor(
            p_audio=self.p_a.data.copy(),
            p_visual=self.p_v.data.copy(),
            p_av=self.p_av.data.copy(),
            p_video=self.p_video.data.reshape(-1).copy(),
        )


class Model:
    """Owns the parameter store and wires the forward pass."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        self.store = ParamStore(build_schema(cfg), seed=self.seed, dtype=cfg.dtype)

    def _project(self, x: np.ndarray, modality: str) -> FeatureSequence:
        name = f"proj.{modality}"
        w = self.store[f"{name}.w"]
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise DimensionError(
                f"{modality} features {x.shape} do not match projection {w.shape}"
            )
        xt = Tensor(np.asarray(x, dtype=self.cfg.dtype))
        return FeatureSequence(modality, "raw", add(matmul(xt, w), self.store[f"{name}.b"]))

    def _branch_scales(self, dropout_rng) -> tuple[float, float, float, float]:
        q = self.cfg.branch_dropout
        if dropout_rng is None or q <= 0.0:
            return (1.0, 1.0, 1.0, 1.0)
        keep = 1.0 / (1.0 - q)
        return tuple(0.0 if dropout_rng.random() < q else keep for _ in range(4))

    def forward_video(
        self, audio: np.ndarray, visual: np.ndarray, dropout_rng=None
    ) -> ForwardResult:
        cfg = self.cfg
        attn = cfg.attention
        fa0 = self._project(audio, "audio")
        fv0 = self._project(visual, "visual")

        f_ha, f_hv = han_update(
            fa0, fv0, self.store, attn, branch_scales=self._branch_scales(dropout_rng)
        )
        if not cfg.ablate_sa:
            f_sa, f_sv = sa_forward(
                fa0, fv0, self.store, attn, cfg.gate,
                branch_scales=self._branch_scales(dropout_rng),
            )

        if cfg.ablate_cma:
            g_ha, g_hv = f_ha, f_hv
            if not cfg.ablate_sa:
                g_sa, g_sv = f_sa, f_sv
        else:
            s_prefix = "cma.h" if cfg.cma_share_streams else "cma.s"
            do_audio = cfg.cma_mode in ("both", "audio-only")
            do_visual = cfg.cma_mode in ("both", "visual-only")
            g_ha = cma_block(f_ha, f_ha, f_hv, self.store, attn, "cma.h") if do_audio else f_ha
            g_hv = cma_block(f_hv, f_ha, f_hv, self.store, attn, "cma.h") if do_visual else f_hv
            if not cfg.ablate_sa:
                g_sa = (
                    cma_block(f_sa, f_sa, f_sv, self.store, attn, s_prefix) if do_audio else f_sa
                )
                g_sv = (
                    cma_block(f_sv, f_sa, f_sv, self.store, attn, s_prefix) if do_visual else f_sv
                )

        if cfg.ablate_sa:
            fused_a = g_ha.with_stage("fused")
            fused_v = g_hv.with_stage("fused")
        else:
            fused_a = fuse_mean(g_ha, g_sa)
            fused_v = fuse_mean(g_hv, g_sv)

        p_a, p_v, p_av = segment_probs(fused_a, fused_v, self.store)
        pool_weights: dict = {}
        p_video = mmil_pool(p_a, p_v, fused_a, fused_v, self.store, weights_out=pool_weights)
        return ForwardResult(p_a, p_v, p_av, p_video, fused_a, fused_v, pool_weights)

    def loss_video(
        self, audio: np.ndarray, visual: np.ndarray, label: np.ndarray, dropout_rng=None
    ) -> Tensor:
        out = self.forward_video(audio, visual, dropout_rng=dropout_rng)
        loss = weak_label_loss(out.p_video, label, self.cfg.clamp_eps)
        if self.cfg.aux_modality_loss:
            pa, pv = modality_video_probs(out.p_a, out.p_v, out.fused_a, out.fused_v, self.store)
            aux = add(
                weak_label_loss(pa, label, self.cfg.clamp_eps),
                weak_label_loss(pv, label, self.cfg.clamp_eps),
            )
            loss = add(loss, mul(aux, 0.5))
        return loss

    def batch_loss(
        self, batch: list[tuple[np.ndarray, np.ndarray, np.ndarray]], dropout_rng=None
    ) -> Tensor:
        total = self.loss_video(*batch[0], dropout_rng=dropout_rng)
        for item in batch[1:]:
            total = add(total, self.loss_video(*item, dropout_rng=dropout_rng))
        return mul(total, 1.0 / len(batch))

    def predict(self, audio: np.ndarray, visual: np.ndarray) -> PredictionTensor:
        return self.forward_video(audio, visual).detach()
