"""Segment-level and event-level F-score evaluation.

Conventions, pinned here and exercised by the tests:

* The Audio / Visual / AV columns are micro-averaged: true/false
  positive/negative counts are summed over every (video, segment, class)
  cell of the stream before the F-score is taken. The AV stream is the
  cellwise AND of the audio and visual binary matrices, on both the
  prediction and the ground-truth side.
* Ty@AV is the unweighted mean of the three column F-scores, computed at
  full precision; display rounds to one decimal.
* Ev@AV macro-averages: per class, counts are pooled across the audio and
  visual streams of every video, and the resulting per-class F-scores are
  averaged over all classes.
* Event-level scoring extracts maximal runs of positive segments and
  matches predicted to ground-truth events of the same class and stream
  greedily in onset order; a pair matches when the segment IoU reaches
  the threshold (default 0.5 — a convention choice, configurable, since
  published scorers vary in their onset/offset tolerance).
* An F-score with zero TP, FP and FN is defined as 1.0 (perfect agreement
  on absence).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .head import PredictionTensor

STREAMS = ("audio", "visual", "av")


def _check_binary(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise DataError(f"{what}: expected binary values")
    return arr.astype(np.uint8)


@dataclass
class DenseAnnotation:
    """Per-segment, per-modality binary class matrices for one video."""

    audio: np.ndarray  # T x C
    visual: np.ndarray  # T x C

    def __post_init__(self):
        self.audio = _check_binary(self.audio, "dense audio")
        self.visual = _check_binary(self.visual, "dense visual")
        if self.audio.shape != self.visual.shape:
            raise DataError(
                f"dense annotation shapes differ: {self.audio.shape} vs {self.visual.shape}"
            )

    @property
    def av(self) -> np.ndarray:
        return self.audio & self.visual

    def stream(self, name: str) -> np.ndarray:
        if name == "audio":
            return self.audio
        if name == "visual":
            return self.visual
        if name == "av":
            return self.av
        raise UsageError(f"unknown stream '{name}'")


@dataclass(frozen=True)
class EventSpan:
    """One contiguous event: class, stream, onset (inclusive), offset (exclusive)."""

    class_id: int
    modality: str
    onset: int
    offset: int

    def __post_init__(self):
        if not 0 <= self.onset < self.offset:
            raise DataError(f"invalid span [{self.onset}, {self.offset})")

    @property
    def length(self) -> int:
        return self.offset - self.onset


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        if denom == 0:
            return 1.0  # both sides empty: perfect agreement on absence
        return 2.0 * self.tp / denom


def segment_counts(pred: np.ndarray, gt: np.ndarray) -> Counts:
    pred = _check_binary(pred, "segment predictions")
    gt = _check_binary(gt, "segment ground truth")
    if pred.shape != gt.shape:
        raise DataError(f"segment shapes differ: {pred.shape} vs {gt.shape}")
    tp = int((pred & gt).sum())
    fp = int((pred & ~gt & 1).sum())
    fn = int((~pred & 1 & gt).sum())
    return Counts(tp, fp, fn)


def segment_f1(pred: np.ndarray, gt: np.ndarray) -> tuple[float, Counts]:
    """Micro F over all (segment, class) cells: 2TP / (2TP + FP + FN)."""
    counts = segment_counts(pred, gt)
    return counts.f1, counts


def extract_events(column: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of consecutive positive segments, ordered by onset."""
    column = _check_binary(np.asarray(column).reshape(-1), "event column")
    spans = []
    start = None
    for t, v in enumerate(column):
        if v and start is None:
            start = t
        elif not v and start is not None:
            spans.append((start, t))
            start = None
    if start is not None:
        spans.append((start, len(column)))
    return spans


def span_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def _as_bounds(span) -> tuple[int, int]:
    if isinstance(span, EventSpan):
        return (span.onset, span.offset)
    return (int(span[0]), int(span[1]))


def _validate_spans(spans, what: str) -> list[tuple[int, int]]:
    ordered = sorted(_as_bounds(s) for s in spans)
    for (on, off), (non, _) in zip(ordered, ordered[1:]):
        if non < off:
            raise DataError(f"{what}: overlapping spans {(on, off)} and ({non}, ...)")
    for on, off in ordered:
        if not 0 <= on < off:
            raise DataError(f"{what}: invalid span [{on}, {off})")
    return ordered


def event_counts(pred_spans, gt_spans, iou_threshold: float = 0.5) -> Counts:
    """Greedy one-to-one matching in onset order at the given IoU threshold.

    Spans are (onset, offset) pairs or EventSpan instances; matching is
    within one class/stream, so callers group spans before scoring.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise UsageError(f"iou threshold {iou_threshold} outside (0, 1]")
    pred_spans = _validate_spans(pred_spans, "predicted spans")
    gt_spans = _validate_spans(gt_spans, "ground-truth spans")
    matched_gt = [False] * len(gt_spans)
    tp = 0
    for p in pred_spans:
        for j, g in enumerate(gt_spans):
            if not matched_gt[j] and span_iou(p, g) >= iou_threshold:
                matched_gt[j] = True
                tp += 1
                break
    return Counts(tp, len(pred_spans) - tp, len(gt_spans) - tp)


def event_f1(pred_spans, gt_spans, iou_threshold: float = 0.5) -> tuple[float, Counts]:
    counts = event_counts(pred_spans, gt_spans, iou_threshold)
    return counts.f1, counts


@dataclass
class LevelScores:
    """One evaluation tier: the three column F-scores plus the two averages."""

    audio: float
    visual: float
    av: float
    ev_at_av: float
    counts: dict = field(default_factory=dict)

    @property
    def ty_at_av(self) -> float:
        return (self.audio + self.visual + self.av) / 3.0

    def row(self) -> list[float]:
        return [self.audio, self.visual, self.av, self.ty_at_av, self.ev_at_av]


@dataclass
class MetricsReport:
    segment: LevelScores
    event: LevelScores

    def render(self) -> str:
        header = f"{'level':<9s}{'Audio':>8s}{'Visual':>8s}{'AV':>8s}{'Ty@AV':>8s}{'Ev@AV':>8s}"
        lines = [header]
        for name, level in (("segment", self.segment), ("event", self.event)):
            cells = "".join(f"{100.0 * v:>8.1f}" for v in level.row())
            lines.append(f"{name:<9s}{cells}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        out = {}
        for name, level in (("segment", self.segment), ("event", self.event)):
            out[name] = {
                "audio": level.audio,
                "visual": level.visual,
                "av": level.av,
                "ty_at_av": level.ty_at_av,
                "ev_at_av": level.ev_at_av,
                "counts": {
                    key: {"tp": c.tp, "fp": c.fp, "fn": c.fn} for key, c in level.counts.items()
                },
            }
        return out


def binarize(pred: PredictionTensor, threshold: float = 0.5) -> DenseAnnotation:
    """Threshold the per-modality probabilities (p >= threshold is positive)."""
    if not 0.0 < threshold < 1.0:
        raise UsageError(f"threshold {threshold} outside (0, 1)")
    return DenseAnnotation(
        audio=(pred.p_audio >= threshold).astype(np.uint8),
        visual=(pred.p_visual >= threshold).astype(np.uint8),
    )


def full_report(
    preds: dict[str, PredictionTensor],
    gts: dict[str, DenseAnnotation],
    threshold: float = 0.5,
    iou_threshold: float = 0.5,
) -> MetricsReport:
    """Score a prediction set against dense annotations at both tiers."""
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    if missing or extra:
        raise DataError(
            f"video ids do not align: missing predictions {missing}, unmatched predictions {extra}"
        )
    if not gts:
        raise DataError("empty evaluation set")

    classes = next(iter(gts.values())).audio.shape[1]
    seg_stream = {s: Counts() for s in STREAMS}
    evt_stream = {s: Counts() for s in STREAMS}
    seg_class = [Counts() for _ in range(classes)]
    evt_class = [Counts() for _ in range(classes)]

    for vid in sorted(gts):
        gt = gts[vid]
        pb = binarize(preds[vid], threshold)
        if pb.audio.shape != gt.audio.shape:
            raise DataError(
                f"video {vid}: prediction shape {pb.audio.shape} vs annotation {gt.audio.shape}"
            )
        for stream in STREAMS:
            p, g = pb.stream(stream), gt.stream(stream)
            seg_stream[stream] += segment_counts(p, g)
            for c in range(classes):
                evt_stream[stream] += event_counts(
                    extract_events(p[:, c]), extract_events(g[:, c]), iou_threshold
                )
        for stream in ("audio", "visual"):
            p, g = pb.stream(stream), gt.stream(stream)
            for c in range(classes):
                seg_class[c] += segment_counts(p[:, c], g[:, c])
                evt_class[c] += event_counts(
                    extract_events(p[:, c]), extract_events(g[:, c]), iou_threshold
                )

    def level(stream_counts, class_counts) -> LevelScores:
        per_class = [c.f1 for c in class_counts]
        return LevelScores(
            audio=stream_counts["audio"].f1,
            visual=stream_counts["visual"].f1,
            av=stream_counts["av"].f1,
            ev_at_av=float(np.mean(per_class)),
            counts={
                **{s: stream_counts[s] for s in STREAMS},
                **{f"class_{c}": class_counts[c] for c in range(classes)},
            },
        )

    return MetricsReport(segment=level(seg_stream, seg_class), event=level(evt_stream, evt_class))
