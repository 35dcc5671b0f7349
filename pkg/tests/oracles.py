"""Independent line-by-line transcriptions used as test oracles.

Plain numpy only, no tensor library: these re-derive each block from its
defining formula so the production path is checked against a second,
independently written route.
"""

import math

import numpy as np


def softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_oracle(q, k, v, wq, wk, wv, wo, heads: int) -> np.ndarray:
    """softmax(Q Kt / sqrt(head_dim)) V per head, concatenated, projected."""
    qp, kp, vp = q @ wq, k @ wk, v @ wv
    dim = q.shape[1]
    hd = dim // heads
    outs = []
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        logits = qp[:, sl] @ kp[:, sl].T / math.sqrt(hd)
        outs.append(softmax_rows(logits) @ vp[:, sl])
    return np.concatenate(outs, axis=1) @ wo


def _proj(store, prefix):
    return (
        store[f"{prefix}.wq"].data,
        store[f"{prefix}.wk"].data,
        store[f"{prefix}.wv"].data,
        store[f"{prefix}.wo"].data,
    )


def han_oracle(fa, fv, store, heads, prefix="han"):
    out_a = (
        fa
        + attention_oracle(fa, fa, fa, *_proj(store, f"{prefix}.self_a"), heads)
        + attention_oracle(fa, fv, fv, *_proj(store, f"{prefix}.cross_av"), heads)
    )
    out_v = (
        fv
        + attention_oracle(fv, fv, fv, *_proj(store, f"{prefix}.self_v"), heads)
        + attention_oracle(fv, fa, fa, *_proj(store, f"{prefix}.cross_va"), heads)
    )
    return out_a, out_v


def cma_oracle(queries, fa, fv, store, heads, prefix):
    kv = np.concatenate([fa, fv], axis=0)
    return attention_oracle(queries, kv, kv, *_proj(store, prefix), heads)


def squeeze_oracle(features: np.ndarray, axis_mode: str) -> np.ndarray:
    """Explicit-loop mean along the non-gated axis."""
    t, d = features.shape
    if axis_mode == "per-segment":
        out = np.zeros(t)
        for i in range(t):
            for j in range(d):
                out[i] += features[i, j]
            out[i] /= d
    else:
        out = np.zeros(d)
        for j in range(d):
            for i in range(t):
                out[j] += features[i, j]
            out[j] /= t
    return out


def sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x))


def gate_oracle(desc: np.ndarray, store, prefix: str) -> np.ndarray:
    w1, b1 = store[f"{prefix}.w1"].data, store[f"{prefix}.b1"].data
    w2, b2 = store[f"{prefix}.w2"].data, store[f"{prefix}.b2"].data
    hidden = np.maximum(desc @ w1 + b1, 0.0)
    return sigmoid_np(hidden @ w2 + b2)


def sa_oracle(fa, fv, store, heads, axis_mode, han_prefix="sa.han"):
    """squeeze -> gate -> multiply -> hybrid update, composed sequentially."""
    outs = []
    for feats, gate_prefix in ((fa, "sa.gate_a"), (fv, "sa.gate_v")):
        desc = squeeze_oracle(feats, axis_mode).reshape(1, -1)
        gates = gate_oracle(desc, store, gate_prefix)
        if axis_mode == "per-segment":
            outs.append(feats * gates.T)
        else:
            outs.append(feats * gates)
    return han_oracle(outs[0], outs[1], store, heads, prefix=han_prefix)


def mmil_pool_oracle(p_a, p_v, g_a, g_v, store):
    """Double-softmax attention pooling, renormalized over (time, modality)."""
    wt, bt = store["mmil.temporal.w"].data, store["mmil.temporal.b"].data
    wm, bm = store["mmil.modality.w"].data, store["mmil.modality.b"].data
    tl = np.stack([g_a @ wt + bt, g_v @ wt + bt])  # 2 x T x C
    ml = np.stack([g_a @ wm + bm, g_v @ wm + bm])
    time_att = np.exp(tl - tl.max(axis=1, keepdims=True))
    time_att = time_att / time_att.sum(axis=1, keepdims=True)  # softmax over T
    mod_att = np.exp(ml - ml.max(axis=0, keepdims=True))
    mod_att = mod_att / mod_att.sum(axis=0, keepdims=True)  # softmax over modality
    weights = time_att * mod_att
    weights = weights / weights.sum(axis=(0, 1), keepdims=True)
    probs = np.stack([p_a, p_v])
    return (weights * probs).sum(axis=(0, 1))


def segment_f1_oracle(pred: np.ndarray, gt: np.ndarray):
    """Cell-by-cell counting loop."""
    tp = fp = fn = 0
    for t in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            if pred[t, c] and gt[t, c]:
                tp += 1
            elif pred[t, c] and not gt[t, c]:
                fp += 1
            elif not pred[t, c] and gt[t, c]:
                fn += 1
    if tp + fp + fn == 0:
        return 1.0, (tp, fp, fn)
    return 2.0 * tp / (2 * tp + fp + fn), (tp, fp, fn)


def event_f1_oracle(pred_spans, gt_spans, iou_threshold):
    """Greedy onset-order matching with brute-force IoU over segment sets."""

    def iou(a, b):
        sa = set(range(a[0], a[1]))
        sb = set(range(b[0], b[1]))
        return len(sa & sb) / len(sa | sb)

    used = set()
    tp = 0
    for p in sorted(pred_spans):
        for j, g in enumerate(sorted(gt_spans)):
            if j not in used and iou(p, g) >= iou_threshold:
                used.add(j)
                tp += 1
                break
    fp = len(pred_spans) - tp
    fn = len(gt_spans) - tp
    if tp + fp + fn == 0:
        return 1.0, (tp, fp, fn)
    return 2.0 * tp / (2 * tp + fp + fn), (tp, fp, fn)
