#!/usr/bin/env python3
"""Build the golden tensor bundle for `fisheyegaze kernels verify`.

Expected outputs are computed here with naive loop implementations that
share no code with the package, so the bundle is an independent oracle.
Regenerate with:

    python3 scripts/make_golden_bundle.py [out_dir]
"""

import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fisheyegaze.kernels import write_bundle  # noqa: E402  (serializer only)


# --- naive references (kept deliberately loop-based and local) -------------


def conv2d_slow(image, weights, stride=1, padding=0):
    img = np.asarray(image, dtype=float)
    w = np.asarray(weights, dtype=float)
    c_out, c_in, k, _ = w.shape
    if padding:
        img = np.pad(img, ((padding, padding), (padding, padding), (0, 0)))
    oh = (img.shape[0] - k) // stride + 1
    ow = (img.shape[1] - k) // stride + 1
    out = np.zeros((oh, ow, c_out))
    for i in range(oh):
        for j in range(ow):
            for co in range(c_out):
                acc = 0.0
                for ci in range(c_in):
                    for a in range(k):
                        for b in range(k):
                            acc += img[i * stride + a, j * stride + b, ci] * w[co, ci, a, b]
                out[i, j, co] = acc
    return out


def rot_conv_slow(image, base, rotation_weights, padding):
    out = None
    for r, wr in enumerate(rotation_weights):
        rotated = np.rot90(base, r, axes=(2, 3))
        term = wr * conv2d_slow(image, rotated, padding=padding)
        out = term if out is None else out + term
    return out


def avg_pool_slow(features):
    n, h, w, c = features.shape
    out = np.zeros((n, c))
    for ni in range(n):
        for ci in range(c):
            out[ni, ci] = sum(
                features[ni, i, j, ci] for i in range(h) for j in range(w)
            ) / (h * w)
    return out


def flatten_slow(features, pe):
    h, w, c = features.shape
    out = np.zeros((h * w, c))
    for i in range(h):
        for j in range(w):
            out[i * w + j] = features[i, j] + pe[i, j]
    return out


def attention_slow(q, k, v):
    m, dk = q.shape
    out = np.zeros((m, v.shape[1]))
    for i in range(m):
        logits = [sum(q[i, d] * k[j, d] for d in range(dk)) / math.sqrt(dk)
                  for j in range(k.shape[0])]
        peak = max(logits)
        weights = [math.exp(l - peak) for l in logits]
        total = sum(weights)
        for j in range(k.shape[0]):
            out[i] += (weights[j] / total) * v[j]
    return out


def fuse_slow(f_low, pooled, w_q, w_k, w_v, pe, masks):
    h, w, _ = f_low.shape
    att = attention_slow(flatten_slow(f_low, pe) @ w_q, pooled @ w_k, pooled @ w_v)
    out = f_low.copy()
    for i in range(h):
        for j in range(w):
            gate = max(masks[n, i, j] for n in range(masks.shape[0]))
            out[i, j] = f_low[i, j] + gate * att[i * w + j]
    return out


def smooth_l1_slow(pred, target, beta):
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(target, dtype=float).ravel()
    total = 0.0
    for a, b in zip(p, t):
        d = abs(a - b)
        total += 0.5 * d * d / beta if d < beta else d - 0.5 * beta
    return total / len(p)


def bce_slow(logits, labels):
    pos, neg = [], []
    for z, y in zip(np.ravel(logits), np.ravel(labels)):
        val = math.log1p(math.exp(-abs(z))) + max(z, 0.0) - z * y
        (pos if y == 1.0 else neg).append(val)
    if pos and neg:
        return 0.5 * sum(pos) / len(pos) + 0.5 * sum(neg) / len(neg)
    present = pos or neg
    return sum(present) / len(present)


def total_loss_slow(out, tgt, lambdas, beta=1.0):
    pos = tgt["labels"] == 1.0
    terms = [bce_slow(out["confidence"], tgt["labels"])]
    for name in ("bbox", "distance", "head_pose", "gaze", "face_landmarks", "eye_landmarks"):
        terms.append(smooth_l1_slow(out[name][pos], tgt[name][pos], beta))
    return sum(l * t for l, t in zip(lambdas, terms))


# --- bundle construction ----------------------------------------------------


def fusion_instance(rng, h, w, c_l=5, c_h=3, d_k=6, n_faces=2):
    return (
        rng.normal(size=(h, w, c_l)),
        rng.normal(size=(n_faces, c_h)),
        rng.normal(size=(c_l, d_k)),
        rng.normal(size=(c_h, d_k)),
        rng.normal(size=(c_h, c_l)),
        rng.normal(size=(h, w, c_l)),
        (rng.uniform(size=(n_faces, h, w)) > 0.4).astype(float),
    )


def main(out_dir="goldens/kernels"):
    rng = np.random.default_rng(20240816)
    tensors = {}
    checks = []

    conv_in = rng.normal(size=(7, 7, 2))
    conv_w = rng.normal(size=(3, 2, 3, 3))
    rot_weights = [0.4, 0.3, 0.2, 0.1]
    tensors["rotconv_in"] = conv_in
    tensors["rotconv_w"] = conv_w
    tensors["rotconv_out"] = rot_conv_slow(conv_in, conv_w, rot_weights, padding=1)
    checks.append({
        "op": "rot_conv_forward",
        "inputs": {"input": "rotconv_in", "base_weights": "rotconv_w"},
        "params": {"rotation_weights": rot_weights, "stride": 1, "padding": 1},
        "expected": "rotconv_out",
    })

    gap_in = rng.normal(size=(3, 4, 5, 6))
    tensors["gap_in"] = gap_in
    tensors["gap_out"] = avg_pool_slow(gap_in)
    checks.append({
        "op": "global_avg_pool",
        "inputs": {"input": "gap_in"},
        "expected": "gap_out",
    })

    fl_in = rng.normal(size=(4, 5, 3))
    fl_pe = rng.normal(size=(4, 5, 3))
    tensors["flatten_in"] = fl_in
    tensors["flatten_pe"] = fl_pe
    tensors["flatten_out"] = flatten_slow(fl_in, fl_pe)
    checks.append({
        "op": "flatten_with_pe",
        "inputs": {"input": "flatten_in", "positional_encoding": "flatten_pe"},
        "expected": "flatten_out",
    })

    q = rng.normal(size=(6, 4))
    k = rng.normal(size=(3, 4))
    v = rng.normal(size=(3, 5))
    tensors["attn_q"], tensors["attn_k"], tensors["attn_v"] = q, k, v
    tensors["attn_out"] = attention_slow(q, k, v)
    checks.append({
        "op": "cross_attention",
        "inputs": {"queries": "attn_q", "keys": "attn_k", "values": "attn_v"},
        "expected": "attn_out",
    })

    f_low, pooled, w_q, w_k, w_v, pe, masks = fusion_instance(rng, 6, 5)
    tensors.update({
        "fuse_f_low": f_low, "fuse_pooled": pooled, "fuse_wq": w_q,
        "fuse_wk": w_k, "fuse_wv": w_v, "fuse_pe": pe, "fuse_masks": masks,
        "fuse_out": fuse_slow(f_low, pooled, w_q, w_k, w_v, pe, masks),
    })
    checks.append({
        "op": "fuse_scale",
        "inputs": {
            "f_low": "fuse_f_low", "f_high_pooled": "fuse_pooled",
            "w_query": "fuse_wq", "w_key": "fuse_wk", "w_value": "fuse_wv",
            "positional_encoding": "fuse_pe", "masks": "fuse_masks",
        },
        "expected": "fuse_out",
    })

    ms_pooled = rng.normal(size=(2, 3))
    ms_inputs = {"f_high_pooled": "ms_pooled"}
    tensors["ms_pooled"] = ms_pooled
    expected_names = []
    for s, (h, w) in enumerate(((8, 8), (6, 6), (4, 4))):
        f_low, _, w_q, w_k, w_v, pe, masks = fusion_instance(rng, h, w)
        tensors[f"ms_f_low_{s}"] = f_low
        tensors[f"ms_wq_{s}"] = w_q
        tensors[f"ms_wk_{s}"] = w_k
        tensors[f"ms_wv_{s}"] = w_v
        tensors[f"ms_pe_{s}"] = pe
        tensors[f"ms_masks_{s}"] = masks
        tensors[f"ms_out_{s}"] = fuse_slow(f_low, ms_pooled, w_q, w_k, w_v, pe, masks)
        ms_inputs.update({
            f"f_low_{s}": f"ms_f_low_{s}", f"w_query_{s}": f"ms_wq_{s}",
            f"w_key_{s}": f"ms_wk_{s}", f"w_value_{s}": f"ms_wv_{s}",
            f"positional_encoding_{s}": f"ms_pe_{s}", f"masks_{s}": f"ms_masks_{s}",
        })
        expected_names.append(f"ms_out_{s}")
    checks.append({"op": "multi_scale_fuse", "inputs": ms_inputs, "expected": expected_names})

    sl_pred = rng.normal(size=23)
    sl_tgt = rng.normal(size=23)
    tensors["sl1_pred"], tensors["sl1_target"] = sl_pred, sl_tgt
    tensors["sl1_out"] = np.float64(smooth_l1_slow(sl_pred, sl_tgt, 0.8))
    checks.append({
        "op": "smooth_l1",
        "inputs": {"pred": "sl1_pred", "target": "sl1_target"},
        "params": {"beta": 0.8},
        "expected": "sl1_out",
    })

    bce_logits = rng.normal(size=40)
    bce_labels = (rng.uniform(size=40) > 0.7).astype(float)
    tensors["bce_logits"], tensors["bce_labels"] = bce_logits, bce_labels
    tensors["bce_out"] = np.float64(bce_slow(bce_logits, bce_labels))
    checks.append({
        "op": "balanced_bce",
        "inputs": {"logits": "bce_logits", "labels": "bce_labels"},
        "expected": "bce_out",
    })

    anchors = 14
    labels = np.zeros(anchors)
    labels[rng.choice(anchors, size=4, replace=False)] = 1.0
    out = {
        "confidence": rng.normal(size=anchors),
        "bbox": rng.normal(size=(anchors, 4)),
        "distance": rng.normal(size=anchors),
        "head_pose": rng.normal(size=(anchors, 3)),
        "gaze": rng.normal(size=(anchors, 3)),
        "face_landmarks": rng.normal(size=(anchors, 26)),
        "eye_landmarks": rng.normal(size=(anchors, 8)),
    }
    tgt = {name: rng.normal(size=arr.shape) for name, arr in out.items() if name != "confidence"}
    tgt["labels"] = labels
    lambdas = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
    inputs = {}
    for name, arr in out.items():
        tensors[f"tl_out_{name}"] = arr
        inputs[f"out_{name}"] = f"tl_out_{name}"
    for name, arr in tgt.items():
        tensors[f"tl_tgt_{name}"] = arr
        inputs[f"tgt_{name}"] = f"tl_tgt_{name}"
    tensors["tl_total"] = np.float64(total_loss_slow(out, tgt, lambdas))
    checks.append({
        "op": "total_loss",
        "inputs": inputs,
        "params": {"lambdas": lambdas},
        "expected": "tl_total",
    })

    write_bundle(out_dir, tensors, checks)
    print(f"wrote {len(tensors)} tensors, {len(checks)} checks -> {out_dir}")


if __name__ == "__main__":
    main(*sys.argv[1:])
