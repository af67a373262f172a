"""Naive, loop-based reference implementations used as independent oracles.

Everything here is deliberately written the slow, obvious way (explicit
Python loops, no shared code with the package) so tests compare two
independent routes to the same quantity.
"""

import itertools
import math

import numpy as np


def naive_conv2d(image, weights, stride=1, padding=0):
    img = np.asarray(image, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    c_out, c_in, k, _ = w.shape
    if padding:
        img = np.pad(img, ((padding, padding), (padding, padding), (0, 0)))
    h, wid, _ = img.shape
    oh = (h - k) // stride + 1
    ow = (wid - k) // stride + 1
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


def naive_avg_pool(features):
    f = np.asarray(features, dtype=np.float64)
    n, h, w, c = f.shape
    out = np.zeros((n, c))
    for ni in range(n):
        for ci in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += f[ni, i, j, ci]
            out[ni, ci] = acc / (h * w)
    return out


def naive_flatten_pe(features, pe):
    f = np.asarray(features, dtype=np.float64)
    p = np.asarray(pe, dtype=np.float64)
    h, w, c = f.shape
    out = np.zeros((h * w, c))
    for i in range(h):
        for j in range(w):
            out[i * w + j] = f[i, j] + p[i, j]
    return out


def naive_attention(queries, keys, values):
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    m, dk = q.shape
    n = k.shape[0]
    out = np.zeros((m, v.shape[1]))
    for i in range(m):
        logits = [sum(q[i, d] * k[j, d] for d in range(dk)) / math.sqrt(dk) for j in range(n)]
        peak = max(logits)
        weights = [math.exp(l - peak) for l in logits]
        total = sum(weights)
        for j in range(n):
            out[i] += (weights[j] / total) * v[j]
    return out


def naive_fuse(f_low, f_high_pooled, w_q, w_k, w_v, pe, masks):
    f = np.asarray(f_low, dtype=np.float64)
    h, w, c = f.shape
    seq = naive_flatten_pe(f, pe)
    q = seq @ np.asarray(w_q, dtype=np.float64)
    k = np.asarray(f_high_pooled, dtype=np.float64) @ np.asarray(w_k, dtype=np.float64)
    v = np.asarray(f_high_pooled, dtype=np.float64) @ np.asarray(w_v, dtype=np.float64)
    att = naive_attention(q, k, v)
    m = np.asarray(masks, dtype=np.float64)
    combined = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            combined[i, j] = max(m[n, i, j] for n in range(m.shape[0]))
    out = f.copy()
    for i in range(h):
        for j in range(w):
            out[i, j] = f[i, j] + combined[i, j] * att[i * w + j]
    return out


def naive_smooth_l1(pred, target, beta):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    total = 0.0
    for a, b in zip(p, t):
        d = abs(a - b)
        total += 0.5 * d * d / beta if d < beta else d - 0.5 * beta
    return total / len(p)


def naive_balanced_bce(logits, labels):
    z = np.asarray(logits, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    pos, neg = [], []
    for zi, yi in zip(z, y):
        val = math.log1p(math.exp(-abs(zi))) + max(zi, 0.0) - zi * yi
        (pos if yi == 1.0 else neg).append(val)
    if pos and neg:
        return 0.5 * sum(pos) / len(pos) + 0.5 * sum(neg) / len(neg)
    present = pos or neg
    return sum(present) / len(present)


def naive_bilinear(image, x, y):
    """Scalar clamped bilinear sample at a pixel-center coordinate."""
    h, w = image.shape[:2]
    fx = min(max(x - 0.5, 0.0), w - 1.0)
    fy = min(max(y - 0.5, 0.0), h - 1.0)
    x0 = int(math.floor(fx))
    y0 = int(math.floor(fy))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    tx = fx - x0
    ty = fy - y0
    out = np.zeros(image.shape[2], dtype=np.float64)
    for c in range(image.shape[2]):
        top = image[y0, x0, c] * (1 - tx) + image[y0, x1, c] * tx
        bot = image[y1, x0, c] * (1 - tx) + image[y1, x1, c] * tx
        out[c] = top * (1 - ty) + bot * ty
    return out


def iou_xywh(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0.0 else 0.0


def optimal_match_count(gt_boxes, pred_boxes, iou_threshold):
    """Exhaustive best one-to-one assignment (feasible for <= 5x5)."""
    n_pred = len(pred_boxes)
    best = 0
    indices = list(range(len(gt_boxes)))
    for r in range(1, min(n_pred, len(indices)) + 1):
        for gt_subset in itertools.permutations(indices, r):
            for pred_subset in itertools.combinations(range(n_pred), r):
                ok = all(
                    iou_xywh(pred_boxes[p], gt_boxes[g]) >= iou_threshold
                    for g, p in zip(gt_subset, pred_subset)
                )
                if ok:
                    best = max(best, r)
    return best


def naive_bin_means(values, attributes, edges):
    buckets = [[] for _ in range(len(edges) - 1)]
    overflow = []
    for val, attr in zip(values, attributes):
        for bi in range(len(edges) - 1):
            if edges[bi] <= attr < edges[bi + 1]:
                buckets[bi].append(val)
                break
        else:
            overflow.append(val)
    mean = lambda xs: (sum(xs) / len(xs)) if xs else None
    return [mean(b) for b in buckets], mean(overflow)


def rotate_about_axis(vector, axis, angle_rad):
    """Rodrigues rotation, written out long-hand."""
    v = np.asarray(vector, dtype=np.float64)
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    c = math.cos(angle_rad)
    s = math.sin(angle_rad)
    return v * c + np.cross(k, v) * s + k * float(np.dot(k, v)) * (1.0 - c)


def perpendicular_axis(vector):
    v = np.asarray(vector, dtype=np.float64)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(helper, v)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    axis = np.cross(v, helper)
    return axis / np.linalg.norm(axis)
