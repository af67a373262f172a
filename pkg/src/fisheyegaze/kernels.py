"""Deterministic forward-only reference kernels for the model's blocks.

These are executable specifications, not a training stack: plain float64
numpy, no backward pass, bit-reproducible on identical inputs. Feature
maps are HWC (batched: NHWC), convolution weights are
(C_out, C_in, k, k).

The rotational convolution aggregates a weighted average of the responses
of four 90-degree-rotated copies of one base kernel. The dual-resolution
fusion injects pooled per-face descriptors into a global feature map by
cross-attention (low-resolution positions as queries), adds the result
back residually and restricts the update with per-face spatial masks.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes are inconsistent."""


class EmptyKeysError(ValueError):
    """Cross-attention received zero key/value rows (no detected faces)."""


class MissingScaleError(ValueError):
    """Multi-scale fusion expects exactly three scales."""


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Rotational convolution


@dataclass
class RotConvKernel:
    """Base conv weights plus the four rotation-average weights.

    ``base_weights`` is (C_out, C_in, k, k) with odd k so 90-degree
    rotations keep the center tap in place; ``rotation_weights`` must sum
    to 1.
    """

    base_weights: np.ndarray
    rotation_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        w = _arr(self.base_weights)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeMismatchError("base_weights must be (C_out, C_in, k, k)")
        if w.shape[2] % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.base_weights = w
        rw = tuple(float(v) for v in self.rotation_weights)
        if len(rw) != 4 or any(v < 0.0 for v in rw):
            raise ValueError("rotation_weights must be 4 nonnegative reals")
        if abs(sum(rw) - 1.0) > 1e-9:
            raise ValueError(f"rotation_weights sum to {sum(rw)!r}, expected 1")
        self.rotation_weights = rw


def conv2d(image: np.ndarray, weights: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Reference 2D cross-correlation, HWC in / HWC out, zero padding."""
    img = _arr(image)
    w = _arr(weights)
    if img.ndim != 3:
        raise ShapeMismatchError("input must be HxWxC")
    if w.ndim != 4 or w.shape[1] != img.shape[2]:
        raise ShapeMismatchError(
            f"weights (C_out, C_in, k, k) must match input channels: {w.shape} vs {img.shape}"
        )
    k = w.shape[2]
    if padding:
        img = np.pad(img, ((padding, padding), (padding, padding), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(0, 1))
    windows = windows[::stride, ::stride]
    # windows: (H', W', C_in, k, k); weights: (C_out, C_in, k, k)
    return np.einsum("ijcab,ocab->ijo", windows, w, optimize=True)


def rot_conv_forward(
    image: np.ndarray, kernel: RotConvKernel, stride: int = 1, padding: int | None = None
) -> np.ndarray:
    """Weighted average of convolutions with four 90-degree kernel rotations.

    Default padding ``(k - 1) / 2`` preserves the spatial shape at stride 1.
    """
    w = kernel.base_weights
    k = w.shape[2]
    if padding is None:
        padding = (k - 1) // 2
    out = None
    for r, weight in enumerate(kernel.rotation_weights):
        rotated = np.rot90(w, r, axes=(2, 3))
        term = weight * conv2d(image, rotated, stride=stride, padding=padding)
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# Dual-resolution fusion


def global_avg_pool(features: np.ndarray) -> np.ndarray:
    """Mean over the spatial axes of an NHWC stack of face features."""
    f = _arr(features)
    if f.ndim != 4:
        raise ShapeMismatchError("expected NxHxWxC")
    return f.mean(axis=(1, 2))


def flatten_with_pe(features: np.ndarray, positional_encoding: np.ndarray) -> np.ndarray:
    """Row-major flattening of ``features + positional_encoding``.

    Grid position (i, j) maps to sequence row ``i * W + j``.
    """
    f = _arr(features)
    p = _arr(positional_encoding)
    if f.ndim != 3 or f.shape != p.shape:
        raise ShapeMismatchError(f"feature/PE shapes differ: {f.shape} vs {p.shape}")
    h, w, c = f.shape
    return (f + p).reshape(h * w, c)


def sinusoidal_position_encoding(height: int, width: int, channels: int) -> np.ndarray:
    """Fixed 2D sine/cosine encoding; half the channels per spatial axis."""
    if channels % 2 != 0:
        raise ShapeMismatchError("channel count must be even for the 2D encoding")
    half = channels // 2
    idx = np.arange(half, dtype=np.float64)
    div = np.power(10000.0, (2.0 * (idx // 2)) / half)
    ys = np.arange(height, dtype=np.float64)[:, None] / div[None, :]
    xs = np.arange(width, dtype=np.float64)[:, None] / div[None, :]

    def interleave(angles):
        enc = np.empty_like(angles)
        enc[:, 0::2] = np.sin(angles[:, 0::2])
        enc[:, 1::2] = np.cos(angles[:, 1::2])
        return enc

    pe = np.zeros((height, width, channels))
    pe[:, :, :half] = interleave(ys)[:, None, :]
    pe[:, :, half:] = interleave(xs)[None, :, :]
    return pe


def cross_attention(queries: np.ndarray, keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V with row-max stabilization."""
    q = _arr(queries)
    k = _arr(keys)
    v = _arr(values)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeMismatchError("queries/keys/values must be 2-D")
    if k.shape[0] == 0:
        raise EmptyKeysError("no key rows: no detected faces to attend over")
    if q.shape[1] != k.shape[1]:
        raise ShapeMismatchError(f"key dim mismatch: {q.shape[1]} vs {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatchError(f"key/value row mismatch: {k.shape[0]} vs {v.shape[0]}")
    logits = q @ k.T / math.sqrt(q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ v


@dataclass
class FusionWeights:
    """Projection matrices and positional encoding for one fusion scale.

    Queries come from the global map (input dim C_l), keys/values from the
    pooled face descriptors (input dim C_h); values project back to C_l so
    the residual addition is well-typed.
    """

    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    positional_encoding: np.ndarray
    d_k: int | None = None

    def __post_init__(self):
        self.w_query = _arr(self.w_query)
        self.w_key = _arr(self.w_key)
        self.w_value = _arr(self.w_value)
        self.positional_encoding = _arr(self.positional_encoding)
        if self.w_query.ndim != 2 or self.w_key.ndim != 2 or self.w_value.ndim != 2:
            raise ShapeMismatchError("projection weights must be matrices")
        if self.d_k is None:
            self.d_k = int(self.w_query.shape[1])
        if self.w_query.shape[1] != self.d_k or self.w_key.shape[1] != self.d_k:
            raise ShapeMismatchError("query/key projections must share output dim d_k")
        if self.w_key.shape[0] != self.w_value.shape[0]:
            raise ShapeMismatchError("key/value projections must share input dim C_h")
        if self.w_value.shape[1] != self.w_query.shape[0]:
            raise ShapeMismatchError("value output dim must equal C_l for the residual")


def _combined_mask(masks: np.ndarray, grid_hw: tuple[int, int]) -> np.ndarray:
    m = _arr(masks)
    if m.ndim == 2:
        m = m[None]
    if m.ndim != 3 or m.shape[1:] != grid_hw:
        raise ShapeMismatchError(f"masks must be (N, {grid_hw[0]}, {grid_hw[1]})")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("masks must be binary")
    # Per-face masks combine by elementwise max before gating the update.
    return m.max(axis=0)


def fuse_scale(
    f_low: np.ndarray,
    f_high_pooled: np.ndarray,
    weights: FusionWeights,
    masks: np.ndarray,
) -> np.ndarray:
    """Residual, mask-gated cross-attention update of one global scale.

    ``f_low`` is HxWxC_l, ``f_high_pooled`` is NxC_h (one pooled descriptor
    per detected face), ``masks`` is (N, H, W) binary. The attention output
    sequence is reshaped back to the grid by inverting the row-major
    flattening.
    """
    f = _arr(f_low)
    pooled = _arr(f_high_pooled)
    if f.ndim != 3:
        raise ShapeMismatchError("f_low must be HxWxC")
    if pooled.ndim != 2:
        raise ShapeMismatchError("f_high_pooled must be NxC")
    h, w, c_l = f.shape
    seq = flatten_with_pe(f, weights.positional_encoding)
    q = seq @ weights.w_query
    k = pooled @ weights.w_key
    v = pooled @ weights.w_value
    attended = cross_attention(q, k, v).reshape(h, w, c_l)
    gate = _combined_mask(masks, (h, w))
    return f + gate[:, :, None] * attended


def multi_scale_fuse(f_lows, f_high_pooled, weights_per_scale, masks_per_scale) -> list[np.ndarray]:
    """Apply :func:`fuse_scale` independently at each of the three scales."""
    if not (len(f_lows) == len(weights_per_scale) == len(masks_per_scale) == 3):
        raise MissingScaleError(
            f"expected 3 scales, got {len(f_lows)}/{len(weights_per_scale)}/{len(masks_per_scale)}"
        )
    return [
        fuse_scale(f_lows[s], f_high_pooled, weights_per_scale[s], masks_per_scale[s])
        for s in range(3)
    ]


def bbox_masks(bboxes, image_size: tuple[int, int], grid_hw: tuple[int, int]) -> np.ndarray:
    """Rasterize per-face pixel boxes onto a feature grid.

    A cell turns on when the box covers at least half its area; the cell
    under the box center is always on, so masks are never empty.
    """
    img_w, img_h = image_size
    gh, gw = grid_hw
    cell_w = img_w / gw
    cell_h = img_h / gh
    boxes = np.atleast_2d(_arr(bboxes))
    out = np.zeros((boxes.shape[0], gh, gw))
    cols = np.arange(gw)
    rows = np.arange(gh)
    for i, (x, y, w, h) in enumerate(boxes):
        ox = np.minimum(x + w, (cols + 1) * cell_w) - np.maximum(x, cols * cell_w)
        oy = np.minimum(y + h, (rows + 1) * cell_h) - np.maximum(y, rows * cell_h)
        frac = np.clip(oy, 0.0, None)[:, None] * np.clip(ox, 0.0, None)[None, :]
        out[i] = frac >= 0.5 * cell_w * cell_h
        cc = min(max(int((x + w / 2.0) / cell_w), 0), gw - 1)
        cr = min(max(int((y + h / 2.0) / cell_h), 0), gh - 1)
        out[i, cr, cc] = 1.0
    return out


# ---------------------------------------------------------------------------
# Losses


def smooth_l1(pred, target, beta: float = 1.0) -> float:
    """Huber-style loss, mean-reduced over all elements."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    p = _arr(pred)
    t = _arr(target)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"pred/target shapes differ: {p.shape} vs {t.shape}")
    d = np.abs(p - t)
    loss = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    return float(loss.mean())


def balanced_bce(logits, labels) -> float:
    """0.5 * mean BCE over positives + 0.5 * mean BCE over negatives.

    With a single class present, the mean over that class alone.
    """
    z = _arr(logits).reshape(-1)
    y = _arr(labels).reshape(-1)
    if z.shape != y.shape:
        raise ShapeMismatchError("logits/labels length mismatch")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary")
    bce = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    pos = y == 1.0
    neg = ~pos
    if pos.any() and neg.any():
        return float(0.5 * bce[pos].mean() + 0.5 * bce[neg].mean())
    return float(bce.mean())


@dataclass
class MultiTaskOutput:
    """Per-anchor head outputs: confidence logits plus the regressions."""

    confidence: np.ndarray
    bbox: np.ndarray
    distance: np.ndarray
    head_pose: np.ndarray
    gaze: np.ndarray
    face_landmarks: np.ndarray
    eye_landmarks: np.ndarray

    def __post_init__(self):
        for name in ("confidence", "bbox", "distance", "head_pose", "gaze",
                     "face_landmarks", "eye_landmarks"):
            setattr(self, name, _arr(getattr(self, name)))
        n = self.confidence.shape[0]
        for name in ("bbox", "distance", "head_pose", "gaze", "face_landmarks", "eye_landmarks"):
            if getattr(self, name).shape[0] != n:
                raise ShapeMismatchError(f"{name} anchor count differs from confidence")


@dataclass
class MultiTaskTargets:
    labels: np.ndarray
    bbox: np.ndarray
    distance: np.ndarray
    head_pose: np.ndarray
    gaze: np.ndarray
    face_landmarks: np.ndarray
    eye_landmarks: np.ndarray

    def __post_init__(self):
        for name in ("labels", "bbox", "distance", "head_pose", "gaze",
                     "face_landmarks", "eye_landmarks"):
            setattr(self, name, _arr(getattr(self, name)))


LOSS_TERMS = ("confidence", "bbox", "distance", "head_pose", "gaze",
              "face_landmarks", "eye_landmarks")


@dataclass
class TotalLoss:
    total: float
    terms: dict[str, float]
    no_positives: bool


def total_loss(
    outputs: MultiTaskOutput,
    targets: MultiTaskTargets,
    lambdas,
    beta: float = 1.0,
) -> TotalLoss:
    """Weighted multi-task loss: balanced BCE for confidence, smooth L1 on
    positive anchors for every regression head.

    ``lambdas`` weights the seven terms in the order of ``LOSS_TERMS``.
    Without positive anchors the regression terms contribute zero and the
    result is flagged.
    """
    lam = [float(v) for v in lambdas]
    if len(lam) != 7:
        raise ValueError("expected 7 loss weights")
    if any(v < 0.0 for v in lam):
        raise ValueError("loss weights must be nonnegative")
    pos = _arr(targets.labels).reshape(-1) == 1.0
    terms = {"confidence": balanced_bce(outputs.confidence, targets.labels)}
    no_positives = not bool(pos.any())
    for name in LOSS_TERMS[1:]:
        if no_positives:
            terms[name] = 0.0
        else:
            terms[name] = smooth_l1(
                getattr(outputs, name)[pos], getattr(targets, name)[pos], beta
            )
    total = sum(w * terms[name] for w, name in zip(lam, LOSS_TERMS))
    return TotalLoss(total=float(total), terms=terms, no_positives=no_positives)


# ---------------------------------------------------------------------------
# Tensor serialization and the verification bundle
#
# Binary layout (all little-endian): int64 rank, int64 dims, then the
# float64 payload row-major. A bundle is a directory of one file per
# tensor plus bundle.json: {"tensors": {name: file}, "checks": [...]};
# each check entry names an op, its input tensors/params and the expected
# output tensor(s).


def save_tensor(path, array) -> None:
    a = _arr(array)
    if a.ndim and not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)  # would promote 0-d to 1-d, so guard
    with open(path, "wb") as fh:
        fh.write(np.array([a.ndim], dtype="<i8").tobytes())
        fh.write(np.array(a.shape, dtype="<i8").tobytes())
        fh.write(a.astype("<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    rank = int(np.frombuffer(raw, dtype="<i8", count=1)[0])
    dims = np.frombuffer(raw, dtype="<i8", count=rank, offset=8)
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=8 * (1 + rank))
    expected = 8 * (1 + rank) + 8 * count
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} does not match header ({expected})")
    return data.reshape(dims) if rank else np.float64(data[0])


def write_bundle(directory, tensors: dict[str, np.ndarray], checks: list[dict]) -> None:
    os.makedirs(directory, exist_ok=True)
    index = {}
    for name, array in tensors.items():
        filename = f"{name}.t64"
        save_tensor(os.path.join(directory, filename), array)
        index[name] = filename
    with open(os.path.join(directory, "bundle.json"), "w", encoding="utf-8") as fh:
        json.dump({"tensors": index, "checks": checks}, fh, indent=2)
        fh.write("\n")


def load_bundle(directory) -> tuple[dict[str, np.ndarray], list[dict]]:
    with open(os.path.join(directory, "bundle.json"), "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    tensors = {
        name: load_tensor(os.path.join(directory, filename))
        for name, filename in spec.get("tensors", {}).items()
    }
    return tensors, spec.get("checks", [])


def _run_check(tensors: dict[str, np.ndarray], check: dict):
    op = check["op"]
    get = lambda key: tensors[check["inputs"][key]]
    params = check.get("params", {})
    if op == "rot_conv_forward":
        kernel = RotConvKernel(
            base_weights=get("base_weights"),
            rotation_weights=tuple(params.get("rotation_weights", (0.25,) * 4)),
        )
        return rot_conv_forward(
            get("input"), kernel,
            stride=int(params.get("stride", 1)),
            padding=params.get("padding"),
        )
    if op == "global_avg_pool":
        return global_avg_pool(get("input"))
    if op == "flatten_with_pe":
        return flatten_with_pe(get("input"), get("positional_encoding"))
    if op == "cross_attention":
        return cross_attention(get("queries"), get("keys"), get("values"))
    if op == "fuse_scale":
        weights = FusionWeights(
            w_query=get("w_query"), w_key=get("w_key"), w_value=get("w_value"),
            positional_encoding=get("positional_encoding"),
        )
        return fuse_scale(get("f_low"), get("f_high_pooled"), weights, get("masks"))
    if op == "multi_scale_fuse":
        weights = [
            FusionWeights(
                w_query=get(f"w_query_{s}"), w_key=get(f"w_key_{s}"),
                w_value=get(f"w_value_{s}"),
                positional_encoding=get(f"positional_encoding_{s}"),
            )
            for s in range(3)
        ]
        return multi_scale_fuse(
            [get(f"f_low_{s}") for s in range(3)],
            get("f_high_pooled"),
            weights,
            [get(f"masks_{s}") for s in range(3)],
        )
    if op == "smooth_l1":
        return np.float64(smooth_l1(get("pred"), get("target"), float(params.get("beta", 1.0))))
    if op == "balanced_bce":
        return np.float64(balanced_bce(get("logits"), get("labels")))
    if op == "total_loss":
        outputs = MultiTaskOutput(
            confidence=get("out_confidence"), bbox=get("out_bbox"),
            distance=get("out_distance"), head_pose=get("out_head_pose"),
            gaze=get("out_gaze"), face_landmarks=get("out_face_landmarks"),
            eye_landmarks=get("out_eye_landmarks"),
        )
        targets = MultiTaskTargets(
            labels=get("tgt_labels"), bbox=get("tgt_bbox"),
            distance=get("tgt_distance"), head_pose=get("tgt_head_pose"),
            gaze=get("tgt_gaze"), face_landmarks=get("tgt_face_landmarks"),
            eye_landmarks=get("tgt_eye_landmarks"),
        )
        return np.float64(total_loss(outputs, targets, params["lambdas"]).total)
    raise ValueError(f"unknown op {op!r} in bundle")


@dataclass(frozen=True)
class CheckResult:
    op: str
    max_abs_deviation: float


def verify_bundle(directory) -> list[CheckResult]:
    """Re-run every stored check and report the deviation per op."""
    tensors, checks = load_bundle(directory)
    results = []
    for check in checks:
        actual = _run_check(tensors, check)
        expected = check["expected"]
        if isinstance(expected, list):
            dev = max(
                float(np.max(np.abs(_arr(a) - tensors[name])))
                for a, name in zip(actual, expected)
            )
        else:
            dev = float(np.max(np.abs(_arr(actual) - tensors[expected])))
        results.append(CheckResult(op=check["op"], max_abs_deviation=dev))
    return results
