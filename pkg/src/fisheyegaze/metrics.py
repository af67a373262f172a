"""Detection-matched evaluation: precision/recall, angular errors, bins.

Matching is greedy in descending confidence (ties broken by lower
prediction index): each retained prediction takes the unmatched ground
truth with the highest IoU above threshold. Predictions below the
confidence threshold are discarded before matching and do not count
against precision. Gaze, head-pose and distance errors are averaged over
matched pairs only.

Head-pose error is the angle between head-forward unit vectors derived
from yaw/pitch/roll, matching a single-degrees error column. Distance
error is mean absolute error in cm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pipeline import HeadPose, SampleRecord, head_forward_vector

UNIT_TOLERANCE = 1e-6

BIN_SCHEMES: dict[str, tuple[float, ...]] = {
    # Left-closed right-open intervals; an infinite last edge means the
    # final bin is open-ended. Samples outside land in the overflow bucket.
    "face_width": (30.0, 60.0, 90.0, 120.0, 150.0, math.inf),
    "yaw": (0.0, 10.0, 20.0, 30.0, 45.0, 60.0, 90.0),
    "distance": (30.0, 50.0, 70.0, 90.0, math.inf),
}


class NonUnitInputError(ValueError):
    """An input vector deviates from unit length beyond tolerance."""


class ManifestMismatchError(ValueError):
    """Ground-truth and prediction manifests cover different image sets."""


class UnknownSchemeError(ValueError):
    """Unrecognized binning scheme name."""


def angular_error(a, b) -> float:
    """Angle between two unit vectors in degrees, clamped against rounding."""
    va = np.asarray(a, dtype=np.float64).reshape(3)
    vb = np.asarray(b, dtype=np.float64).reshape(3)
    for v in (va, vb):
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOLERANCE:
            raise NonUnitInputError(f"vector {v.tolist()} is not unit length")
    dot = float(np.dot(va, vb))
    return math.degrees(math.acos(max(-1.0, min(1.0, dot))))


def iou_xywh(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0.0 else 0.0


@dataclass
class Prediction:
    bbox: tuple[float, float, float, float]
    confidence: float
    gaze_cam: np.ndarray
    distance_cm: float
    head_pose: HeadPose

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        self.gaze_cam = np.asarray(self.gaze_cam, dtype=np.float64).reshape(3)


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]  # (gt id, prediction index, IoU)
    unmatched_gt: list[int]
    unmatched_pred: list[int]
    n_discarded: int = 0


def match_detections(
    gt_boxes,
    predictions: list[Prediction],
    iou_threshold: float = 0.5,
    conf_threshold: float = 0.5,
    gt_ids=None,
) -> MatchResult:
    """Greedy confidence-ordered one-to-one matching."""
    if not 0.0 < iou_threshold < 1.0 or not 0.0 < conf_threshold < 1.0:
        raise ValueError("thresholds must lie in (0, 1)")
    ids = list(range(len(gt_boxes))) if gt_ids is None else list(gt_ids)
    retained = [i for i, p in enumerate(predictions) if p.confidence >= conf_threshold]
    order = sorted(retained, key=lambda i: (-predictions[i].confidence, i))
    taken = [False] * len(gt_boxes)
    pairs = []
    matched_preds = set()
    for pi in order:
        best_iou = 0.0
        best_gt = -1
        for gi, box in enumerate(gt_boxes):
            if taken[gi]:
                continue
            iou = iou_xywh(predictions[pi].bbox, box)
            if iou > best_iou:
                best_iou = iou
                best_gt = gi
        if best_gt >= 0 and best_iou >= iou_threshold:
            taken[best_gt] = True
            matched_preds.add(pi)
            pairs.append((ids[best_gt], pi, best_iou))
    return MatchResult(
        pairs=pairs,
        unmatched_gt=[ids[g] for g in range(len(gt_boxes)) if not taken[g]],
        unmatched_pred=[i for i in retained if i not in matched_preds],
        n_discarded=len(predictions) - len(retained),
    )


@dataclass
class PairError:
    image: str
    person_id: int
    iou: float
    gaze_error_deg: float
    head_pose_error_deg: float
    distance_error_cm: float
    gt_face_width_px: float
    gt_abs_yaw_deg: float
    gt_distance_cm: float


@dataclass
class BinnedMetrics:
    scheme: str
    edges: tuple[float, ...]
    counts: list[int]
    means: list[float | None]
    overflow_count: int = 0
    overflow_mean: float | None = None

    def labels(self) -> list[str]:
        out = []
        for lo, hi in zip(self.edges[:-1], self.edges[1:]):
            out.append(f">{lo:g}" if math.isinf(hi) else f"{lo:g}-{hi:g}")
        return out


@dataclass
class EvalReport:
    precision: float
    recall: float
    gaze_error_deg: float | None
    head_pose_error_deg: float | None
    distance_error_cm: float | None
    adjusted_gaze_error_deg: float | None
    n_gt: int
    n_retained_pred: int
    n_matched: int
    no_predictions: bool
    pairs: list[PairError] = field(default_factory=list)
    bins: dict[str, BinnedMetrics] = field(default_factory=dict)

    def pair_errors(self) -> dict[tuple[str, int], float]:
        """Gaze error per matched ground-truth identity."""
        return {(p.image, p.person_id): p.gaze_error_deg for p in self.pairs}


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    conf_threshold: float = 0.5
    bin_schemes: tuple[str, ...] = ()


def _mean(values) -> float | None:
    return float(np.mean(values)) if len(values) else None


def evaluate(
    gt_records: list[SampleRecord],
    pred_records: list[SampleRecord],
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Match per image, then aggregate detection and error metrics.

    Prediction records mirror the ground-truth schema plus a per-person
    ``confidence`` field (missing confidences default to 1.0). Raises
    :class:`ManifestMismatchError` when the image sets differ.
    """
    gt_by_image = {r.image_path: r for r in gt_records}
    pred_by_image = {r.image_path: r for r in pred_records}
    if set(gt_by_image) != set(pred_by_image):
        only_gt = sorted(set(gt_by_image) - set(pred_by_image))[:3]
        only_pred = sorted(set(pred_by_image) - set(gt_by_image))[:3]
        raise ManifestMismatchError(
            f"image sets differ (gt-only: {only_gt}, pred-only: {only_pred})"
        )
    pairs: list[PairError] = []
    n_gt = 0
    n_retained = 0
    n_matched = 0
    for image, gt in sorted(gt_by_image.items()):
        preds = [
            Prediction(
                bbox=tuple(p.bbox),
                confidence=float(p.extra.get("confidence", 1.0)),
                gaze_cam=p.gaze_cam,
                distance_cm=p.distance_cm,
                head_pose=p.head_pose,
            )
            for p in pred_by_image[image].persons
        ]
        gt_boxes = [p.bbox for p in gt.persons]
        gt_ids = [p.person_id for p in gt.persons]
        result = match_detections(
            gt_boxes, preds, config.iou_threshold, config.conf_threshold, gt_ids=gt_ids
        )
        n_gt += len(gt_boxes)
        n_retained += len(preds) - result.n_discarded
        n_matched += len(result.pairs)
        by_id = {p.person_id: p for p in gt.persons}
        for gt_id, pred_idx, iou in result.pairs:
            g = by_id[gt_id]
            p = preds[pred_idx]
            pairs.append(
                PairError(
                    image=image,
                    person_id=gt_id,
                    iou=iou,
                    gaze_error_deg=angular_error(g.gaze_cam, p.gaze_cam),
                    head_pose_error_deg=angular_error(
                        head_forward_vector(g.head_pose), head_forward_vector(p.head_pose)
                    ),
                    distance_error_cm=abs(g.distance_cm - p.distance_cm),
                    gt_face_width_px=float(g.bbox[2]),
                    gt_abs_yaw_deg=abs(g.head_pose.yaw_deg),
                    gt_distance_cm=float(g.distance_cm),
                )
            )
    no_predictions = n_retained == 0
    precision = 1.0 if no_predictions else n_matched / n_retained
    recall = n_matched / n_gt if n_gt else 0.0
    gaze_errors = [p.gaze_error_deg for p in pairs]
    report = EvalReport(
        precision=precision,
        recall=recall,
        gaze_error_deg=_mean(gaze_errors),
        head_pose_error_deg=_mean([p.head_pose_error_deg for p in pairs]),
        distance_error_cm=_mean([p.distance_error_cm for p in pairs]),
        adjusted_gaze_error_deg=_mean(gaze_errors),
        n_gt=n_gt,
        n_retained_pred=n_retained,
        n_matched=n_matched,
        no_predictions=no_predictions,
        pairs=pairs,
    )
    for scheme in config.bin_schemes:
        report.bins[scheme] = bin_metrics(pairs, scheme)
    return report


@dataclass
class AdjustedGazeError:
    mean_a_deg: float | None
    mean_b_deg: float | None
    n_common: int
    empty_intersection: bool


def adjusted_gaze_error(report_a: EvalReport, report_b: EvalReport) -> AdjustedGazeError:
    """Gaze error restricted to ground truth detected by both methods."""
    errors_a = report_a.pair_errors()
    errors_b = report_b.pair_errors()
    common = sorted(set(errors_a) & set(errors_b))
    if not common:
        return AdjustedGazeError(None, None, 0, empty_intersection=True)
    return AdjustedGazeError(
        mean_a_deg=float(np.mean([errors_a[k] for k in common])),
        mean_b_deg=float(np.mean([errors_b[k] for k in common])),
        n_common=len(common),
        empty_intersection=False,
    )


def bin_metrics(pairs: list[PairError], scheme: str) -> BinnedMetrics:
    """Mean gaze error per interval of the named stratification scheme."""
    if scheme not in BIN_SCHEMES:
        raise UnknownSchemeError(f"unknown scheme {scheme!r}; options: {sorted(BIN_SCHEMES)}")
    edges = BIN_SCHEMES[scheme]
    attr = {
        "face_width": lambda p: p.gt_face_width_px,
        "yaw": lambda p: p.gt_abs_yaw_deg,
        "distance": lambda p: p.gt_distance_cm,
    }[scheme]
    buckets: list[list[float]] = [[] for _ in range(len(edges) - 1)]
    overflow: list[float] = []
    for pair in pairs:
        value = attr(pair)
        placed = False
        for bi, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
            if lo <= value < hi:
                buckets[bi].append(pair.gaze_error_deg)
                placed = True
                break
        if not placed:
            overflow.append(pair.gaze_error_deg)
    return BinnedMetrics(
        scheme=scheme,
        edges=edges,
        counts=[len(b) for b in buckets],
        means=[_mean(b) for b in buckets],
        overflow_count=len(overflow),
        overflow_mean=_mean(overflow),
    )


# ---------------------------------------------------------------------------
# Report rendering


def _fmt(value, digits=4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def report_table(report: EvalReport) -> str:
    """Aligned table in the conventional column order."""
    headers = ["Prc.", "Rec.", "Dist (cm)", "Head pose (deg)", "Gaze (deg)"]
    values = [
        f"{report.precision:.4f}",
        f"{report.recall:.4f}",
        _fmt(report.distance_error_cm, 3),
        _fmt(report.head_pose_error_deg, 3),
        _fmt(report.gaze_error_deg, 3),
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    line1 = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    line2 = "  ".join(v.ljust(w) for v, w in zip(values, widths))
    return f"{line1}\n{line2}"


def bins_table(binned: BinnedMetrics) -> str:
    rows = [f"bins[{binned.scheme}]"]
    for label, count, mean in zip(binned.labels(), binned.counts, binned.means):
        rows.append(f"  {label:>10}  n={count:<6d} gaze={_fmt(mean, 3)}")
    if binned.overflow_count:
        rows.append(
            f"  {'overflow':>10}  n={binned.overflow_count:<6d} gaze={_fmt(binned.overflow_mean, 3)}"
        )
    return "\n".join(rows)


def report_to_json(report: EvalReport, include_pairs: bool = False) -> dict:
    out = {
        "precision": report.precision,
        "recall": report.recall,
        "distance_error_cm": report.distance_error_cm,
        "head_pose_error_deg": report.head_pose_error_deg,
        "gaze_error_deg": report.gaze_error_deg,
        "adjusted_gaze_error_deg": report.adjusted_gaze_error_deg,
        "n_gt": report.n_gt,
        "n_retained_pred": report.n_retained_pred,
        "n_matched": report.n_matched,
        "no_predictions": report.no_predictions,
        "bins": {
            scheme: {
                "labels": b.labels(),
                "counts": b.counts,
                "means": b.means,
                "overflow": {"count": b.overflow_count, "mean": b.overflow_mean},
            }
            for scheme, b in report.bins.items()
        },
    }
    if include_pairs:
        out["pairs"] = [
            {
                "image": p.image,
                "person_id": p.person_id,
                "iou": p.iou,
                "gaze_error_deg": p.gaze_error_deg,
                "head_pose_error_deg": p.head_pose_error_deg,
                "distance_error_cm": p.distance_error_cm,
            }
            for p in report.pairs
        ]
    return out
