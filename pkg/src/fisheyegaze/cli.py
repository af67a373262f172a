"""Command-line surface for the toolkit.

Subcommands: render, remap, generate, validate, evaluate, visualize,
kernels verify, stats. Structured results go to stdout as JSON (evaluate
additionally prints its aligned table); diagnostics go to stderr.

Exit codes are a stable contract for CI: 0 success, 1 usage error,
2 missing input, 3 data mismatch/invalid data, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time

import numpy as np
from PIL import Image, ImageDraw

from . import cameras, kernels, metrics, pipeline, reproject

DEFAULT_SEED = 42
ARROW_SAMPLES = 16
KERNEL_TOLERANCE = 1e-9

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING_INPUT = 2
EXIT_DATA_MISMATCH = 3
EXIT_VERIFY_FAILED = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "detail": message}), file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fail(code: int, kind: str, detail: str) -> "CliError":
    return CliError(code, json.dumps({"error": kind, "detail": detail}))


def _write_json_atomic(obj, path) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".json.tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_camera(path) -> cameras.Camera:
    if not os.path.exists(path):
        raise _fail(EXIT_MISSING_INPUT, "missing_input", f"camera file not found: {path}")
    try:
        return cameras.load_camera(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise _fail(EXIT_DATA_MISMATCH, "bad_camera", f"{path}: {exc}") from exc


def _default_threads(value) -> int:
    return value if value else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_render(args) -> int:
    camera = _load_camera(args.camera)
    if not os.path.exists(args.cubemap):
        raise _fail(EXIT_MISSING_INPUT, "missing_input", f"cubemap manifest not found: {args.cubemap}")
    try:
        cubemap = reproject.load_cubemap_manifest(args.cubemap)
    except FileNotFoundError as exc:
        raise _fail(EXIT_MISSING_INPUT, "missing_input", str(exc)) from exc
    except (ValueError, json.JSONDecodeError) as exc:
        raise _fail(EXIT_DATA_MISMATCH, "bad_manifest", f"{args.cubemap}: {exc}") from exc
    t0 = time.perf_counter()
    result = reproject.render_fisheye(cubemap, camera, threads=_default_threads(args.threads))
    elapsed = time.perf_counter() - t0
    reproject.save_png(result.pixels, args.out)
    mask_path = args.mask or os.path.splitext(args.out)[0] + "_mask.png"
    reproject.save_png(result.validity_mask, mask_path)
    print(json.dumps({"image": args.out, "mask": mask_path, "seconds": round(elapsed, 4)}))
    return EXIT_OK


def cmd_remap(args) -> int:
    src_camera = _load_camera(args.camera)
    dst_camera = _load_camera(args.to)
    if not os.path.exists(args.input):
        raise _fail(EXIT_MISSING_INPUT, "missing_input", f"input image not found: {args.input}")
    pixels = reproject.load_png(args.input)
    if pixels.shape[:2] != (src_camera.height_px, src_camera.width_px):
        raise _fail(
            EXIT_DATA_MISMATCH,
            "size_mismatch",
            f"image is {pixels.shape[1]}x{pixels.shape[0]}, camera expects "
            f"{src_camera.width_px}x{src_camera.height_px}",
        )
    _, src_mask = src_camera.unproject_array(
        reproject._pixel_centers(src_camera.width_px, 0, src_camera.height_px)
    )
    src = reproject.FisheyeImage(
        pixels=pixels,
        validity_mask=src_mask.reshape(src_camera.height_px, src_camera.width_px),
        camera=src_camera,
    )
    t0 = time.perf_counter()
    result = reproject.remap_fisheye(src, dst_camera, threads=_default_threads(args.threads))
    elapsed = time.perf_counter() - t0
    reproject.save_png(result.pixels, args.out)
    mask_path = args.mask or os.path.splitext(args.out)[0] + "_mask.png"
    reproject.save_png(result.validity_mask, mask_path)
    print(json.dumps({"image": args.out, "mask": mask_path, "seconds": round(elapsed, 4)}))
    return EXIT_OK


def cmd_generate(args) -> int:
    camera = (
        _load_camera(args.camera)
        if args.camera
        else cameras.derive_equidistant(1024, 1024, math.pi)
    )
    os.makedirs(args.out_dir, exist_ok=True)
    records = [
        pipeline.generate_record(args.seed, index, camera) for index in range(args.count)
    ]
    manifest = os.path.join(args.out_dir, "manifest.jsonl")
    pipeline.write_manifest(records, manifest)
    print(json.dumps({"manifest": manifest, "records": len(records), "seed": args.seed}))
    return EXIT_OK


def cmd_validate(args) -> int:
    if not os.path.exists(args.manifest):
        raise _fail(EXIT_MISSING_INPUT, "missing_input", f"manifest not found: {args.manifest}")
    try:
        records = pipeline.read_manifest(args.manifest)
    except pipeline.ParseError as exc:
        raise _fail(EXIT_DATA_MISMATCH, "parse_error", str(exc)) from exc
    violations = []
    for record in records:
        for v in pipeline.validate_record(record):
            violations.append(f"{record.image_path}: {v}")
    print(json.dumps({"records": len(records), "violations": violations}))
    return EXIT_DATA_MISMATCH if violations else EXIT_OK


def cmd_evaluate(args) -> int:
    for path in (args.gt, args.pred):
        if not os.path.exists(path):
            raise _fail(EXIT_MISSING_INPUT, "missing_input", f"manifest not found: {path}")
    try:
        gt = pipeline.read_manifest(args.gt)
        pred = pipeline.read_manifest(args.pred)
    except pipeline.ParseError as exc:
        raise _fail(EXIT_DATA_MISMATCH, "parse_error", str(exc)) from exc
    config = metrics.EvalConfig(
        iou_threshold=args.iou,
        conf_threshold=args.conf,
        bin_schemes=tuple(args.bins or ()),
    )
    try:
        report = metrics.evaluate(gt, pred, config)
    except metrics.ManifestMismatchError as exc:
        raise _fail(EXIT_DATA_MISMATCH, "manifest_mismatch", str(exc)) from exc
    print(metrics.report_table(report))
    print(f"Adjusted gaze (deg): {metrics._fmt(report.adjusted_gaze_error_deg, 3)}")
    for scheme in config.bin_schemes:
        print(metrics.bins_table(report.bins[scheme]))
    if args.report:
        _write_json_atomic(metrics.report_to_json(report, include_pairs=True), args.report)
        print(f"report written: {args.report}", file=sys.stderr)
    return EXIT_OK


def gaze_arrow_points(
    person: pipeline.PersonAnnotation,
    camera: cameras.Camera,
    length_cm: float = 20.0,
    samples: int = ARROW_SAMPLES,
) -> tuple[np.ndarray, bool]:
    """Projected polyline of the 3D gaze ray, anchored at the eye center.

    The ray starts at the eye-center position and extends ``length_cm``
    along the gaze; it is sampled at ``samples`` points, each projected
    separately so the drawn arrow curves with the lens. Falls back to the
    bbox center when eye landmarks are missing (flagged in the second
    return value).
    """
    fallback = False
    if person.eye_landmarks_cm is not None:
        origin = 0.5 * (
            np.asarray(person.eye_landmarks_cm["left_center"])
            + np.asarray(person.eye_landmarks_cm["right_center"])
        )
    else:
        if person.eye_landmarks is not None:
            mid = 0.5 * (
                np.asarray(person.eye_landmarks.left_center)
                + np.asarray(person.eye_landmarks.right_center)
            )
        else:
            x, y, w, h = person.bbox
            mid = np.array([x + w / 2.0, y + h / 2.0])
            fallback = True
        dirs, ok = camera.unproject_array(mid.reshape(1, 2), extend_fov=True)
        if not ok[0]:
            raise pipeline.FaceOutOfFovError(
                f"person {person.person_id}: anchor pixel cannot be unprojected"
            )
        origin = dirs[0] * person.distance_cm
    ts = np.linspace(0.0, 1.0, samples)
    points = origin[None, :] + ts[:, None] * length_cm * person.gaze_cam[None, :]
    dirs = points / np.linalg.norm(points, axis=1, keepdims=True)
    px, ok = camera.project_array(dirs)
    return px[ok], fallback


def _draw_record(
    image: Image.Image,
    record: pipeline.SampleRecord,
    camera: cameras.Camera,
    color: tuple[int, int, int],
    arrow_length_cm: float,
) -> list[str]:
    warnings = []
    draw = ImageDraw.Draw(image)
    for person in record.persons:
        x, y, w, h = person.bbox
        draw.rectangle([x, y, x + w, y + h], outline=color, width=2)
        try:
            points, fallback = gaze_arrow_points(person, camera, arrow_length_cm)
        except pipeline.FaceOutOfFovError as exc:
            warnings.append(str(exc))
            continue
        if fallback:
            warnings.append(
                f"{record.image_path} person {person.person_id}: no eye landmarks; "
                "arrow anchored at bbox center"
            )
        if len(points) >= 2:
            draw.line([(float(u), float(v)) for u, v in points], fill=color, width=2)
        elif len(points) == 1:
            u, v = points[0]
            draw.ellipse([u - 2, v - 2, u + 2, v + 2], fill=color)
    return warnings


def cmd_visualize(args) -> int:
    if not os.path.exists(args.manifest):
        raise _fail(EXIT_MISSING_INPUT, "missing_input", f"manifest not found: {args.manifest}")
    try:
        records = pipeline.read_manifest(args.manifest)
    except pipeline.ParseError as exc:
        raise _fail(EXIT_DATA_MISMATCH, "parse_error", str(exc)) from exc
    preds_by_image = {}
    if args.pred:
        try:
            preds_by_image = {r.image_path: r for r in pipeline.read_manifest(args.pred)}
        except pipeline.ParseError as exc:
            raise _fail(EXIT_DATA_MISMATCH, "parse_error", str(exc)) from exc
    os.makedirs(args.out_dir, exist_ok=True)
    written = []
    skipped = []
    for record in records:
        candidates = [
            os.path.join(args.images_dir, record.image_path),
            os.path.join(args.images_dir, os.path.basename(record.image_path)),
        ]
        src_path = next((p for p in candidates if os.path.exists(p)), None)
        if src_path is None:
            skipped.append(record.image_path)
            print(f"warning: image not found for {record.image_path}", file=sys.stderr)
            continue
        try:
            camera = cameras.camera_from_json(record.camera)
        except (ValueError, KeyError) as exc:
            raise _fail(EXIT_DATA_MISMATCH, "bad_camera", f"{record.image_path}: {exc}") from exc
        image = Image.fromarray(reproject.load_png(src_path))
        warnings = _draw_record(image, record, camera, (255, 0, 0), args.arrow_length_cm)
        if record.image_path in preds_by_image:
            warnings += _draw_record(
                image, preds_by_image[record.image_path], camera, (255, 255, 0),
                args.arrow_length_cm,
            )
        for message in warnings:
            print(f"warning: {message}", file=sys.stderr)
        out_path = os.path.join(args.out_dir, os.path.basename(record.image_path))
        reproject.save_png(np.asarray(image), out_path)
        written.append(out_path)
    print(json.dumps({"written": written, "skipped": skipped}))
    if records and not written:
        raise _fail(EXIT_MISSING_INPUT, "missing_input", "no manifest image could be found")
    return EXIT_OK


def cmd_kernels_verify(args) -> int:
    bundle_json = os.path.join(args.bundle, "bundle.json")
    if not os.path.exists(bundle_json):
        raise _fail(EXIT_MISSING_INPUT, "missing_input", f"bundle not found: {bundle_json}")
    try:
        results = kernels.verify_bundle(args.bundle)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise _fail(EXIT_DATA_MISMATCH, "bad_bundle", f"{args.bundle}: {exc}") from exc
    failures = [r.op for r in results if r.max_abs_deviation > KERNEL_TOLERANCE]
    print(
        json.dumps(
            {
                "checks": [
                    {"op": r.op, "max_abs_deviation": r.max_abs_deviation} for r in results
                ],
                "failures": failures,
            }
        )
    )
    if not results:
        print("warning: 0 checks in bundle", file=sys.stderr)
        return EXIT_OK
    if failures:
        print(
            f"verification failed for: {', '.join(failures)} (tolerance {KERNEL_TOLERANCE})",
            file=sys.stderr,
        )
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_stats(args) -> int:
    if not os.path.exists(args.manifest):
        raise _fail(EXIT_MISSING_INPUT, "missing_input", f"manifest not found: {args.manifest}")
    try:
        records = pipeline.read_manifest(args.manifest)
    except pipeline.ParseError as exc:
        raise _fail(EXIT_DATA_MISMATCH, "parse_error", str(exc)) from exc
    counts = [len(r.persons) for r in records]
    distances = [p.distance_cm for r in records for p in r.persons]
    yaws = [p.head_pose.yaw_deg for r in records for p in r.persons]
    widths = [p.bbox[2] for r in records for p in r.persons]
    histogram = {str(n): counts.count(n) for n in sorted(set(counts))}

    def _summary(values):
        if not values:
            return None
        arr = np.asarray(values)
        return {
            "min": float(arr.min()),
            "mean": float(arr.mean()),
            "max": float(arr.max()),
        }

    print(
        json.dumps(
            {
                "records": len(records),
                "persons": int(sum(counts)),
                "persons_per_record": histogram,
                "distance_cm": _summary(distances),
                "head_yaw_deg": _summary(yaws),
                "face_width_px": _summary(widths),
            }
        )
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> _Parser:
    parser = _Parser(prog="fisheyegaze", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="rng seed (default 42)")
    common.add_argument("--threads", type=int, default=0,
                        help="worker threads; 0 = available parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", parents=[common], help="cubemap manifest -> fisheye PNG")
    p.add_argument("cubemap", help="cubemap JSON manifest")
    p.add_argument("--camera", required=True, help="camera intrinsics JSON")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--mask", help="validity-mask PNG (default: <out>_mask.png)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("remap", parents=[common], help="resample a fisheye image under new intrinsics")
    p.add_argument("input", help="source fisheye PNG")
    p.add_argument("--camera", required=True, help="source intrinsics JSON")
    p.add_argument("--to", required=True, help="destination intrinsics JSON")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--mask", help="validity-mask PNG (default: <out>_mask.png)")
    p.set_defaults(func=cmd_remap)

    p = sub.add_parser("generate", parents=[common], help="emit a synthetic annotation manifest")
    p.add_argument("--count", type=int, required=True, help="number of records")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--camera", help="camera intrinsics JSON (default: 1024x1024, 180 deg)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", parents=[common], help="check a manifest for compliance violations")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth JSONL manifest")
    p.add_argument("--pred", required=True, help="prediction JSONL manifest")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold (default 0.5)")
    p.add_argument("--conf", type=float, default=0.5, help="confidence threshold (default 0.5)")
    p.add_argument("--bins", action="append", choices=sorted(metrics.BIN_SCHEMES),
                   help="print a binned breakdown (repeatable)")
    p.add_argument("--report", help="write the full report JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", parents=[common], help="draw boxes and gaze arrows")
    p.add_argument("--manifest", required=True, help="ground-truth manifest (drawn red)")
    p.add_argument("--pred", help="prediction manifest (drawn yellow)")
    p.add_argument("--images-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--arrow-length-cm", type=float, default=20.0,
                   help="world length of the drawn gaze ray (default 20)")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("kernels", parents=[], help="network-kernel utilities")
    ksub = p.add_subparsers(dest="kernels_command", required=True)
    pv = ksub.add_parser("verify", parents=[common], help="run a golden tensor bundle")
    pv.add_argument("--bundle", required=True, help="bundle directory")
    pv.set_defaults(func=cmd_kernels_verify)

    p = sub.add_parser("stats", parents=[common], help="summarize a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
