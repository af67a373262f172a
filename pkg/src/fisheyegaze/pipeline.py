"""Synthetic ground-truth generation, validation and remapping.

Head frame convention: ``+x`` is the subject's right, ``+y`` is up (top of
the head) and ``+z`` points backward, so head-forward is ``-z``. Euler
composition is ``R = Rz(roll) @ Rx(pitch) @ Ry(yaw)``, where positive yaw
turns the head toward its right, positive pitch tilts it up and roll spins
about the view axis. The same matrices convert local gaze angles to
vectors, so a zero pose and zero gaze both give head-forward.

A person placed at translation ``t`` (camera frame, cm) gets a
camera-facing base orientation: head-forward points at the camera origin
and head-up stays as close to world-up (+z) as possible. Stored head poses
are *local*, relative to this base, which is what keeps the sampled
yaw/pitch/roll ranges meaningful for people anywhere on the ring.

Records store both the derived 2D labels and the 3D source quantities
(`*_cm` fields), so annotations can be remapped to new intrinsics without
losing precision. The manifest is line-delimited JSON, one record per
line; unknown fields survive a read/write round trip.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .cameras import (
    Camera,
    camera_from_json,
    camera_to_json,
)

HEAD_YAW_RANGE_DEG = (-60.0, 60.0)
HEAD_PITCH_RANGE_DEG = (-35.0, 35.0)
HEAD_ROLL_RANGE_DEG = (-5.0, 5.0)
LOCAL_GAZE_RANGE_DEG = (-30.0, 30.0)
PERSON_COUNT_RANGE = (1, 7)

_RANGE_TOL = 1e-9
_UNIT_TOL = 1e-6

EYE_KEYS = ("left_center", "right_center", "left_pupil", "right_pupil")

# Canonical face landmarks in the head frame (cm). Order is fixed; the
# bounding box is the hull of these points plus a margin.
FACE_TEMPLATE_CM = np.array(
    [
        (0.0, 6.3, -8.4),  # forehead
        (6.0, 3.0, -5.5),  # right temple
        (-6.0, 3.0, -5.5),  # left temple
        (2.8, 3.6, -8.8),  # right brow
        (-2.8, 3.6, -8.8),  # left brow
        (4.6, 2.4, -8.0),  # right eye outer corner
        (1.7, 2.4, -8.4),  # right eye inner corner
        (-1.7, 2.4, -8.4),  # left eye inner corner
        (-4.6, 2.4, -8.0),  # left eye outer corner
        (0.0, 0.0, -10.2),  # nose tip
        (2.5, -3.3, -8.8),  # right mouth corner
        (-2.5, -3.3, -8.8),  # left mouth corner
        (0.0, -6.3, -8.4),  # chin
    ]
)

_EYE_CENTERS_CM = {
    "left": np.array([-3.1, 2.4, -8.3]),
    "right": np.array([3.1, 2.4, -8.3]),
}
_EYEBALL_CENTERS_CM = {
    "left": np.array([-3.1, 2.4, -7.1]),
    "right": np.array([3.1, 2.4, -7.1]),
}
EYEBALL_RADIUS_CM = 1.2

_HEAD_FORWARD = np.array([0.0, 0.0, -1.0])


class ParseError(ValueError):
    """Malformed manifest content."""


class FaceOutOfFovError(ValueError):
    """Every landmark of a face projects outside the field of view."""


# ---------------------------------------------------------------------------
# Types


@dataclass
class HeadPose:
    yaw_deg: float
    pitch_deg: float
    roll_deg: float
    translation_cm: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.translation_cm = np.asarray(self.translation_cm, dtype=np.float64).reshape(3)


@dataclass(frozen=True)
class LocalGaze:
    yaw_deg: float
    pitch_deg: float


@dataclass
class EyeLandmarks:
    left_center: tuple[float, float]
    right_center: tuple[float, float]
    left_pupil: tuple[float, float]
    right_pupil: tuple[float, float]

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {k: getattr(self, k) for k in EYE_KEYS}


@dataclass
class PersonAnnotation:
    person_id: int
    gaze_cam: np.ndarray
    head_pose: HeadPose
    distance_cm: float
    bbox: tuple[float, float, float, float]
    face_landmarks: np.ndarray
    eye_landmarks: EyeLandmarks | None
    eyelid_closure: float
    face_landmarks_cm: np.ndarray | None = None
    eye_landmarks_cm: dict[str, np.ndarray] | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gaze_cam = np.asarray(self.gaze_cam, dtype=np.float64).reshape(3)
        self.face_landmarks = np.asarray(self.face_landmarks, dtype=np.float64).reshape(-1, 2)


@dataclass
class SampleRecord:
    image_path: str
    camera: dict
    persons: list[PersonAnnotation]
    extra: dict = field(default_factory=dict)


@dataclass
class Person3D:
    """Camera-frame 3D source data for one person, before projection."""

    person_id: int
    face_points_cm: np.ndarray
    eye_points_cm: dict[str, np.ndarray]
    gaze_cam: np.ndarray
    head_pose: HeadPose
    eyelid_closure: float


@dataclass(frozen=True)
class SceneSample:
    head_pose: HeadPose
    local_gaze: LocalGaze
    eyelid_closure: float


@dataclass(frozen=True)
class SceneConfig:
    radius_range_cm: tuple[float, float] = (30.0, 120.0)
    polar_range_deg: tuple[float, float] = (5.0, 65.0)
    margin_ratio: float = 0.1


@dataclass(frozen=True)
class Violation:
    person_id: int | None
    field: str
    message: str

    def __str__(self) -> str:
        who = "record" if self.person_id is None else f"person {self.person_id}"
        return f"{who}: {self.field}: {self.message}"


# ---------------------------------------------------------------------------
# Rotations and gaze composition


def _rot_y_yaw(yaw_rad: float) -> np.ndarray:
    c, s = math.cos(yaw_rad), math.sin(yaw_rad)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def _rot_x_pitch(pitch_rad: float) -> np.ndarray:
    c, s = math.cos(pitch_rad), math.sin(pitch_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_z_roll(roll_rad: float) -> np.ndarray:
    c, s = math.cos(roll_rad), math.sin(roll_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def head_rotation_matrix(pose: HeadPose) -> np.ndarray:
    """Intrinsic ``Rz(roll) @ Rx(pitch) @ Ry(yaw)`` in the head frame."""
    return (
        _rot_z_roll(math.radians(pose.roll_deg))
        @ _rot_x_pitch(math.radians(pose.pitch_deg))
        @ _rot_y_yaw(math.radians(pose.yaw_deg))
    )


def local_gaze_vector(local: LocalGaze) -> np.ndarray:
    """Unit gaze in the head frame; (0, 0) is head-forward."""
    a = math.radians(local.yaw_deg)
    b = math.radians(local.pitch_deg)
    return np.array(
        [math.sin(a) * math.cos(b), math.sin(b), -math.cos(a) * math.cos(b)]
    )


def local_gaze_from_vector(direction) -> LocalGaze:
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    d = d / np.linalg.norm(d)
    pitch = math.degrees(math.asin(max(-1.0, min(1.0, d[1]))))
    yaw = math.degrees(math.atan2(d[0], -d[2]))
    return LocalGaze(yaw_deg=yaw, pitch_deg=pitch)


def camera_facing_orientation(translation_cm) -> np.ndarray:
    """Head-to-camera rotation for a head at ``t`` facing the camera origin.

    Head-forward points at the origin; head-up stays in the plane of
    world-up (+z) and the line of sight. Columns are the head axes
    (right, up, backward) expressed in the camera frame.
    """
    t = np.asarray(translation_cm, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(t)
    if norm < 1e-9:
        raise ValueError("translation must be nonzero to face the camera")
    backward = t / norm
    forward = -backward
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    up = np.cross(backward, right)
    return np.column_stack((right, up, backward))


def gaze_local_to_camera(
    local: LocalGaze, pose: HeadPose, head_to_camera: np.ndarray
) -> np.ndarray:
    g = head_to_camera @ head_rotation_matrix(pose) @ local_gaze_vector(local)
    return g / np.linalg.norm(g)


def head_forward_vector(pose: HeadPose) -> np.ndarray:
    """Head-forward unit vector implied by yaw/pitch/roll alone."""
    return head_rotation_matrix(pose) @ _HEAD_FORWARD


# ---------------------------------------------------------------------------
# Scene construction and projection


def build_person(
    person_id: int,
    pose: HeadPose,
    local_gaze: LocalGaze,
    eyelid_closure: float,
    head_to_camera: np.ndarray | None = None,
) -> Person3D:
    """Instantiate the canonical face rig in the camera frame."""
    if head_to_camera is None:
        head_to_camera = camera_facing_orientation(pose.translation_cm)
    rot = head_to_camera @ head_rotation_matrix(pose)
    t = pose.translation_cm
    face = FACE_TEMPLATE_CM @ rot.T + t
    g_local = local_gaze_vector(local_gaze)
    eyes = {}
    for side in ("left", "right"):
        eyes[f"{side}_center"] = rot @ _EYE_CENTERS_CM[side] + t
        pupil_head = _EYEBALL_CENTERS_CM[side] + EYEBALL_RADIUS_CM * g_local
        eyes[f"{side}_pupil"] = rot @ pupil_head + t
    gaze_cam = rot @ g_local
    gaze_cam /= np.linalg.norm(gaze_cam)
    return Person3D(
        person_id=person_id,
        face_points_cm=face,
        eye_points_cm=eyes,
        gaze_cam=gaze_cam,
        head_pose=pose,
        eyelid_closure=eyelid_closure,
    )


def _project_points(points_cm: np.ndarray, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    dirs = np.asarray(points_cm, dtype=np.float64).reshape(-1, 3)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    return camera.project_array(dirs)


def _bbox_from_hull(points: np.ndarray, margin_ratio: float) -> tuple[float, float, float, float]:
    x0, y0 = points.min(axis=0)
    x1, y1 = points.max(axis=0)
    mx = margin_ratio * (x1 - x0)
    my = margin_ratio * (y1 - y0)
    return (
        float(x0 - mx),
        float(y0 - my),
        float((x1 - x0) + 2.0 * mx),
        float((y1 - y0) + 2.0 * my),
    )


def project_annotation(
    person: Person3D, camera: Camera, margin_ratio: float = 0.1
) -> PersonAnnotation:
    """Project one person's 3D rig to 2D labels.

    Raises :class:`FaceOutOfFovError` when no landmark lands inside the
    FOV. Landmarks of partially visible faces keep the radial
    extrapolation of the projection so the landmark list stays complete.
    """
    face_px, face_ok = _project_points(person.face_points_cm, camera)
    if not np.any(face_ok):
        raise FaceOutOfFovError(
            f"person {person.person_id}: all landmarks outside the field of view"
        )
    eye_px = {}
    for key in EYE_KEYS:
        px, _ = _project_points(person.eye_points_cm[key], camera)
        eye_px[key] = (float(px[0, 0]), float(px[0, 1]))
    bbox = _bbox_from_hull(face_px, margin_ratio)
    return PersonAnnotation(
        person_id=person.person_id,
        gaze_cam=person.gaze_cam,
        head_pose=person.head_pose,
        distance_cm=float(np.linalg.norm(person.head_pose.translation_cm)),
        bbox=bbox,
        face_landmarks=face_px,
        eye_landmarks=EyeLandmarks(**eye_px),
        eyelid_closure=person.eyelid_closure,
        face_landmarks_cm=person.face_points_cm.copy(),
        eye_landmarks_cm={k: v.copy() for k, v in person.eye_points_cm.items()},
    )


def _sample_from_rng(rng: np.random.Generator, n_persons: int, config: SceneConfig) -> list[SceneSample]:
    lo, hi = PERSON_COUNT_RANGE
    if not lo <= n_persons <= hi:
        raise ValueError(f"n_persons must lie in [{lo}, {hi}], got {n_persons}")
    samples = []
    r_lo, r_hi = config.radius_range_cm
    p_lo, p_hi = (math.radians(a) for a in config.polar_range_deg)
    for i in range(n_persons):
        # One azimuth sector per person keeps faces from stacking up.
        azimuth = 2.0 * math.pi * (i + rng.uniform()) / n_persons
        polar = rng.uniform(p_lo, p_hi)
        radius = rng.uniform(r_lo, r_hi)
        translation = radius * np.array(
            [
                math.sin(polar) * math.cos(azimuth),
                math.sin(polar) * math.sin(azimuth),
                math.cos(polar),
            ]
        )
        pose = HeadPose(
            yaw_deg=rng.uniform(*HEAD_YAW_RANGE_DEG),
            pitch_deg=rng.uniform(*HEAD_PITCH_RANGE_DEG),
            roll_deg=rng.uniform(*HEAD_ROLL_RANGE_DEG),
            translation_cm=translation,
        )
        gaze = LocalGaze(
            yaw_deg=rng.uniform(*LOCAL_GAZE_RANGE_DEG),
            pitch_deg=rng.uniform(*LOCAL_GAZE_RANGE_DEG),
        )
        samples.append(
            SceneSample(head_pose=pose, local_gaze=gaze, eyelid_closure=rng.uniform())
        )
    return samples


def sample_scene(
    rng_seed, n_persons: int, config: SceneConfig = SceneConfig()
) -> list[SceneSample]:
    """Draw per-person pose, gaze and placement parameters.

    Uniform draws within the compliant ranges; deterministic for a given
    seed. Placements lie on a ring around the camera within the configured
    radius and polar-angle ranges.
    """
    return _sample_from_rng(np.random.default_rng(rng_seed), n_persons, config)


def generate_record(
    seed: int,
    index: int,
    camera: Camera,
    config: SceneConfig = SceneConfig(),
    n_persons: int | None = None,
    image_path: str | None = None,
) -> SampleRecord:
    """Build one synthetic record; deterministic per (seed, index)."""
    rng = np.random.default_rng([int(seed), int(index)])
    if n_persons is None:
        n_persons = int(rng.integers(PERSON_COUNT_RANGE[0], PERSON_COUNT_RANGE[1] + 1))
    samples = _sample_from_rng(rng, n_persons, config)
    persons = []
    for pid, sample in enumerate(samples):
        person = build_person(pid, sample.head_pose, sample.local_gaze, sample.eyelid_closure)
        persons.append(project_annotation(person, camera, config.margin_ratio))
    return SampleRecord(
        image_path=image_path if image_path is not None else f"images/{index:06d}.png",
        camera=camera_to_json(camera),
        persons=persons,
    )


# ---------------------------------------------------------------------------
# Validation


def _bbox_intersects_fov(bbox, camera: Camera) -> bool:
    x, y, w, h = bbox
    cx, cy = camera.principal_point
    sx, sy = camera.norm_scales
    nearest_u = min(max(cx, x), x + w)
    nearest_v = min(max(cy, y), y + h)
    nr = math.hypot((nearest_u - cx) / sx, (nearest_v - cy) / sy)
    return nr <= camera.max_normalized_radius + 1e-12


def _check_range(value: float, rng: tuple[float, float]) -> bool:
    return rng[0] - _RANGE_TOL <= value <= rng[1] + _RANGE_TOL


def validate_record(record: SampleRecord) -> list[Violation]:
    """Compliance checks against the sampling ranges and type invariants."""
    violations: list[Violation] = []
    lo, hi = PERSON_COUNT_RANGE
    if not lo <= len(record.persons) <= hi:
        violations.append(
            Violation(None, "persons", f"{len(record.persons)} persons outside [{lo}, {hi}]")
        )
    try:
        camera = camera_from_json(record.camera)
    except (ValueError, KeyError, TypeError) as exc:
        violations.append(Violation(None, "camera", f"bad intrinsics: {exc}"))
        camera = None

    for person in record.persons:
        pid = person.person_id
        gaze_norm = float(np.linalg.norm(person.gaze_cam))
        if abs(gaze_norm - 1.0) > _UNIT_TOL:
            violations.append(
                Violation(pid, "gaze", f"norm {gaze_norm:.6f} deviates from 1 beyond {_UNIT_TOL}")
            )
        pose = person.head_pose
        for name, value, rng in (
            ("head yaw", pose.yaw_deg, HEAD_YAW_RANGE_DEG),
            ("head pitch", pose.pitch_deg, HEAD_PITCH_RANGE_DEG),
            ("head roll", pose.roll_deg, HEAD_ROLL_RANGE_DEG),
        ):
            if not _check_range(value, rng):
                violations.append(
                    Violation(
                        pid,
                        name.replace(" ", "_"),
                        f"{name} {value:.3f} deg outside [{rng[0]:g}, {rng[1]:g}]",
                    )
                )
        if not _check_range(person.eyelid_closure, (0.0, 1.0)):
            violations.append(
                Violation(pid, "eyelid_closure", f"{person.eyelid_closure:.4f} outside [0, 1]")
            )
        if np.linalg.norm(pose.translation_cm) < 1e-9:
            violations.append(Violation(pid, "translation_cm", "translation is zero"))
        elif abs(gaze_norm - 1.0) <= _UNIT_TOL:
            base = camera_facing_orientation(pose.translation_cm)
            g_head = head_rotation_matrix(pose).T @ base.T @ person.gaze_cam
            local = local_gaze_from_vector(g_head)
            for name, value in (("gaze yaw", local.yaw_deg), ("gaze pitch", local.pitch_deg)):
                if not _check_range(value, LOCAL_GAZE_RANGE_DEG):
                    violations.append(
                        Violation(
                            pid,
                            name.replace(" ", "_"),
                            f"local {name} {value:.3f} deg outside "
                            f"[{LOCAL_GAZE_RANGE_DEG[0]:g}, {LOCAL_GAZE_RANGE_DEG[1]:g}]",
                        )
                    )
        x, y, w, h = person.bbox
        if w <= 0.0 or h <= 0.0:
            violations.append(Violation(pid, "bbox", f"degenerate size {w:.3f}x{h:.3f}"))
        elif camera is not None and not _bbox_intersects_fov(person.bbox, camera):
            violations.append(Violation(pid, "bbox", "box does not intersect the fisheye circle"))
        if person.eye_landmarks is None:
            violations.append(Violation(pid, "eye_landmarks", "missing eye landmarks"))
        if person.face_landmarks.size:
            fx0, fy0 = person.face_landmarks.min(axis=0)
            fx1, fy1 = person.face_landmarks.max(axis=0)
            eps = 1e-6
            if fx0 < x - eps or fy0 < y - eps or fx1 > x + w + eps or fy1 > y + h + eps:
                violations.append(
                    Violation(pid, "face_landmarks", "landmark outside the bounding box")
                )
    return violations


# ---------------------------------------------------------------------------
# Annotation remapping


def remap_annotations(
    record: SampleRecord,
    src_camera: Camera,
    dst_camera: Camera,
    margin_ratio: float = 0.1,
) -> tuple[SampleRecord, list[str]]:
    """Recompute all 2D labels under new intrinsics.

    Each 2D point is unprojected with the source camera and reprojected
    with the destination camera; camera-frame 3D quantities (gaze,
    translation, distance, stored 3D landmarks) are intrinsics-independent
    and pass through unchanged. Landmarks that cannot be unprojected are
    kept at their original pixels and flagged, never dropped.
    """
    flags: list[str] = []
    new_persons = []
    for person in record.persons:
        n_face = person.face_landmarks.shape[0]
        points = [person.face_landmarks]
        eye_keys_present = [] if person.eye_landmarks is None else list(EYE_KEYS)
        if eye_keys_present:
            points.append(
                np.array([person.eye_landmarks.as_dict()[k] for k in eye_keys_present])
            )
        pts = np.vstack(points)
        dirs, ok = src_camera.unproject_array(pts)
        if not np.all(ok):
            dirs_ext, ok_ext = src_camera.unproject_array(pts, extend_fov=True)
            recovered = ~ok & ok_ext
            dirs[recovered] = dirs_ext[recovered]
            for idx in np.nonzero(~ok)[0]:
                label = (
                    f"face_landmark[{idx}]"
                    if idx < n_face
                    else f"eye_landmark[{eye_keys_present[idx - n_face]}]"
                )
                state = "beyond source FOV" if ok_ext[idx] else "not unprojectable; kept original"
                flags.append(
                    f"image={record.image_path} person={person.person_id} {label}: {state}"
                )
            ok = ok | ok_ext
        new_pts = pts.copy()
        if np.any(ok):
            proj, _ = dst_camera.project_array(dirs[ok], extend_fov=True)
            new_pts[ok] = proj
        new_face = new_pts[:n_face]
        new_eyes = None
        if eye_keys_present:
            vals = new_pts[n_face:]
            new_eyes = EyeLandmarks(
                **{
                    k: (float(vals[i, 0]), float(vals[i, 1]))
                    for i, k in enumerate(eye_keys_present)
                }
            )
        new_persons.append(
            PersonAnnotation(
                person_id=person.person_id,
                gaze_cam=person.gaze_cam.copy(),
                head_pose=HeadPose(
                    yaw_deg=person.head_pose.yaw_deg,
                    pitch_deg=person.head_pose.pitch_deg,
                    roll_deg=person.head_pose.roll_deg,
                    translation_cm=person.head_pose.translation_cm.copy(),
                ),
                distance_cm=person.distance_cm,
                bbox=_bbox_from_hull(new_face, margin_ratio),
                face_landmarks=new_face,
                eye_landmarks=new_eyes,
                eyelid_closure=person.eyelid_closure,
                face_landmarks_cm=None
                if person.face_landmarks_cm is None
                else person.face_landmarks_cm.copy(),
                eye_landmarks_cm=None
                if person.eye_landmarks_cm is None
                else {k: v.copy() for k, v in person.eye_landmarks_cm.items()},
                extra=dict(person.extra),
            )
        )
    new_record = SampleRecord(
        image_path=record.image_path,
        camera=camera_to_json(dst_camera),
        persons=new_persons,
        extra=dict(record.extra),
    )
    return new_record, flags


# ---------------------------------------------------------------------------
# Manifest I/O (UTF-8 JSONL, one record per line)

_PERSON_KEYS = {
    "id",
    "gaze",
    "head_pose",
    "translation_cm",
    "distance_cm",
    "bbox",
    "face_landmarks",
    "eye_landmarks",
    "eyelid_closure",
    "face_landmarks_cm",
    "eye_landmarks_cm",
}


def person_to_dict(person: PersonAnnotation) -> dict:
    out = {
        "id": int(person.person_id),
        "gaze": [float(v) for v in person.gaze_cam],
        "head_pose": {
            "yaw": float(person.head_pose.yaw_deg),
            "pitch": float(person.head_pose.pitch_deg),
            "roll": float(person.head_pose.roll_deg),
        },
        "translation_cm": [float(v) for v in person.head_pose.translation_cm],
        "distance_cm": float(person.distance_cm),
        "bbox": [float(v) for v in person.bbox],
        "face_landmarks": [[float(u), float(v)] for u, v in person.face_landmarks],
    }
    if person.eye_landmarks is not None:
        out["eye_landmarks"] = {
            k: [float(c) for c in v] for k, v in person.eye_landmarks.as_dict().items()
        }
    out["eyelid_closure"] = float(person.eyelid_closure)
    if person.face_landmarks_cm is not None:
        out["face_landmarks_cm"] = [[float(a) for a in p] for p in person.face_landmarks_cm]
    if person.eye_landmarks_cm is not None:
        out["eye_landmarks_cm"] = {
            k: [float(a) for a in v] for k, v in person.eye_landmarks_cm.items()
        }
    out.update(person.extra)
    return out


def person_from_dict(obj: dict) -> PersonAnnotation:
    try:
        head = obj["head_pose"]
        pose = HeadPose(
            yaw_deg=float(head["yaw"]),
            pitch_deg=float(head["pitch"]),
            roll_deg=float(head["roll"]),
            translation_cm=np.asarray(obj["translation_cm"], dtype=np.float64),
        )
        eyes = None
        if "eye_landmarks" in obj and obj["eye_landmarks"] is not None:
            raw = obj["eye_landmarks"]
            missing = [k for k in EYE_KEYS if k not in raw]
            if missing:
                raise ParseError(f"eye_landmarks missing keys {missing}")
            eyes = EyeLandmarks(
                **{k: (float(raw[k][0]), float(raw[k][1])) for k in EYE_KEYS}
            )
        face_cm = obj.get("face_landmarks_cm")
        eyes_cm = obj.get("eye_landmarks_cm")
        return PersonAnnotation(
            person_id=int(obj["id"]),
            gaze_cam=np.asarray(obj["gaze"], dtype=np.float64),
            head_pose=pose,
            distance_cm=float(obj["distance_cm"]),
            bbox=tuple(float(v) for v in obj["bbox"]),
            face_landmarks=np.asarray(obj["face_landmarks"], dtype=np.float64),
            eye_landmarks=eyes,
            eyelid_closure=float(obj["eyelid_closure"]),
            face_landmarks_cm=None
            if face_cm is None
            else np.asarray(face_cm, dtype=np.float64),
            eye_landmarks_cm=None
            if eyes_cm is None
            else {k: np.asarray(v, dtype=np.float64) for k, v in eyes_cm.items()},
            extra={k: v for k, v in obj.items() if k not in _PERSON_KEYS},
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ParseError(f"malformed person entry: {exc!r}") from exc


def record_to_dict(record: SampleRecord) -> dict:
    out = {
        "image": record.image_path,
        "camera": record.camera,
        "persons": [person_to_dict(p) for p in record.persons],
    }
    out.update(record.extra)
    return out


def record_from_dict(obj: dict) -> SampleRecord:
    try:
        persons = [person_from_dict(p) for p in obj["persons"]]
        return SampleRecord(
            image_path=str(obj["image"]),
            camera=dict(obj["camera"]),
            persons=persons,
            extra={k: v for k, v in obj.items() if k not in {"image", "camera", "persons"}},
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed record: {exc!r}") from exc


def iter_manifest(path):
    """Yield records from a JSONL manifest; raises ParseError with line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                yield record_from_dict(obj)
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc


def read_manifest(path) -> list[SampleRecord]:
    return list(iter_manifest(path))


def write_manifest(records, path) -> None:
    """Write records as JSONL atomically (temp file + rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".jsonl.tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record_to_dict(record)))
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
