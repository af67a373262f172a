"""Fisheye synthesis from five perspective views and distortion remapping.

The five-view rig covers the upper hemisphere with 90-degree frusta:

* ``up``    looks along +z (the optical axis); its image axes coincide
  with the fisheye image axes (right = +x, down = +y).
* ``north`` looks along -y, ``east`` along +x, ``south`` along +y and
  ``west`` along -x; all four side views keep +z (the sky) at the top of
  their image, i.e. image-down = -z.

Rendering is per-output-pixel inverse mapping (pull): unproject the pixel,
pick the view whose forward axis is closest, sample bilinearly. Faces meet
only on measure-zero boundaries, so nearest-face selection needs no
blending. Ties use the fixed priority up > north > east > south > west.

All inputs are read-only during rendering and output rows are disjoint, so
row blocks parallelize freely across threads.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .cameras import Camera

FACE_IDS = ("up", "north", "east", "south", "west")

# View-local axes as camera-frame columns [right, down, forward].
_FACE_ORIENTATIONS = {
    "up": np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).T,
    "north": np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]]).T,
    "east": np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]).T,
    "south": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]).T,
    "west": np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]]).T,
}

_FACE_FORWARDS = np.stack([_FACE_ORIENTATIONS[f][:, 2] for f in FACE_IDS])

DEFAULT_BLOCK_ROWS = 64


class LowerHemisphereError(ValueError):
    """Direction points below the hemisphere covered by the rig."""


def face_orientation(face_id: str) -> np.ndarray:
    return _FACE_ORIENTATIONS[face_id].copy()


@dataclass
class PerspectiveView:
    """One 90-degree rendered view; ``orientation`` maps view-local axes
    (columns: right, down, forward) into the camera frame."""

    face_id: str
    image: np.ndarray
    fov_deg: float = 90.0
    orientation: np.ndarray | None = None

    def __post_init__(self):
        if self.face_id not in FACE_IDS:
            raise ValueError(f"unknown face id {self.face_id!r}")
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise ValueError("view images must be HxWx3 uint8")
        self.image = img
        if self.orientation is None:
            self.orientation = face_orientation(self.face_id)
        rot = np.asarray(self.orientation, dtype=np.float64)
        if rot.shape != (3, 3) or not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise ValueError("orientation must be a 3x3 rotation matrix")
        if not math.isclose(float(np.linalg.det(rot)), 1.0, abs_tol=1e-9):
            raise ValueError("orientation must have determinant +1")
        self.orientation = rot


@dataclass
class CubemapSet:
    """Exactly five 90-degree views, one per face id."""

    views: dict[str, PerspectiveView]

    def __post_init__(self):
        missing = [f for f in FACE_IDS if f not in self.views]
        if missing or len(self.views) != 5:
            raise ValueError(f"cubemap needs exactly the five faces {FACE_IDS}, missing {missing}")
        for face_id, view in self.views.items():
            if view.face_id != face_id:
                raise ValueError(f"view registered under {face_id!r} has face_id {view.face_id!r}")
            if not math.isclose(view.fov_deg, 90.0, abs_tol=1e-9):
                raise ValueError("the canonical five-view set uses 90-degree faces")

    def __getitem__(self, face_id: str) -> PerspectiveView:
        return self.views[face_id]


@dataclass
class FisheyeImage:
    pixels: np.ndarray
    validity_mask: np.ndarray
    camera: Camera


def face_for_direction(direction) -> tuple[str, tuple[float, float]]:
    """Face id plus normalized view-plane coordinates in [-1, 1]^2.

    Raises :class:`LowerHemisphereError` for directions meaningfully below
    the horizon (z < -1e-9).
    """
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    if d[2] < -1e-9:
        raise LowerHemisphereError(f"direction {d.tolist()} is below the hemisphere")
    idx, ab = _faces_for_directions(d.reshape(1, 3))
    return FACE_IDS[int(idx[0])], (float(ab[0, 0]), float(ab[0, 1]))


def _faces_for_directions(dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Scores ordered by tie-break priority; argmax returns the first max.
    scores = dirs @ _FACE_FORWARDS.T
    face_idx = np.argmax(scores, axis=1)
    ab = np.empty((dirs.shape[0], 2))
    for fi, face_id in enumerate(FACE_IDS):
        sel = face_idx == fi
        if not np.any(sel):
            continue
        local = dirs[sel] @ _FACE_ORIENTATIONS[face_id]
        ab[sel, 0] = local[:, 0] / local[:, 2]
        ab[sel, 1] = local[:, 1] / local[:, 2]
    return face_idx, ab


def sample_bilinear(image: np.ndarray, coord) -> np.ndarray:
    """Bilinear sample at a continuous pixel coordinate (clamped to edges)."""
    x, y = float(coord[0]), float(coord[1])
    return _sample_bilinear_array(image, np.array([x]), np.array([y]))[0]


def _sample_bilinear_array(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    fx = np.clip(xs - 0.5, 0.0, w - 1.0)
    fy = np.clip(ys - 0.5, 0.0, h - 1.0)
    x0 = np.floor(fx).astype(np.intp)
    y0 = np.floor(fy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = (fx - x0)[:, None]
    ty = (fy - y0)[:, None]
    p00 = image[y0, x0].astype(np.float64)
    p10 = image[y0, x1].astype(np.float64)
    p01 = image[y1, x0].astype(np.float64)
    p11 = image[y1, x1].astype(np.float64)
    top = p00 * (1.0 - tx) + p10 * tx
    bot = p01 * (1.0 - tx) + p11 * tx
    return top * (1.0 - ty) + bot * ty


def _quantize(values: np.ndarray) -> np.ndarray:
    # Round half to even, the policy for all 8-bit resampling output.
    return np.clip(np.rint(values), 0.0, 255.0).astype(np.uint8)


def _pixel_centers(width: int, row0: int, row1: int) -> np.ndarray:
    us = np.arange(width, dtype=np.float64) + 0.5
    vs = np.arange(row0, row1, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(us, vs)
    return np.column_stack((uu.ravel(), vv.ravel()))


def _run_blocks(height: int, block_fn, threads: int | None) -> None:
    blocks = [
        (r0, min(r0 + DEFAULT_BLOCK_ROWS, height))
        for r0 in range(0, height, DEFAULT_BLOCK_ROWS)
    ]
    n = threads if threads else 1
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            list(pool.map(block_fn, blocks))
    else:
        for blk in blocks:
            block_fn(blk)


def render_fisheye(cubemap: CubemapSet, camera: Camera, threads: int | None = None) -> FisheyeImage:
    """Synthesize a fisheye image by inverse mapping into the five views.

    Pixels whose unprojection falls outside the FOV are black with a false
    validity mask.
    """
    if camera.fov_rad > math.pi + 1e-12:
        raise ValueError("rendering covers at most one hemisphere (fov <= pi)")
    h, w = camera.height_px, camera.width_px
    out = np.zeros((h, w, 3), dtype=np.uint8)
    mask = np.zeros((h, w), dtype=bool)

    def do_block(rows):
        r0, r1 = rows
        px = _pixel_centers(w, r0, r1)
        dirs, valid = camera.unproject_array(px)
        if not np.any(valid):
            return
        dirs = dirs[valid]
        face_idx, ab = _faces_for_directions(dirs)
        colors = np.empty((dirs.shape[0], 3))
        for fi, face_id in enumerate(FACE_IDS):
            sel = face_idx == fi
            if not np.any(sel):
                continue
            img = cubemap[face_id].image
            fh, fw = img.shape[:2]
            xs = (ab[sel, 0] + 1.0) * 0.5 * fw
            ys = (ab[sel, 1] + 1.0) * 0.5 * fh
            colors[sel] = _sample_bilinear_array(img, xs, ys)
        block_pixels = np.zeros(((r1 - r0) * w, 3), dtype=np.uint8)
        block_pixels[valid] = _quantize(colors)
        out[r0:r1] = block_pixels.reshape(r1 - r0, w, 3)
        mask[r0:r1] = valid.reshape(r1 - r0, w)

    _run_blocks(h, do_block, threads)
    return FisheyeImage(pixels=out, validity_mask=mask, camera=camera)


def remap_fisheye(src: FisheyeImage, dst_camera: Camera, threads: int | None = None) -> FisheyeImage:
    """Resample a fisheye image under different intrinsics.

    For each destination pixel: unproject with ``dst_camera``, project into
    the source camera, sample bilinearly. Regions out of either FOV are
    invalid-masked.
    """
    h, w = dst_camera.height_px, dst_camera.width_px
    out = np.zeros((h, w, 3), dtype=np.uint8)
    mask = np.zeros((h, w), dtype=bool)

    def do_block(rows):
        r0, r1 = rows
        px = _pixel_centers(w, r0, r1)
        dirs, valid = dst_camera.unproject_array(px)
        if not np.any(valid):
            return
        src_px, src_ok = src.camera.project_array(dirs[valid])
        ok = src_ok
        colors = np.zeros((dirs[valid].shape[0], 3))
        if np.any(ok):
            colors[ok] = _sample_bilinear_array(src.pixels, src_px[ok, 0], src_px[ok, 1])
        block_valid = np.zeros(px.shape[0], dtype=bool)
        block_valid[valid] = ok
        block_pixels = np.zeros((px.shape[0], 3), dtype=np.uint8)
        vals = np.zeros((px.shape[0], 3))
        vals[valid] = colors
        block_pixels[block_valid] = _quantize(vals[block_valid])
        out[r0:r1] = block_pixels.reshape(r1 - r0, w, 3)
        mask[r0:r1] = block_valid.reshape(r1 - r0, w)

    _run_blocks(h, do_block, threads)
    return FisheyeImage(pixels=out, validity_mask=mask, camera=dst_camera)


# ---------------------------------------------------------------------------
# Synthetic cubemap fixtures (used by tests, demos and the CLI examples).


def direction_color(dirs: np.ndarray) -> np.ndarray:
    """Analytic probe colors: each channel linear in one direction component."""
    d = np.asarray(dirs, dtype=np.float64)
    return (d + 1.0) * 0.5 * 255.0


def make_direction_color_cubemap(face_size: int = 256) -> CubemapSet:
    """Five-view set whose colors encode the viewing direction exactly."""
    views = {}
    for face_id in FACE_IDS:
        rot = _FACE_ORIENTATIONS[face_id]
        centers = _pixel_centers(face_size, 0, face_size)
        a = centers[:, 0] / face_size * 2.0 - 1.0
        b = centers[:, 1] / face_size * 2.0 - 1.0
        local = np.column_stack((a, b, np.ones_like(a)))
        world = local @ rot.T
        world /= np.linalg.norm(world, axis=1, keepdims=True)
        img = _quantize(direction_color(world)).reshape(face_size, face_size, 3)
        views[face_id] = PerspectiveView(face_id=face_id, image=img)
    return CubemapSet(views=views)


def make_solid_cubemap(value, face_size: int = 64) -> CubemapSet:
    color = np.asarray(value, dtype=np.uint8).reshape(1, 1, -1)
    if color.shape[2] == 1:
        color = np.repeat(color, 3, axis=2)
    views = {
        face_id: PerspectiveView(
            face_id=face_id,
            image=np.broadcast_to(color, (face_size, face_size, 3)).copy(),
        )
        for face_id in FACE_IDS
    }
    return CubemapSet(views=views)


# ---------------------------------------------------------------------------
# PNG and manifest I/O.


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_png(image: np.ndarray, path) -> None:
    """Write a PNG atomically (temp file + rename) with pinned settings."""
    arr = np.asarray(image)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".png.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            Image.fromarray(arr).save(fh, format="PNG", compress_level=6)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_cubemap_manifest(path) -> CubemapSet:
    """Read a cubemap description: {"faces": {face: png path}, "fov_deg": 90}.

    Relative face paths resolve against the manifest location. Missing
    files raise ``FileNotFoundError`` naming the face.
    """
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    faces = spec.get("faces", {})
    fov_deg = float(spec.get("fov_deg", 90.0))
    absent = [f for f in FACE_IDS if f not in faces]
    if absent:
        raise ValueError(f"cubemap manifest lacks faces {absent}")
    views = {}
    for face_id in FACE_IDS:
        face_path = faces[face_id]
        if not os.path.isabs(face_path):
            face_path = os.path.join(base, face_path)
        if not os.path.exists(face_path):
            raise FileNotFoundError(f"cubemap face {face_id!r}: no such file {face_path}")
        views[face_id] = PerspectiveView(
            face_id=face_id, image=load_png(face_path), fov_deg=fov_deg
        )
    return CubemapSet(views=views)


def save_cubemap(cubemap: CubemapSet, out_dir, fov_deg: float = 90.0) -> str:
    """Write face PNGs plus a manifest into ``out_dir``; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    faces = {}
    for face_id in FACE_IDS:
        name = f"{face_id}.png"
        save_png(cubemap[face_id].image, os.path.join(out_dir, name))
        faces[face_id] = name
    manifest = os.path.join(out_dir, "cubemap.json")
    with open(manifest, "w", encoding="utf-8") as fh:
        json.dump({"faces": faces, "fov_deg": fov_deg}, fh, indent=2)
        fh.write("\n")
    return manifest
