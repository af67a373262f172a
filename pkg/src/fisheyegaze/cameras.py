"""Analytic fisheye camera models with exact projection and unprojection.

Conventions shared across the whole package:

* Camera frame: right-handed; ``+z`` is the optical axis (pointing up,
  out of the lens), ``+x`` points toward image-right and ``+y`` toward
  image-down.
* The incident angle ``theta`` of a viewing direction is measured from
  ``+z``; its azimuth ``phi = atan2(y, x)`` equals the image-plane angle,
  so a direction projects to ``principal_point + r(theta) * (cos phi,
  sin phi)``.
* Pixel coordinates are continuous: the pixel at row ``i``, column ``j``
  has its center at ``(u, v) = (j + 0.5, i + 0.5)``.

Hitting the field-of-view boundary is routine in reprojection loops, so
the scalar operations return ``None`` for out-of-FOV inputs and the array
operations return a validity mask; only genuinely malformed inputs raise.

Cameras are frozen dataclasses and every operation is a pure function, so
instances can be shared freely between threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

UNIT_TOLERANCE = 1e-6
KB_SOLVE_TOL_RAD = 1e-10
KB_MAX_ITER = 50


class NonUnitDirectionError(ValueError):
    """A viewing direction deviates from unit length beyond tolerance."""


def _as_points(arr, width: int) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim == 1:
        out = out.reshape(1, width)
    if out.ndim != 2 or out.shape[1] != width:
        raise ValueError(f"expected an (N, {width}) array, got shape {out.shape}")
    return out


def _check_unit(dirs: np.ndarray) -> None:
    norms = np.linalg.norm(dirs, axis=1)
    bad = np.abs(norms - 1.0) > UNIT_TOLERANCE
    if np.any(bad):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise NonUnitDirectionError(
            f"direction norm deviates from 1 by {worst:.3e} (> {UNIT_TOLERANCE:.0e})"
        )


def _azimuth_unit(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit in-plane direction (cos phi, sin phi); (1, 0) on the axis."""
    rho = np.hypot(x, y)
    with np.errstate(invalid="ignore", divide="ignore"):
        cu = np.where(rho > 0.0, x / rho, 1.0)
        su = np.where(rho > 0.0, y / rho, 0.0)
    return cu, su


@dataclass(frozen=True)
class EquidistantCamera:
    """Ideal fisheye with image radius linear in the incident angle.

    ``r = focal_length_px_per_rad * theta``; ``fov_rad`` is the full field
    of view (at most pi, i.e. one hemisphere).
    """

    focal_length_px_per_rad: float
    width_px: int
    height_px: int
    principal_point: tuple[float, float]
    fov_rad: float = math.pi

    def __post_init__(self):
        if not self.focal_length_px_per_rad > 0.0:
            raise ValueError("focal length must be positive")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("image size must be positive")
        if not 0.0 < self.fov_rad <= math.pi + 1e-12:
            raise ValueError("fov_rad must lie in (0, pi]")
        cx, cy = self.principal_point
        if not (0.0 <= cx <= self.width_px and 0.0 <= cy <= self.height_px):
            raise ValueError("principal point must lie inside the image bounds")

    @property
    def max_radius_px(self) -> float:
        """Image radius of the FOV boundary."""
        return self.focal_length_px_per_rad * self.fov_rad / 2.0

    @property
    def norm_scales(self) -> tuple[float, float]:
        f = self.focal_length_px_per_rad
        return (f, f)

    @property
    def max_normalized_radius(self) -> float:
        """FOV boundary radius in per-axis normalized image coordinates."""
        return self.fov_rad / 2.0

    def project_array(
        self, dirs, extend_fov: bool = False
    ) -> tuple[np.ndarray, np.ndarray]:
        """Project unit directions to pixels.

        Returns ``(pixels, valid)``; invalid rows hold the radial
        extrapolation (or NaN at theta = pi where azimuth is undefined).
        With ``extend_fov`` the mapping is evaluated for any theta < pi,
        which is well defined for this model.
        """
        dirs = _as_points(dirs, 3)
        _check_unit(dirs)
        # atan2 keeps full relative precision near the axis, unlike arccos.
        theta = np.arctan2(np.hypot(dirs[:, 0], dirs[:, 1]), dirs[:, 2])
        cu, su = _azimuth_unit(dirs[:, 0], dirs[:, 1])
        limit = math.pi - 1e-12 if extend_fov else self.fov_rad / 2.0
        valid = theta <= limit
        r = self.focal_length_px_per_rad * theta
        cx, cy = self.principal_point
        px = np.column_stack((cx + r * cu, cy + r * su))
        return px, valid

    def unproject_array(
        self, pixels, extend_fov: bool = False
    ) -> tuple[np.ndarray, np.ndarray]:
        """Invert :meth:`project_array`. Returns ``(directions, valid)``."""
        px = _as_points(pixels, 2)
        cx, cy = self.principal_point
        du = px[:, 0] - cx
        dv = px[:, 1] - cy
        r = np.hypot(du, dv)
        theta = r / self.focal_length_px_per_rad
        limit = math.pi if extend_fov else self.fov_rad / 2.0
        valid = theta <= limit
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0.0, np.sin(theta) / r, 0.0)
        dirs = np.column_stack((du * scale, dv * scale, np.cos(theta)))
        return dirs, valid

    def project(self, direction) -> tuple[float, float] | None:
        px, valid = self.project_array(np.asarray(direction, dtype=np.float64))
        if not valid[0]:
            return None
        return (float(px[0, 0]), float(px[0, 1]))

    def unproject(self, pixel) -> np.ndarray | None:
        dirs, valid = self.unproject_array(np.asarray(pixel, dtype=np.float64))
        if not valid[0]:
            return None
        return dirs[0]


def _kb_distort(theta: np.ndarray, k1, k2, k3, k4) -> np.ndarray:
    t2 = theta * theta
    return theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))


def _kb_distort_deriv(theta: np.ndarray, k1, k2, k3, k4) -> np.ndarray:
    t2 = theta * theta
    return 1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)))


@dataclass(frozen=True)
class KannalaBrandtCamera:
    """Odd-polynomial fisheye: ``r = d(theta) = theta + k1 theta^3 + ...``.

    The polynomial is scaled by ``fx`` / ``fy`` per image axis. With all
    coefficients zero and ``fx = fy`` this reduces exactly to
    :class:`EquidistantCamera`. The distortion polynomial must be strictly
    increasing on ``[0, fov/2]``; this is checked numerically at
    construction time.
    """

    fx: float
    fy: float
    principal_point: tuple[float, float]
    k1: float
    k2: float
    k3: float
    k4: float
    width_px: int
    height_px: int
    fov_rad: float = math.pi

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("image size must be positive")
        if not 0.0 < self.fov_rad <= math.pi + 1e-12:
            raise ValueError("fov_rad must lie in (0, pi]")
        cx, cy = self.principal_point
        if not (0.0 <= cx <= self.width_px and 0.0 <= cy <= self.height_px):
            raise ValueError("principal point must lie inside the image bounds")
        grid = np.linspace(0.0, self.fov_rad / 2.0, 4097)
        if np.any(self._deriv(grid) <= 0.0):
            raise ValueError(
                "distortion polynomial is not strictly increasing on [0, fov/2]"
            )
        # Largest angle (up to pi) the polynomial stays invertible on; used
        # only by the extend_fov paths.
        ext = np.linspace(0.0, math.pi, 8193)
        decreasing = np.nonzero(self._deriv(ext) <= 0.0)[0]
        mono_max = math.pi if decreasing.size == 0 else float(ext[decreasing[0] - 1])
        object.__setattr__(self, "_theta_mono_max", mono_max)

    def _distort(self, theta):
        return _kb_distort(theta, self.k1, self.k2, self.k3, self.k4)

    def _deriv(self, theta):
        return _kb_distort_deriv(theta, self.k1, self.k2, self.k3, self.k4)

    @property
    def norm_scales(self) -> tuple[float, float]:
        return (self.fx, self.fy)

    @property
    def max_normalized_radius(self) -> float:
        return float(self._distort(np.float64(self.fov_rad / 2.0)))

    def project_array(
        self, dirs, extend_fov: bool = False
    ) -> tuple[np.ndarray, np.ndarray]:
        dirs = _as_points(dirs, 3)
        _check_unit(dirs)
        theta = np.arctan2(np.hypot(dirs[:, 0], dirs[:, 1]), dirs[:, 2])
        cu, su = _azimuth_unit(dirs[:, 0], dirs[:, 1])
        limit = (
            min(self._theta_mono_max, math.pi - 1e-12)
            if extend_fov
            else self.fov_rad / 2.0
        )
        valid = theta <= limit
        rd = self._distort(theta)
        cx, cy = self.principal_point
        px = np.column_stack((cx + self.fx * rd * cu, cy + self.fy * rd * su))
        return px, valid

    def _solve_theta(self, rd: np.ndarray, theta_max: float) -> np.ndarray:
        """Invert the distortion polynomial on [0, theta_max].

        Newton iteration seeded at the equidistant estimate with bisection
        whenever a step leaves the current bracket.
        """
        lo = np.zeros_like(rd)
        hi = np.full_like(rd, theta_max)
        theta = np.clip(rd, 0.0, theta_max)
        for _ in range(KB_MAX_ITER):
            resid = self._distort(theta) - rd
            hi = np.where(resid > 0.0, theta, hi)
            lo = np.where(resid <= 0.0, theta, lo)
            with np.errstate(invalid="ignore", divide="ignore"):
                step = resid / self._deriv(theta)
            candidate = theta - step
            bad = ~np.isfinite(candidate) | (candidate < lo) | (candidate > hi)
            new_theta = np.where(bad, 0.5 * (lo + hi), candidate)
            done = np.max(np.abs(new_theta - theta)) < KB_SOLVE_TOL_RAD
            theta = new_theta
            if done:
                break
        return theta

    def unproject_array(
        self, pixels, extend_fov: bool = False
    ) -> tuple[np.ndarray, np.ndarray]:
        px = _as_points(pixels, 2)
        cx, cy = self.principal_point
        mx = (px[:, 0] - cx) / self.fx
        my = (px[:, 1] - cy) / self.fy
        rd = np.hypot(mx, my)
        theta_max = (
            min(self._theta_mono_max, math.pi) if extend_fov else self.fov_rad / 2.0
        )
        rd_max = float(self._distort(np.float64(theta_max)))
        valid = rd <= rd_max + 1e-12
        theta = self._solve_theta(np.minimum(rd, rd_max), theta_max)
        cu, su = _azimuth_unit(mx, my)
        sin_t = np.sin(theta)
        dirs = np.column_stack((sin_t * cu, sin_t * su, np.cos(theta)))
        return dirs, valid

    def project(self, direction) -> tuple[float, float] | None:
        px, valid = self.project_array(np.asarray(direction, dtype=np.float64))
        if not valid[0]:
            return None
        return (float(px[0, 0]), float(px[0, 1]))

    def unproject(self, pixel) -> np.ndarray | None:
        dirs, valid = self.unproject_array(np.asarray(pixel, dtype=np.float64))
        if not valid[0]:
            return None
        return dirs[0]


Camera = EquidistantCamera | KannalaBrandtCamera


def derive_equidistant(width_px: int, height_px: int, fov_rad: float) -> EquidistantCamera:
    """Equidistant camera with the fisheye circle inscribed in a square image.

    ``f = (width/2) / (fov/2)`` and the principal point at the image
    center, so the FOV boundary touches the image edges.
    """
    if width_px != height_px:
        raise ValueError("derived fisheye cameras require a square image")
    if width_px <= 0:
        raise ValueError("image size must be positive")
    if not 0.0 < fov_rad <= math.pi + 1e-12:
        raise ValueError("fov_rad must lie in (0, pi]")
    f = (width_px / 2.0) / (fov_rad / 2.0)
    return EquidistantCamera(
        focal_length_px_per_rad=f,
        width_px=width_px,
        height_px=height_px,
        principal_point=(width_px / 2.0, height_px / 2.0),
        fov_rad=fov_rad,
    )


def camera_to_json(camera: Camera) -> dict:
    """Intrinsics as a plain JSON-compatible dict."""
    cx, cy = camera.principal_point
    if isinstance(camera, EquidistantCamera):
        return {
            "model": "equidistant",
            "width": camera.width_px,
            "height": camera.height_px,
            "f": camera.focal_length_px_per_rad,
            "cx": cx,
            "cy": cy,
            "fov_deg": math.degrees(camera.fov_rad),
        }
    return {
        "model": "kannala_brandt",
        "width": camera.width_px,
        "height": camera.height_px,
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": cx,
        "cy": cy,
        "fov_deg": math.degrees(camera.fov_rad),
        "k": [camera.k1, camera.k2, camera.k3, camera.k4],
    }


def camera_from_json(obj: dict) -> Camera:
    model = obj.get("model")
    fov_rad = math.radians(float(obj.get("fov_deg", 180.0)))
    if model == "equidistant":
        return EquidistantCamera(
            focal_length_px_per_rad=float(obj["f"]),
            width_px=int(obj["width"]),
            height_px=int(obj["height"]),
            principal_point=(float(obj["cx"]), float(obj["cy"])),
            fov_rad=fov_rad,
        )
    if model == "kannala_brandt":
        k = obj.get("k", [0.0, 0.0, 0.0, 0.0])
        if len(k) != 4:
            raise ValueError("kannala_brandt cameras need 4 coefficients in 'k'")
        return KannalaBrandtCamera(
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            principal_point=(float(obj["cx"]), float(obj["cy"])),
            k1=float(k[0]),
            k2=float(k[1]),
            k3=float(k[2]),
            k4=float(k[3]),
            width_px=int(obj["width"]),
            height_px=int(obj["height"]),
            fov_rad=fov_rad,
        )
    raise ValueError(f"unknown camera model {model!r}")


def load_camera(path) -> Camera:
    with open(path, "r", encoding="utf-8") as fh:
        return camera_from_json(json.load(fh))


def save_camera(camera: Camera, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(camera_to_json(camera), fh, indent=2)
        fh.write("\n")
