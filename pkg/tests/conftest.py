import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fisheyegaze.cameras import KannalaBrandtCamera, derive_equidistant


@pytest.fixture
def cam_1024():
    return derive_equidistant(1024, 1024, math.pi)


@pytest.fixture
def kb_like_equidistant(cam_1024):
    f = cam_1024.focal_length_px_per_rad
    return KannalaBrandtCamera(
        fx=f, fy=f, principal_point=(512.0, 512.0),
        k1=0.0, k2=0.0, k3=0.0, k4=0.0,
        width_px=1024, height_px=1024,
    )


@pytest.fixture
def kb_mild():
    # Slight barrel term; sized so the distorted circle stays inscribed.
    k1 = 0.05
    theta_max = math.pi / 2
    dist_max = theta_max + k1 * theta_max**3
    f = 512.0 / dist_max
    return KannalaBrandtCamera(
        fx=f, fy=f, principal_point=(512.0, 512.0),
        k1=k1, k2=0.0, k3=0.0, k4=0.0,
        width_px=1024, height_px=1024,
    )


def random_in_fov_directions(rng, n, fov_rad, margin=1e-6):
    theta = rng.uniform(0.0, fov_rad / 2.0 - margin, size=n)
    phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return np.column_stack(
        (np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta))
    )


def gradient_image(size):
    """Smooth low-frequency RGB test pattern."""
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    r = np.stack(
        [
            127.5 + 90.0 * np.sin(2 * math.pi * jj / size),
            127.5 + 90.0 * np.cos(2 * math.pi * ii / size),
            127.5 + 60.0 * np.sin(2 * math.pi * (ii + jj) / size),
        ],
        axis=-1,
    )
    return np.clip(np.rint(r), 0, 255).astype(np.uint8)
