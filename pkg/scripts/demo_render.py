#!/usr/bin/env python3
"""End-to-end synthesis demo: cubemap fixture -> fisheye -> KB remap.

Writes the five analytic face images, the rendered 180-degree fisheye, and
a Kannala-Brandt remap of it into the output directory.

    python3 scripts/demo_render.py [out_dir]
"""

import math
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fisheyegaze.cameras import KannalaBrandtCamera, derive_equidistant, save_camera
from fisheyegaze.reproject import (
    make_direction_color_cubemap,
    remap_fisheye,
    render_fisheye,
    save_cubemap,
    save_png,
)


def main(out_dir="demo_out"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cubemap = make_direction_color_cubemap(512)
    manifest = save_cubemap(cubemap, out / "cubemap")
    print(f"cubemap fixture -> {manifest}")

    camera = derive_equidistant(1024, 1024, math.pi)
    save_camera(camera, out / "equidistant.json")
    t0 = time.perf_counter()
    fisheye = render_fisheye(cubemap, camera)
    print(f"rendered 1024x1024 fisheye in {time.perf_counter() - t0:.2f} s")
    save_png(fisheye.pixels, out / "fisheye.png")
    save_png(fisheye.validity_mask, out / "fisheye_mask.png")

    k1 = 0.08
    dist_max = math.pi / 2 + k1 * (math.pi / 2) ** 3
    kb = KannalaBrandtCamera(
        fx=512.0 / dist_max, fy=512.0 / dist_max, principal_point=(512.0, 512.0),
        k1=k1, k2=0.0, k3=0.0, k4=0.0, width_px=1024, height_px=1024,
    )
    save_camera(kb, out / "kannala_brandt.json")
    t0 = time.perf_counter()
    remapped = remap_fisheye(fisheye, kb)
    print(f"remapped to KB(k1={k1}) in {time.perf_counter() - t0:.2f} s")
    save_png(remapped.pixels, out / "fisheye_kb.png")
    print(f"outputs in {out}/")


if __name__ == "__main__":
    main(*sys.argv[1:])
