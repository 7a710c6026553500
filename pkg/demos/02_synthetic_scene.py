"""Render the standard synthetic scene and visualize its ground truth.

Writes out/scene_demo/{shaded.png, edges.png, overlay.png}.

Run:  python demos/02_synthetic_scene.py
"""

from pathlib import Path

import numpy as np
from PIL import Image

from edgecalib.camera import project_batch
from edgecalib.synthetic import (
    render_edge_image,
    render_scan,
    render_shaded,
    standard_scene,
)

out = Path("out/scene_demo")
out.mkdir(parents=True, exist_ok=True)

spec = standard_scene(frames=3, range_sigma=0.0, lidar_spurious_fraction=0.0)
frame = 0

shaded, idmap = render_shaded(spec, frame)
Image.fromarray(shaded).save(out / "shaded.png")

edges = render_edge_image(spec, frame)
edges.to_png(out / "edges.png")

scan = render_scan(spec, frame)
print(f"scan: {len(scan.xyz)} returns, {int(scan.silhouette.sum())} silhouette-labeled")

# project the labeled silhouette points with the ground-truth extrinsic and
# draw them over the analytic edge image
rgb = np.stack([shaded] * 3, axis=2)
rgb[edges.grid] = (255, 215, 0)
uv, _, valid, _ = project_batch(scan.xyz[scan.silhouette], spec.extrinsic, spec.intrinsics)
for u, v in uv[valid]:
    r, c = int(round(v)), int(round(u))
    rgb[max(0, r - 1) : r + 1, max(0, c - 1) : c + 1] = (255, 0, 0)
Image.fromarray(rgb).save(out / "overlay.png")
print(f"wrote {out}/shaded.png, edges.png, overlay.png")
print("red points should sit on golden curves; that agreement is the")
print("signal the calibrator maximizes.")
