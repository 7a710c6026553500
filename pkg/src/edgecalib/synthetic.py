"""Synthetic scenes with exact ground truth for desk-scale verification.

A scene is a ground plane plus vertical cylinders (with caps) and axis-aligned
boxes standing on it, scanned by a ring-structured LiDAR moving along a
trajectory, with a rigidly attached pinhole camera at a known ground-truth
extrinsic. Everything needed by the calibration pipeline can be produced:

  - render_scan: exact ray-cast ranges per (ring, azimuth) beam, plus
    per-return silhouette labels that follow the same adjacency conventions
    as the edge extractor (nearer side of a range jump, nearer bracket of a
    dropout run),
  - render_edge_image: analytic occluding-contour curves (cylinder tangent
    lines, rim arcs, box silhouette edges) rasterized one pixel wide,
  - render_shaded: a flat-shaded grayscale image and per-pixel primitive ids
    (for mask archives),
  - emit_sequence: the on-disk native dataset layout the loader consumes.

World frame: z up, ground at z = 0. LiDAR frame: x forward, y left, z up.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, project_batch
from .geometry import Se3Transform, TwistVector, exp_map
from .image_edges import EdgeMap, Mask, MaskSet, write_masks
from .lidar_edges import EdgeExtractConfig
from .multiframe import FramePose

MISS = np.inf


@dataclass(frozen=True)
class Cylinder:
    cx: float
    cy: float
    radius: float
    height: float


@dataclass(frozen=True)
class Box:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    height: float
    zmin: float = 0.0  # > 0 for elevated slabs (signs, overhangs)

    @property
    def zmax(self) -> float:
        return self.zmin + self.height


@dataclass(frozen=True)
class NoiseConfig:
    range_sigma: float = 0.0  # meters, additive along the beam
    pixel_jitter: float = 0.0  # pixels, on rasterized edge samples
    spurious_fraction: float = 0.0  # spurious image edge pixels / true edge pixels
    lidar_spurious_fraction: float = 0.0  # injected false edge points / true edge points


@dataclass(frozen=True)
class SceneSpec:
    cylinders: tuple
    boxes: tuple
    trajectory: tuple  # FramePose, LiDAR -> world
    elevations_deg: tuple
    azimuth_resolution_deg: float
    intrinsics: CameraIntrinsics
    extrinsic: Se3Transform  # ground truth, LiDAR -> camera
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    ground: bool = True
    max_range: float = 80.0

    def to_json_dict(self) -> dict:
        return {
            "cylinders": [[c.cx, c.cy, c.radius, c.height] for c in self.cylinders],
            "boxes": [[b.xmin, b.xmax, b.ymin, b.ymax, b.height, b.zmin] for b in self.boxes],
            "trajectory": [
                {"frame_id": p.frame_id, "pose": p.pose.to_json_dict(), "timestamp": p.timestamp}
                for p in self.trajectory
            ],
            "elevations_deg": list(self.elevations_deg),
            "azimuth_resolution_deg": self.azimuth_resolution_deg,
            "intrinsics": self.intrinsics.to_json_dict(),
            "extrinsic": self.extrinsic.to_json_dict(),
            "noise": {
                "range_sigma": self.noise.range_sigma,
                "pixel_jitter": self.noise.pixel_jitter,
                "spurious_fraction": self.noise.spurious_fraction,
                "lidar_spurious_fraction": self.noise.lidar_spurious_fraction,
            },
            "ground": self.ground,
            "max_range": self.max_range,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            cylinders=tuple(Cylinder(*c) for c in d["cylinders"]),
            boxes=tuple(Box(*b) for b in d["boxes"]),
            trajectory=tuple(
                FramePose(
                    frame_id=p["frame_id"],
                    pose=Se3Transform.from_json_dict(p["pose"]),
                    timestamp=p.get("timestamp", 0.0),
                )
                for p in d["trajectory"]
            ),
            elevations_deg=tuple(d["elevations_deg"]),
            azimuth_resolution_deg=d["azimuth_resolution_deg"],
            intrinsics=CameraIntrinsics(**d["intrinsics"]),
            extrinsic=Se3Transform.from_json_dict(d["extrinsic"]),
            noise=NoiseConfig(**d["noise"]),
            ground=d.get("ground", True),
            max_range=d.get("max_range", 80.0),
        )

    @classmethod
    def from_json_file(cls, path) -> "SceneSpec":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------

GROUND_ID = 1  # primitive ids start at 1 so they can double as mask ids


def _primitive_ids(spec: SceneSpec):
    """Ground (when present) is id 1, then cylinders, then boxes."""
    ids = {}
    next_id = GROUND_ID + (1 if spec.ground else 0)
    for i in range(len(spec.cylinders)):
        ids[("cyl", i)] = next_id
        next_id += 1
    for i in range(len(spec.boxes)):
        ids[("box", i)] = next_id
        next_id += 1
    return ids


def first_hit(spec: SceneSpec, origin: np.ndarray, dirs: np.ndarray):
    """Nearest intersection of world-frame rays with the scene.

    Returns (t, id): t = inf and id = 0 where nothing is hit within max_range.
    Directions must be unit length.
    """
    o = np.asarray(origin, dtype=float).reshape(3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = len(d)
    best_t = np.full(n, MISS)
    best_id = np.zeros(n, dtype=int)
    ids = _primitive_ids(spec)

    def consider(t, hit_id):
        better = (t > 1e-9) & (t < best_t) & (t <= spec.max_range)
        best_t[better] = t[better]
        best_id[better] = hit_id

    if spec.ground:
        dz = d[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dz < -1e-12, -o[2] / dz, MISS)
        consider(t, GROUND_ID)

    for i, c in enumerate(spec.cylinders):
        ox, oy = o[0] - c.cx, o[1] - c.cy
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2.0 * (ox * d[:, 0] + oy * d[:, 1])
        cc = ox * ox + oy * oy - c.radius**2
        disc = b * b - 4.0 * a * cc
        ok = (disc >= 0) & (a > 1e-12)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(ok, (-b - sq) / (2 * a), MISS)
            t2 = np.where(ok, (-b + sq) / (2 * a), MISS)
        with np.errstate(invalid="ignore"):
            for t_side in (t1, t2):
                z = o[2] + t_side * d[:, 2]
                t = np.where((t_side > 1e-9) & (z >= 0.0) & (z <= c.height), t_side, MISS)
                consider(t, ids[("cyl", i)])
            # top cap
            with np.errstate(divide="ignore"):
                t_cap = np.where(np.abs(d[:, 2]) > 1e-12, (c.height - o[2]) / d[:, 2], MISS)
            px = o[0] + t_cap * d[:, 0] - c.cx
            py = o[1] + t_cap * d[:, 1] - c.cy
            t = np.where((t_cap > 1e-9) & (px * px + py * py <= c.radius**2), t_cap, MISS)
            consider(t, ids[("cyl", i)])

    for i, b in enumerate(spec.boxes):
        lo = np.array([b.xmin, b.ymin, b.zmin])
        hi = np.array([b.xmax, b.ymax, b.zmax])
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.abs(d) > 1e-12, 1.0 / d, MISS)
        t_lo = (lo - o) * inv
        t_hi = (hi - o) * inv
        near = np.nanmin(np.stack([t_lo, t_hi]), axis=0).max(axis=1)
        far = np.nanmax(np.stack([t_lo, t_hi]), axis=0).min(axis=1)
        t = np.where((far >= near) & (near > 1e-9), near, MISS)
        consider(t, ids[("box", i)])

    return best_t, best_id


def inside_solid(spec: SceneSpec, points: np.ndarray) -> np.ndarray:
    """Whether world points lie strictly inside any primitive volume."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    inside = np.zeros(len(p), dtype=bool)
    for c in spec.cylinders:
        r2 = (p[:, 0] - c.cx) ** 2 + (p[:, 1] - c.cy) ** 2
        inside |= (r2 < c.radius**2) & (p[:, 2] > 0.0) & (p[:, 2] < c.height)
    for b in spec.boxes:
        inside |= (
            (p[:, 0] > b.xmin)
            & (p[:, 0] < b.xmax)
            & (p[:, 1] > b.ymin)
            & (p[:, 1] < b.ymax)
            & (p[:, 2] > b.zmin)
            & (p[:, 2] < b.zmax)
        )
    return inside


# ---------------------------------------------------------------------------
# Scan rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticScan:
    """Ray-cast returns of one frame, LiDAR frame coordinates."""

    xyz: np.ndarray  # (n, 3)
    ring: np.ndarray  # (n,)
    azimuth: np.ndarray  # (n,) beam azimuth, radians
    range: np.ndarray  # (n,) noisy range if noise was applied
    surface_id: np.ndarray  # (n,)
    silhouette: np.ndarray  # (n,) bool ground-truth edge label
    frame_id: int


def beam_grid(spec: SceneSpec):
    """(elevations, azimuths) of the full scan grid, radians."""
    elev = np.radians(np.asarray(spec.elevations_deg, dtype=float))
    res = math.radians(spec.azimuth_resolution_deg)
    count = int(round(2.0 * math.pi / res))
    az = -math.pi + np.arange(count) * res
    return elev, az


def _silhouette_labels(ranges_row: np.ndarray, cfg: EdgeExtractConfig):
    """Ground-truth labels for one ring's full beam grid (MISS = dropout).

    A return is a silhouette when either grid neighbor (the beam circle is
    closed, so adjacency wraps) got no return, or got one farther away by
    more than the discontinuity threshold. Only the nearer side of a jump is
    labeled; it is the side the camera can still see.
    """
    r = ranges_row
    hit = np.isfinite(r)
    labels = np.zeros(len(r), dtype=bool)
    with np.errstate(invalid="ignore"):
        for shift in (1, -1):
            nb = np.roll(r, shift)
            nb_miss = ~np.isfinite(nb)
            threshold = np.maximum(cfg.abs_threshold, cfg.rel_threshold * np.minimum(r, nb))
            jump = np.isfinite(nb) & (nb - r > threshold)
            labels |= hit & (nb_miss | jump)
    return labels


def render_scan(
    spec: SceneSpec,
    frame_id: int,
    rng: np.random.Generator | None = None,
    label_cfg: EdgeExtractConfig | None = None,
) -> SyntheticScan:
    """Exact ray casting of the frame's beam grid, with silhouette labels.

    Labels are computed on the noise-free ranges; optional Gaussian range
    noise is applied afterwards (points slide along their beams).
    """
    label_cfg = label_cfg or EdgeExtractConfig()
    pose = spec.trajectory[frame_id].pose
    elev, az = beam_grid(spec)
    n_rings, n_az = len(elev), len(az)

    cos_e, sin_e = np.cos(elev), np.sin(elev)
    cos_a, sin_a = np.cos(az), np.sin(az)
    dirs_lidar = np.stack(
        [
            np.outer(cos_e, cos_a),
            np.outer(cos_e, sin_a),
            np.broadcast_to(sin_e[:, None], (n_rings, n_az)).copy(),
        ],
        axis=2,
    ).reshape(-1, 3)
    dirs_world = dirs_lidar @ pose.rotation.T
    t, surf = first_hit(spec, pose.translation, dirs_world)
    t = t.reshape(n_rings, n_az)
    surf = surf.reshape(n_rings, n_az)

    labels = np.zeros_like(t, dtype=bool)
    for ring in range(n_rings):
        labels[ring] = _silhouette_labels(t[ring], label_cfg)

    hit = np.isfinite(t)
    rings_idx, az_idx = np.nonzero(hit)
    ranges = t[hit]
    if rng is not None and spec.noise.range_sigma > 0:
        ranges = ranges + rng.normal(0.0, spec.noise.range_sigma, size=ranges.shape)
        ranges = np.maximum(ranges, 0.2)
    xyz = dirs_lidar.reshape(n_rings, n_az, 3)[hit] * ranges[:, None]
    return SyntheticScan(
        xyz=xyz,
        ring=rings_idx,
        azimuth=az[az_idx],
        range=ranges,
        surface_id=surf[hit],
        silhouette=labels[hit],
        frame_id=frame_id,
    )


# ---------------------------------------------------------------------------
# Edge-image rendering
# ---------------------------------------------------------------------------


def camera_center_world(spec: SceneSpec, frame_id: int) -> np.ndarray:
    pose = spec.trajectory[frame_id].pose
    return pose.apply(spec.extrinsic.inverse().translation)


def cylinder_tangent_lines(spec: SceneSpec, frame_id: int, cyl: Cylinder):
    """The two vertical silhouette lines of a cylinder as seen from the
    camera: [((x, y), z_range)] in world coordinates; empty if the camera's
    horizontal position is inside the circle."""
    c = camera_center_world(spec, frame_id)
    dx, dy = cyl.cx - c[0], cyl.cy - c[1]
    d = math.hypot(dx, dy)
    if d <= cyl.radius * (1.0 + 1e-9):
        return []
    gamma = math.acos(cyl.radius / d)
    base = math.atan2(c[1] - cyl.cy, c[0] - cyl.cx)
    lines = []
    for sign in (-1.0, 1.0):
        ang = base + sign * gamma
        tx = cyl.cx + cyl.radius * math.cos(ang)
        ty = cyl.cy + cyl.radius * math.sin(ang)
        lines.append(((tx, ty), (0.0, cyl.height)))
    return lines


def _box_silhouette_edges(spec: SceneSpec, frame_id: int, box: Box):
    """Box edges with exactly one camera-facing adjacent face."""
    c = camera_center_world(spec, frame_id)
    lo = np.array([box.xmin, box.ymin, box.zmin])
    hi = np.array([box.xmax, box.ymax, box.zmax])

    def corner(ix, iy, iz):
        return np.array(
            [hi[0] if ix else lo[0], hi[1] if iy else lo[1], hi[2] if iz else lo[2]]
        )

    # faces: (normal axis, sign); facing = normal points toward the camera
    def facing(axis, sign):
        plane = hi[axis] if sign > 0 else lo[axis]
        return sign * (c[axis] - plane) > 0

    edges = []
    # 12 edges: run axis + fixed coords of the two adjacent faces
    for run_axis in range(3):
        a1, a2 = [ax for ax in range(3) if ax != run_axis]
        for s1 in (0, 1):
            for s2 in (0, 1):
                f1 = facing(a1, 1 if s1 else -1)
                f2 = facing(a2, 1 if s2 else -1)
                if f1 == f2:
                    continue  # crease or fully hidden
                start = np.zeros(3)
                end = np.zeros(3)
                start[run_axis], end[run_axis] = lo[run_axis], hi[run_axis]
                for ax, s in ((a1, s1), (a2, s2)):
                    start[ax] = end[ax] = hi[ax] if s else lo[ax]
                edges.append((start, end))
    return edges


def _visible(spec: SceneSpec, cam: np.ndarray, points: np.ndarray) -> np.ndarray:
    vec = points - cam
    dist = np.linalg.norm(vec, axis=1)
    dirs = vec / dist[:, None]
    t, _ = first_hit(spec, cam, dirs)
    return t >= dist * (1.0 - 1e-6) - 2e-3


def _project_world(spec: SceneSpec, frame_id: int, points: np.ndarray):
    pose = spec.trajectory[frame_id].pose
    local = (np.asarray(points) - pose.translation) @ pose.rotation
    return project_batch(local, spec.extrinsic, spec.intrinsics)


def _curve_samples(spec: SceneSpec, frame_id: int):
    """Visible world-space samples of every analytic silhouette curve."""
    cam = camera_center_world(spec, frame_id)
    chunks = []

    for cyl in spec.cylinders:
        for (tx, ty), (z0, z1) in cylinder_tangent_lines(spec, frame_id, cyl):
            z = np.linspace(z0, z1, 400)
            pts = np.stack([np.full_like(z, tx), np.full_like(z, ty), z], axis=1)
            chunks.append(pts)
        # rim circles (top cap boundary and ground contact)
        for z_rim in (cyl.height, 0.0):
            ang = np.linspace(-math.pi, math.pi, 1500, endpoint=False)
            pts = np.stack(
                [
                    cyl.cx + cyl.radius * np.cos(ang),
                    cyl.cy + cyl.radius * np.sin(ang),
                    np.full_like(ang, z_rim),
                ],
                axis=1,
            )
            # occluding-contour test: just beyond the rim the ray must leave
            # the solid
            out_dir = pts - cam
            out_dir /= np.linalg.norm(out_dir, axis=1)[:, None]
            beyond = pts + 1e-4 * out_dir
            pts = pts[~inside_solid(spec, beyond)]
            if len(pts):
                chunks.append(pts)

    for box in spec.boxes:
        for start, end in _box_silhouette_edges(spec, frame_id, box):
            s = np.linspace(0.0, 1.0, 400)[:, None]
            chunks.append(start[None, :] * (1 - s) + end[None, :] * s)

    if not chunks:
        return np.zeros((0, 3))
    pts = np.concatenate(chunks)
    return pts[_visible(spec, cam, pts)]


def render_edge_image(
    spec: SceneSpec, frame_id: int, rng: np.random.Generator | None = None
) -> EdgeMap:
    """Rasterize the analytic silhouette curves one pixel wide, applying the
    configured pixel jitter and spurious segments when an rng is given."""
    k = spec.intrinsics
    pts = _curve_samples(spec, frame_id)
    uv, _, valid, _ = _project_world(spec, frame_id, pts)
    uv = uv[valid]
    if rng is not None and spec.noise.pixel_jitter > 0:
        uv = uv + rng.normal(0.0, spec.noise.pixel_jitter, size=uv.shape)
    grid = np.zeros((k.height, k.width), dtype=bool)
    if len(uv):
        cols = np.clip(np.rint(uv[:, 0]).astype(int), 0, k.width - 1)
        rows = np.clip(np.rint(uv[:, 1]).astype(int), 0, k.height - 1)
        inb = (uv[:, 0] > -0.5) & (uv[:, 0] < k.width - 0.5) & (uv[:, 1] > -0.5) & (
            uv[:, 1] < k.height - 0.5
        )
        grid[rows[inb], cols[inb]] = True

    if rng is not None and spec.noise.spurious_fraction > 0:
        target = int(spec.noise.spurious_fraction * grid.sum())
        drawn = 0
        while drawn < target:
            u0 = rng.uniform(0, k.width - 1)
            v0 = rng.uniform(0, k.height - 1)
            ang = rng.uniform(0, math.pi)
            length = rng.uniform(8, 30)
            s = np.arange(0.0, length, 0.5)
            us = np.rint(u0 + s * math.cos(ang)).astype(int)
            vs = np.rint(v0 + s * math.sin(ang)).astype(int)
            ok = (us >= 0) & (us < k.width) & (vs >= 0) & (vs < k.height)
            grid[vs[ok], us[ok]] = True
            drawn += int(ok.sum())
    return EdgeMap(grid=grid)


def render_shaded(spec: SceneSpec, frame_id: int):
    """Flat-shaded grayscale image and the per-pixel primitive id map."""
    k = spec.intrinsics
    pose = spec.trajectory[frame_id].pose
    world_from_cam = pose.compose(spec.extrinsic.inverse())
    uu, vv = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
    dirs_cam = np.stack(
        [(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=2
    ).reshape(-1, 3)
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1)[:, None]
    dirs_world = dirs_cam @ world_from_cam.rotation.T
    t, ids = first_hit(spec, world_from_cam.translation, dirs_world)
    idmap = ids.reshape(k.height, k.width)
    shades = {0: 215, GROUND_ID: 40}  # sky, ground
    image = np.full(idmap.shape, shades[0], dtype=np.uint8)
    image[idmap == GROUND_ID] = shades[GROUND_ID]
    # objects sit at the ground/sky midpoint so a contour's strength is the
    # same against either background and the adaptive filter keeps all of it
    for pid in range(GROUND_ID + 1, int(idmap.max()) + 1):
        image[idmap == pid] = 127
    return image, idmap


def masks_from_idmap(idmap: np.ndarray, min_pixels: int = 30) -> MaskSet:
    height, width = idmap.shape
    masks = []
    for pid in np.unique(idmap):
        if pid == 0:
            continue
        grid = idmap == pid
        if grid.sum() >= min_pixels:
            masks.append(Mask(id=int(pid), grid=grid))
    return MaskSet(masks=tuple(masks), width=width, height=height)


# ---------------------------------------------------------------------------
# Standard scenes and dataset emission
# ---------------------------------------------------------------------------


def _default_extrinsic() -> Se3Transform:
    """Forward camera: x_cam = -y_lidar, y_cam = -z_lidar, z_cam = x_lidar,
    with a small realistic mounting offset."""
    r0 = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    base = Se3Transform(r0, np.array([0.06, 0.21, -0.11]))
    tweak = exp_map(
        TwistVector([0.0, 0.0, 0.0], np.radians([0.8, -1.3, 0.5]))
    )
    return tweak.compose(base)


def inject_spurious_points(edge_set, fraction: float, rng: np.random.Generator):
    """Append LiDAR-frame ground clutter (plausible returns far from any
    image edge) amounting to `fraction` of the true edge points."""
    from .lidar_edges import EdgePointSet

    n_extra = int(round(fraction * len(edge_set)))
    if n_extra == 0:
        return edge_set
    xy = rng.uniform([4.0, -4.5], [15.0, 4.5], size=(n_extra, 2))
    # clutter spans ground level up to bush/pole height so its pull has no
    # preferred image direction
    xyz = np.column_stack([xy, rng.uniform(-1.75, 0.8, size=n_extra)])
    rng_norm = np.linalg.norm(xyz, axis=1)
    return EdgePointSet(
        xyz=np.vstack([edge_set.xyz, xyz]),
        ring=np.concatenate([edge_set.ring, np.full(n_extra, edge_set.ring.max(initial=0) + 1)]),
        azimuth=np.concatenate([edge_set.azimuth, np.arctan2(xyz[:, 1], xyz[:, 0])]),
        own_range=np.concatenate([edge_set.own_range, rng_norm]),
        partner_range=np.concatenate([edge_set.partner_range, rng_norm]),
        weight=np.concatenate([edge_set.weight, np.ones(n_extra)]),
        frame_id=edge_set.frame_id,
    )


def standard_scene(
    frames: int = 20,
    range_sigma: float = 0.02,
    pixel_jitter: float = 0.0,
    lidar_spurious_fraction: float = 0.10,
) -> SceneSpec:
    """The 6-cylinder / 2-box verification scene used by the acceptance suite.

    Layout notes: cylinder pairs mirror in y so quantization pull cancels
    left/right; the two boxes are wall slabs taller than the sensor, whose
    straight top edges against the sky give sharp vertical constraints
    (grazing penetration there is a fraction of a pixel, unlike curved rims).
    """
    cylinders = (
        Cylinder(6.5, -2.2, 0.22, 4.2),
        Cylinder(6.5, 2.2, 0.22, 4.2),
        Cylinder(14.0, -1.0, 0.30, 4.5),
        Cylinder(14.0, 1.0, 0.30, 4.5),
        Cylinder(11.5, -5.8, 0.35, 3.5),
        Cylinder(11.5, 5.8, 0.35, 3.5),
    )
    boxes = (
        # wall slabs taller than the sensor: their long straight top edges
        # against the sky pin the vertical directions; two heights spread the
        # edge crossings over more scan rings
        Box(9.4, 9.45, -2.8, -1.2, 2.45),
        Box(9.4, 9.45, 1.2, 2.8, 2.85),
    )
    poses = []
    for i in range(frames):
        yaw = math.radians(1.5) * math.sin(i / 3.0)
        rot = np.array(
            [
                [math.cos(yaw), -math.sin(yaw), 0.0],
                [math.sin(yaw), math.cos(yaw), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        trans = np.array([0.15 * i, 0.2 * math.sin(i / 2.5), 1.72])
        poses.append(FramePose(frame_id=i, pose=Se3Transform(rot, trans), timestamp=0.1 * i))
    return SceneSpec(
        cylinders=cylinders,
        boxes=boxes,
        trajectory=tuple(poses),
        elevations_deg=tuple(np.linspace(6.0, -18.0, 48)),
        azimuth_resolution_deg=0.05,
        intrinsics=CameraIntrinsics(
            fx=420.0, fy=420.0, cx=360.0, cy=240.0, width=720, height=480
        ),
        extrinsic=_default_extrinsic(),
        noise=NoiseConfig(
            range_sigma=range_sigma,
            pixel_jitter=pixel_jitter,
            lidar_spurious_fraction=lidar_spurious_fraction,
        ),
    )


def apply_range_noise(scan: SyntheticScan, sigma: float, rng: np.random.Generator) -> SyntheticScan:
    """Noisy copy of a scan: points slide along their beams, labels kept.

    Rendering a scene is expensive; noise-free scans can be rendered once and
    perturbed per trial with this helper.
    """
    if sigma <= 0:
        return scan
    noisy = np.maximum(scan.range + rng.normal(0.0, sigma, size=scan.range.shape), 0.2)
    dirs = scan.xyz / scan.range[:, None]
    return SyntheticScan(
        xyz=dirs * noisy[:, None],
        ring=scan.ring,
        azimuth=scan.azimuth,
        range=noisy,
        surface_id=scan.surface_id,
        silhouette=scan.silhouette,
        frame_id=scan.frame_id,
    )


def emit_sequence(spec: SceneSpec, out_dir, seed: int = 0) -> Path:
    """Write the scene as a native-layout dataset (velodyne/, images/, masks/,
    poses.txt, calib.json, times.txt)."""
    from PIL import Image

    out = Path(out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    times = []
    for fp in spec.trajectory:
        i = fp.frame_id
        scan = render_scan(spec, i, rng=rng)
        pts = np.zeros((len(scan.xyz), 4), dtype="<f4")
        pts[:, :3] = scan.xyz
        pts.tofile(out / "velodyne" / f"{i:06d}.bin")
        image, idmap = render_shaded(spec, i)
        Image.fromarray(image).save(out / "images" / f"{i:06d}.png")
        write_masks(masks_from_idmap(idmap), out / "masks" / f"{i:06d}.ecmk")
        times.append(fp.timestamp)
    (out / "poses.txt").write_text(
        "\n".join(fp.pose.to_kitti_line() for fp in spec.trajectory) + "\n"
    )
    (out / "times.txt").write_text("\n".join(repr(t) for t in times) + "\n")
    calib = {
        "intrinsics": spec.intrinsics.to_json_dict(),
        "extrinsic_gt": spec.extrinsic.to_json_dict(),
        "pose_frame": "lidar",
        "lidar_profile": {
            "name": "synthetic",
            "elevations_deg": list(spec.elevations_deg),
            "azimuth_resolution_deg": spec.azimuth_resolution_deg,
        },
    }
    (out / "calib.json").write_text(json.dumps(calib, indent=2) + "\n")
    return out
