"""Multi-frame aggregation of edge points and consistency weighting.

Edge points from a window of frames are stacked into one world-frame local
map using the per-frame LiDAR poses. Two per-point weights are derived from
the map:

  - position weight: how many map points fall within radius r (local density
    across frames; real edges recur at the same world location),
  - projection weight: the sum of the neighbors' attraction scores, where a
    point's score is exp(-D / sigma_a) of its sampled attraction-field
    distance D (1 on an edge, decaying away from it).

The combined weight is alpha * position + beta * projection after each is
normalized to [0, 1] by its window-wide maximum, so alpha and beta stay
unit-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, project_batch
from .geometry import Se3Transform
from .image_edges import AttractionField
from .lidar_edges import EdgePointSet


class MultiFrameError(ValueError):
    pass


class EmptyWindow(MultiFrameError):
    pass


class ScoresNotPopulated(MultiFrameError):
    """projection_weight requires populate_scores to have run on the map."""


class LengthMismatch(MultiFrameError):
    pass


@dataclass(frozen=True)
class FramePose:
    """LiDAR-frame pose: maps LiDAR coordinates to world coordinates."""

    frame_id: int
    pose: Se3Transform
    timestamp: float = 0.0


class LocalEdgeMap:
    """World-frame stack of edge points with a uniform voxel-hash index.

    Immutable after construction; populate_scores returns a new map. The
    voxel cell edge equals the nominal query radius r, so a radius-r query
    only visits the 27 surrounding cells.
    """

    def __init__(
        self,
        world_xyz: np.ndarray,
        local_xyz: np.ndarray,
        frame_ids: np.ndarray,
        radius: float,
        scores: np.ndarray | None = None,
        scores_populated: bool = False,
    ):
        if radius <= 0:
            raise MultiFrameError("radius must be positive")
        self.world_xyz = np.asarray(world_xyz, dtype=float).reshape(-1, 3)
        self.local_xyz = np.asarray(local_xyz, dtype=float).reshape(-1, 3)
        self.frame_ids = np.asarray(frame_ids, dtype=int).reshape(-1)
        self.radius = float(radius)
        self.scores = (
            np.full(len(self.world_xyz), np.nan) if scores is None else np.asarray(scores, float)
        )
        self.scores_populated = scores_populated
        self._cells: dict = {}
        keys = np.floor(self.world_xyz / self.radius).astype(np.int64)
        for i, key in enumerate(map(tuple, keys)):
            self._cells.setdefault(key, []).append(i)
        self._cells = {k: np.array(v, dtype=int) for k, v in self._cells.items()}

    def __len__(self):
        return len(self.world_xyz)

    def neighbors(self, p: np.ndarray, r: float | None = None) -> np.ndarray:
        """Indices of map points strictly within distance r of p."""
        r = self.radius if r is None else float(r)
        p = np.asarray(p, dtype=float).reshape(3)
        reach = max(1, int(math.ceil(r / self.radius)))
        base = np.floor(p / self.radius).astype(np.int64)
        buckets = []
        for di in range(-reach, reach + 1):
            for dj in range(-reach, reach + 1):
                for dk in range(-reach, reach + 1):
                    cell = self._cells.get((base[0] + di, base[1] + dj, base[2] + dk))
                    if cell is not None:
                        buckets.append(cell)
        if not buckets:
            return np.zeros(0, dtype=int)
        idx = np.concatenate(buckets)
        d2 = np.sum((self.world_xyz[idx] - p) ** 2, axis=1)
        return idx[d2 < r * r]


def build_map(frames, radius: float = 0.3) -> LocalEdgeMap:
    """Stack (EdgePointSet, FramePose) pairs into one indexed world map."""
    frames = list(frames)
    if not frames:
        raise EmptyWindow("no frames in window")
    ids = [pose.frame_id for _, pose in frames]
    if any(b <= a for a, b in zip(ids, ids[1:])):
        raise MultiFrameError("frame ids must be strictly increasing")
    world, local, fids = [], [], []
    for points, frame_pose in frames:
        world.append(frame_pose.pose.apply(points.xyz))
        local.append(points.xyz)
        fids.append(np.full(len(points), frame_pose.frame_id))
    return LocalEdgeMap(
        world_xyz=np.concatenate(world),
        local_xyz=np.concatenate(local),
        frame_ids=np.concatenate(fids).astype(int),
        radius=radius,
    )


def position_weight(edge_map: LocalEdgeMap, p: np.ndarray, r: float | None = None) -> int:
    """Count of map points strictly within r of p (p's own entry counts)."""
    return int(len(edge_map.neighbors(p, r)))


def projection_weight(edge_map: LocalEdgeMap, p: np.ndarray, r: float | None = None) -> float:
    """Sum of neighbor attraction scores; unprojected neighbors contribute 0."""
    if not edge_map.scores_populated:
        raise ScoresNotPopulated("run populate_scores before projection_weight")
    idx = edge_map.neighbors(p, r)
    return float(np.nansum(edge_map.scores[idx]))


def populate_scores(
    edge_map: LocalEdgeMap,
    fields: dict,
    t_init: Se3Transform,
    k: CameraIntrinsics,
    sigma_a: float = 10.0,
) -> LocalEdgeMap:
    """Project every map point into its source frame's attraction field and
    store A = exp(-D / sigma_a); rejected projections store no score.

    `fields` maps frame_id to that frame's AttractionField (the unblurred
    level). Returns a new map.
    """
    scores = np.full(len(edge_map), np.nan)
    for frame_id in np.unique(edge_map.frame_ids):
        sel = edge_map.frame_ids == frame_id
        fld = fields.get(int(frame_id))
        if fld is None:
            continue
        uv, _, valid, _ = project_batch(edge_map.local_xyz[sel], t_init, k)
        if not valid.any():
            continue
        dist, _ = fld.sample_batch(uv[valid])
        vals = np.full(int(sel.sum()), np.nan)
        vals[valid] = np.exp(-dist / sigma_a)
        scores[sel] = vals
    return LocalEdgeMap(
        world_xyz=edge_map.world_xyz,
        local_xyz=edge_map.local_xyz,
        frame_ids=edge_map.frame_ids,
        radius=edge_map.radius,
        scores=scores,
        scores_populated=True,
    )


@dataclass(frozen=True)
class ConsistencyWeights:
    w_position: np.ndarray
    w_projection: np.ndarray
    w_combined: np.ndarray


def _normalize(values: np.ndarray) -> np.ndarray:
    peak = values.max() if len(values) else 0.0
    if peak <= 0.0:
        return np.zeros_like(values, dtype=float)
    return values / peak


def combine_weights(w_pos, w_proj, alpha: float = 0.5, beta: float = 0.5) -> ConsistencyWeights:
    """alpha * normalized position + beta * normalized projection."""
    w_pos = np.asarray(w_pos, dtype=float)
    w_proj = np.asarray(w_proj, dtype=float)
    if w_pos.shape != w_proj.shape:
        raise LengthMismatch(f"{w_pos.shape} vs {w_proj.shape}")
    if alpha < 0 or beta < 0 or alpha + beta <= 0:
        raise MultiFrameError("need alpha, beta >= 0 with alpha + beta > 0")
    combined = alpha * _normalize(w_pos) + beta * _normalize(w_proj)
    return ConsistencyWeights(
        w_position=w_pos, w_projection=w_proj, w_combined=combined
    )


def window_weights(
    edge_map: LocalEdgeMap,
    fields: dict,
    t_init: Se3Transform,
    k: CameraIntrinsics,
    r: float | None = None,
    alpha: float = 0.5,
    beta: float = 0.5,
    sigma_a: float = 10.0,
) -> tuple[LocalEdgeMap, ConsistencyWeights]:
    """Score the map, then weight every map point in one pass."""
    scored = populate_scores(edge_map, fields, t_init, k, sigma_a=sigma_a)
    n = len(scored)
    w_pos = np.zeros(n)
    w_proj = np.zeros(n)
    for i in range(n):
        idx = scored.neighbors(scored.world_xyz[i], r)
        w_pos[i] = len(idx)
        w_proj[i] = np.nansum(scored.scores[idx])
    return scored, combine_weights(w_pos, w_proj, alpha, beta)


# ---------------------------------------------------------------------------
# Pose files
# ---------------------------------------------------------------------------


def load_kitti_poses(path) -> list[Se3Transform]:
    """KITTI odometry poses: one row-major 3x4 matrix per line."""
    poses = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                poses.append(Se3Transform.from_kitti_line(line))
    return poses


def _quat_xyzw_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def load_tum_poses(path) -> list[tuple[float, Se3Transform]]:
    """TUM trajectory: 'timestamp tx ty tz qx qy qz qw' per line."""
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = np.array([float(tok) for tok in line.split()])
            if vals.size != 8:
                raise MultiFrameError(f"TUM line needs 8 fields, got {vals.size}")
            rot = _quat_xyzw_to_matrix(vals[4:8])
            out.append((float(vals[0]), Se3Transform(rot, vals[1:4])))
    return out


def camera_poses_to_lidar(poses: list[Se3Transform], extrinsic: Se3Transform) -> list[Se3Transform]:
    """Camera-frame world poses -> LiDAR-frame world poses via the current
    extrinsic estimate (world <- cam <- lidar)."""
    return [p.compose(extrinsic) for p in poses]
