"""Depth-discontinuity edge extraction from ring-organized point clouds.

A scan is a set of rings (one per laser beam), each sorted by azimuth. Along
a ring, a range jump larger than max(abs_threshold, rel_threshold * nearer
range) marks the nearer return as an edge candidate; the nearer point is the
one still visible from the camera. Azimuth gaps wider than gap_factor times
the ring's median spacing (dropouts) mark the nearer bracketing return.
Candidates with too little cluster support are discarded.

Only horizontal (in-ring) discontinuities are used; vertical point density is
too low for a reliable vertical test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

PROFILE_DIR = Path(__file__).parent / "profiles"


class LidarError(ValueError):
    pass


class UnknownSensorLayout(LidarError):
    """No ring indices in the cloud and no elevation table configured."""


@dataclass(frozen=True)
class Ring:
    """One beam's returns, sorted by azimuth. Dropouts are simply absent."""

    azimuth: np.ndarray  # radians, (n,)
    range: np.ndarray  # meters, (n,), > 0
    xyz: np.ndarray  # meters, (n, 3)


@dataclass(frozen=True)
class RingScan:
    rings: tuple
    ring_count: int
    frame_id: int = 0

    def point_count(self) -> int:
        return sum(len(r.range) for r in self.rings)


@dataclass(frozen=True)
class EdgePointSet:
    """Edge candidates with provenance (the discontinuity partner's range)."""

    xyz: np.ndarray  # (n, 3) LiDAR frame
    ring: np.ndarray  # (n,) int
    azimuth: np.ndarray  # (n,) radians
    own_range: np.ndarray  # (n,)
    partner_range: np.ndarray  # (n,), inf for dropout partners
    weight: np.ndarray  # (n,), >= 0
    frame_id: int = 0

    def __post_init__(self):
        n = len(self.xyz)
        for name in ("ring", "azimuth", "own_range", "partner_range", "weight"):
            if len(getattr(self, name)) != n:
                raise LidarError(f"field {name} length mismatch")
        if np.any(self.weight < 0) or not np.all(np.isfinite(self.weight)):
            raise LidarError("weights must be finite and non-negative")

    def __len__(self):
        return len(self.xyz)

    @classmethod
    def empty(cls, frame_id: int = 0) -> "EdgePointSet":
        z = np.zeros(0)
        return cls(
            xyz=np.zeros((0, 3)),
            ring=np.zeros(0, dtype=int),
            azimuth=z,
            own_range=z,
            partner_range=z,
            weight=z,
            frame_id=frame_id,
        )

    def with_weights(self, weight: np.ndarray) -> "EdgePointSet":
        return EdgePointSet(
            xyz=self.xyz,
            ring=self.ring,
            azimuth=self.azimuth,
            own_range=self.own_range,
            partner_range=self.partner_range,
            weight=np.asarray(weight, dtype=float),
            frame_id=self.frame_id,
        )

    def take(self, idx: np.ndarray) -> "EdgePointSet":
        return EdgePointSet(
            xyz=self.xyz[idx],
            ring=self.ring[idx],
            azimuth=self.azimuth[idx],
            own_range=self.own_range[idx],
            partner_range=self.partner_range[idx],
            weight=self.weight[idx],
            frame_id=self.frame_id,
        )


@dataclass(frozen=True)
class EdgeExtractConfig:
    abs_threshold: float = 0.5  # meters
    rel_threshold: float = 0.04  # fraction of the nearer range
    gap_factor: float = 3.0  # multiples of the median in-ring spacing
    cluster_eps: float = 0.5  # meters
    cluster_min_points: int = 4


def organize_rings(
    xyz: np.ndarray,
    ring_index: np.ndarray | None = None,
    elevations_deg=None,
    frame_id: int = 0,
) -> RingScan:
    """Group a cloud into azimuth-sorted rings.

    Ring assignment uses explicit indices when present, otherwise nearest
    elevation-angle binning against the sensor's beam table.
    """
    pts = np.asarray(xyz, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise LidarError("empty point cloud")
    rng = np.linalg.norm(pts, axis=1)
    keep = np.isfinite(rng) & (rng > 1e-6)
    pts, rng = pts[keep], rng[keep]

    if ring_index is not None:
        ring = np.asarray(ring_index).reshape(-1)[keep].astype(int)
        ring_count = int(ring.max()) + 1 if len(ring) else 0
    elif elevations_deg is not None:
        table = np.asarray(elevations_deg, dtype=float)
        elev = np.degrees(np.arcsin(np.clip(pts[:, 2] / rng, -1.0, 1.0)))
        ring = np.argmin(np.abs(elev[:, None] - table[None, :]), axis=1)
        ring_count = len(table)
    else:
        raise UnknownSensorLayout(
            "cloud has no ring field and no elevation table was configured"
        )

    azimuth = np.arctan2(pts[:, 1], pts[:, 0])
    rings = []
    for r in range(ring_count):
        sel = ring == r
        order = np.argsort(azimuth[sel], kind="stable")
        rings.append(
            Ring(azimuth=azimuth[sel][order], range=rng[sel][order], xyz=pts[sel][order])
        )
    return RingScan(rings=tuple(rings), ring_count=ring_count, frame_id=frame_id)


def _ring_candidates(ring: Ring, cfg: EdgeExtractConfig) -> np.ndarray:
    """Indices of edge candidates within one ring.

    Pairs are consecutive stored returns (no pair across the azimuth seam);
    a dropout run wide enough to count as a gap suppresses the range-jump
    test for that pair and marks the nearer bracketing return instead.
    """
    n = len(ring.range)
    if n < 2:
        return np.zeros(0, dtype=int)
    r1, r2 = ring.range[:-1], ring.range[1:]
    daz = np.diff(ring.azimuth)

    spacing = np.median(daz) if n >= 3 else np.inf
    gap = daz > cfg.gap_factor * spacing

    nearer = np.minimum(r1, r2)
    jump = ~gap & (np.abs(r2 - r1) > np.maximum(cfg.abs_threshold, cfg.rel_threshold * nearer))

    nearer_idx = np.where(r1 <= r2, np.arange(n - 1), np.arange(1, n))
    return np.unique(nearer_idx[jump | gap])


def extract_edges(scan: RingScan, cfg: EdgeExtractConfig | None = None) -> EdgePointSet:
    """Mark the nearer return at every in-ring depth discontinuity or dropout."""
    cfg = cfg or EdgeExtractConfig()
    xyz, ring_ids, azimuth, own, partner = [], [], [], [], []
    for ring_id, ring in enumerate(scan.rings):
        idx = _ring_candidates(ring, cfg)
        if len(idx) == 0:
            continue
        n = len(ring.range)
        # partner = the farther adjacent return (the deeper discontinuity side)
        nxt, prv = np.minimum(idx + 1, n - 1), np.maximum(idx - 1, 0)
        neighbor_far = np.maximum(ring.range[nxt], ring.range[prv])
        xyz.append(ring.xyz[idx])
        ring_ids.append(np.full(len(idx), ring_id))
        azimuth.append(ring.azimuth[idx])
        own.append(ring.range[idx])
        partner.append(np.maximum(neighbor_far, ring.range[idx]))
    if not xyz:
        return EdgePointSet.empty(scan.frame_id)
    return EdgePointSet(
        xyz=np.concatenate(xyz),
        ring=np.concatenate(ring_ids).astype(int),
        azimuth=np.concatenate(azimuth),
        own_range=np.concatenate(own),
        partner_range=np.concatenate(partner),
        weight=np.ones(sum(len(x) for x in xyz)),
        frame_id=scan.frame_id,
    )


def cluster_filter(
    candidates: EdgePointSet, eps: float = 0.5, min_points: int = 4
) -> EdgePointSet:
    """Single-link Euclidean clustering; drop clusters below min_points.

    Output is sorted by (ring, azimuth) so identical inputs give bit-identical
    results.
    """
    n = len(candidates)
    if n == 0:
        return candidates
    labels = _single_link_labels(candidates.xyz, eps)
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    size_of = counts[inverse]
    keep = size_of >= min_points
    kept = candidates.take(np.flatnonzero(keep))
    order = np.lexsort((kept.azimuth, kept.ring))
    return kept.take(order)


def _single_link_labels(points: np.ndarray, eps: float) -> np.ndarray:
    """Union-find over all point pairs within eps (inclusive)."""
    n = len(points)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    tree = cKDTree(points)
    for i, j in tree.query_pairs(eps):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return np.array([find(i) for i in range(n)])


# ---------------------------------------------------------------------------
# File formats and sensor profiles
# ---------------------------------------------------------------------------


def read_velodyne_bin(path):
    """KITTI velodyne scan: little-endian float32 (x, y, z, reflectance)."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4 != 0:
        raise LidarError(f"{path}: size not a multiple of 4 floats")
    pts = raw.reshape(-1, 4)
    return pts[:, :3].astype(float), pts[:, 3].astype(float)


_PLY_DTYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


def read_ply(path):
    """Minimal PLY vertex reader: float x/y/z plus an optional ring column.

    Supports ascii and binary_little_endian with scalar properties only.
    Returns (xyz, ring_or_None).
    """
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise LidarError(f"{path}: not a PLY file")
        fmt = None
        count = 0
        props = []
        in_vertex = False
        while True:
            line = f.readline()
            if not line:
                raise LidarError(f"{path}: unterminated header")
            tokens = line.decode("ascii", "replace").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    count = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                if tokens[1] == "list":
                    raise LidarError(f"{path}: list properties unsupported")
                if tokens[1] not in _PLY_DTYPES:
                    raise LidarError(f"{path}: unsupported property type {tokens[1]}")
                props.append((tokens[2], _PLY_DTYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise LidarError(f"{path}: unsupported format {fmt}")
        names = [p[0] for p in props]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise LidarError(f"{path}: missing property {axis}")
        dtype = np.dtype(props)
        if fmt == "ascii":
            body = np.loadtxt(f, dtype=float, max_rows=count, ndmin=2)
            data = np.rec.fromarrays([body[:, i] for i in range(len(props))], dtype=dtype)
        else:
            data = np.frombuffer(f.read(count * dtype.itemsize), dtype=dtype)
    xyz = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(float)
    ring = data["ring"].astype(int) if "ring" in names else None
    return xyz, ring


def load_sensor_profile(name_or_path):
    """Elevation table from a shipped profile name or a JSON file path.

    The JSON carries {"name", "elevations_deg", "azimuth_resolution_deg"}.
    """
    p = Path(name_or_path)
    if not p.exists():
        p = PROFILE_DIR / f"{name_or_path}.json"
    if not p.exists():
        raise UnknownSensorLayout(f"no sensor profile {name_or_path!r}")
    d = json.loads(p.read_text())
    return d
