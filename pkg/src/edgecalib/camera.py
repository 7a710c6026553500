"""Pinhole projection of LiDAR points into a rectified image plane.

Images are assumed rectified; there is no distortion model here. Points with
camera-frame depth below Z_MIN (0.1 m) are rejected rather than projected,
which keeps the projection Jacobian bounded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import Se3Transform

Z_MIN = 0.1


class CameraError(ValueError):
    pass


class DegenerateDepth(CameraError):
    """Jacobian requested at a depth below Z_MIN."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise CameraError("principal point outside image")

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.fx, self.skew, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )

    @classmethod
    def from_json_file(cls, path) -> "CameraIntrinsics":
        d = json.loads(Path(path).read_text())
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            skew=float(d.get("skew", 0.0)),
        )

    def to_json_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "skew": self.skew,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_kitti_projection(cls, p_line: str, width: int, height: int) -> "CameraIntrinsics":
        """Build from the 12 numbers of a KITTI calib P-matrix line (3x4,
        row-major); only the leading 3x3 block is used."""
        vals = np.array([float(tok) for tok in p_line.split()], dtype=float)
        if vals.size != 12:
            raise CameraError(f"expected 12 numbers in P line, got {vals.size}")
        p = vals.reshape(3, 4)
        return cls(
            fx=float(p[0, 0]),
            fy=float(p[1, 1]),
            cx=float(p[0, 2]),
            cy=float(p[1, 2]),
            skew=float(p[0, 1]),
            width=width,
            height=height,
        )


class RejectReason(Enum):
    BEHIND_CAMERA = "behind_camera"
    OUT_OF_IMAGE = "out_of_image"


@dataclass(frozen=True)
class Rejected:
    """Expected-flow projection rejection (not a fault)."""

    reason: RejectReason
    uv: tuple[float, float] | None = None


@dataclass(frozen=True)
class PixelPoint:
    u: float
    v: float
    depth: float


def project(p_lidar, t: Se3Transform, k: CameraIntrinsics):
    """Project one LiDAR-frame point; returns PixelPoint or Rejected."""
    p_cam = t.apply(np.asarray(p_lidar, dtype=float))
    x, y, z = p_cam
    if z <= Z_MIN:
        return Rejected(RejectReason.BEHIND_CAMERA)
    u = k.fx * x / z + k.skew * y / z + k.cx
    v = k.fy * y / z + k.cy
    if not (0.0 <= u <= k.width - 1 and 0.0 <= v <= k.height - 1):
        return Rejected(RejectReason.OUT_OF_IMAGE, uv=(u, v))
    return PixelPoint(u=u, v=v, depth=z)


def project_batch(points: np.ndarray, t: Se3Transform, k: CameraIntrinsics):
    """Vectorized projection of (N, 3) LiDAR points.

    Returns (uv, depth, valid, in_image): uv is (N, 2) and only meaningful
    where depth > Z_MIN; valid = in front and inside the image bounds.
    """
    p_cam = np.asarray(points, dtype=float) @ t.rotation.T + t.translation
    z = p_cam[:, 2]
    front = z > Z_MIN
    zs = np.where(front, z, 1.0)
    u = (k.fx * p_cam[:, 0] + k.skew * p_cam[:, 1]) / zs + k.cx
    v = k.fy * p_cam[:, 1] / zs + k.cy
    uv = np.stack([u, v], axis=1)
    in_image = (u >= 0.0) & (u <= k.width - 1) & (v >= 0.0) & (v <= k.height - 1)
    valid = front & in_image
    return uv, z, valid, front


def projection_jacobian(p_cam, k: CameraIntrinsics) -> np.ndarray:
    """d(u, v)/d(p_cam): 2x3 in pixels per meter."""
    x, y, z = np.asarray(p_cam, dtype=float)
    if z < Z_MIN:
        raise DegenerateDepth(f"depth {z} below {Z_MIN}")
    z2 = z * z
    return np.array(
        [
            [k.fx / z, k.skew / z, -(k.fx * x + k.skew * y) / z2],
            [0.0, k.fy / z, -k.fy * y / z2],
        ]
    )


def projection_jacobian_batch(p_cam: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Vectorized (N, 2, 3) projection Jacobians; caller filters depths."""
    p = np.asarray(p_cam, dtype=float)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    z2 = z * z
    n = p.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = k.fx / z
    jac[:, 0, 1] = k.skew / z
    jac[:, 0, 2] = -(k.fx * x + k.skew * y) / z2
    jac[:, 1, 1] = k.fy / z
    jac[:, 1, 2] = -k.fy * y / z2
    return jac
