"""SE(3) rigid transforms, se(3) twists, and the left-perturbation machinery.

Conventions:
    - A transform stores a 3x3 rotation matrix R and a translation vector t
      (meters) and acts on points as p' = R @ p + t.
    - Twists are (rho, phi) with rho the translational part (meters) and phi
      the rotational part (radians, axis-angle).
    - exp/log use the full SE(3) maps: the translation of exp(xi) is V(phi) @ rho
      with V the left Jacobian of SO(3).
    - Euler angles for reporting are ZYX intrinsic (yaw-pitch-roll), degrees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

# Below this rotation angle, Rodrigues and the left Jacobian switch to their
# second-order Taylor expansions to avoid 0/0.
SMALL_ANGLE = 1e-8

# Orthonormality / determinant tolerance for stored rotations.
ROTATION_TOL = 1e-9


class GeometryError(ValueError):
    """Base class for geometry failures."""


class AngleNearPi(GeometryError):
    """Rotation angle within 1e-6 of pi; the log map is not unique there."""


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product (hat) matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _unskew(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@dataclass(frozen=True)
class TwistVector:
    """Element of se(3): rho (meters) stacked with phi (radians)."""

    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float).reshape(3))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.rho)) and np.all(np.isfinite(self.phi))):
            raise GeometryError("twist components must be finite")

    @classmethod
    def from_array(cls, xi: np.ndarray) -> "TwistVector":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.phi))


@dataclass(frozen=True)
class Se3Transform:
    """Rigid transform with validated rotation (p' = rotation @ p + translation)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.linalg.norm(r.T @ r - np.eye(3)) > ROTATION_TOL:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise GeometryError("rotation determinant is not +1")
        if not np.all(np.isfinite(t)):
            raise GeometryError("translation must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Se3Transform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform a point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def compose(self, other: "Se3Transform") -> "Se3Transform":
        """self @ other: apply `other` first, then `self`."""
        return Se3Transform(
            _ensure_rotation(self.rotation @ other.rotation),
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Se3Transform":
        rt = self.rotation.T
        return Se3Transform(rt, -rt @ self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    # -- serialization (KITTI 3x4 line and JSON) ------------------------------

    def to_kitti_line(self) -> str:
        """Row-major 3x4 as 12 whitespace-separated numbers."""
        vals = np.hstack([self.rotation, self.translation[:, None]]).ravel()
        return " ".join(repr(float(v)) for v in vals)

    @classmethod
    def from_kitti_line(cls, line: str) -> "Se3Transform":
        vals = np.array([float(tok) for tok in line.split()], dtype=float)
        if vals.size != 12:
            raise GeometryError(f"expected 12 numbers, got {vals.size}")
        m = vals.reshape(3, 4)
        return cls(_ensure_rotation(m[:, :3]), m[:, 3])

    def to_json_dict(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Se3Transform":
        r = np.asarray(d["rotation"], dtype=float).reshape(3, 3)
        t = np.asarray(d["translation"], dtype=float).reshape(3)
        return cls(_ensure_rotation(r), t)

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, s: str) -> "Se3Transform":
        return cls.from_json_dict(json.loads(s))


def _reorthonormalize(r: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _ensure_rotation(r: np.ndarray) -> np.ndarray:
    """Reorthonormalize only when outside tolerance, so clean inputs pass
    through bit-identically (serialization round-trips rely on this)."""
    if np.linalg.norm(r.T @ r - np.eye(3)) > ROTATION_TOL:
        return _reorthonormalize(r)
    return r


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues' formula with a Taylor branch near zero."""
    phi = np.asarray(phi, dtype=float).reshape(3)
    angle = np.linalg.norm(phi)
    k = skew(phi)
    k2 = k @ k
    if angle < SMALL_ANGLE:
        # I + K + K^2/2 with K = skew(phi); error O(angle^3)
        return np.eye(3) + k + 0.5 * k2
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + a * k + b * k2


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    """V(phi): maps the twist's rho onto the translation of exp."""
    phi = np.asarray(phi, dtype=float).reshape(3)
    angle = np.linalg.norm(phi)
    k = skew(phi)
    k2 = k @ k
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + k2 / 6.0
    a2 = angle * angle
    b = (1.0 - math.cos(angle)) / a2
    c = (angle - math.sin(angle)) / (a2 * angle)
    return np.eye(3) + b * k + c * k2


def _so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(3)
    angle = np.linalg.norm(phi)
    k = skew(phi)
    k2 = k @ k
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + k2 / 12.0
    half = 0.5 * angle
    cot_term = (1.0 - half * math.cos(half) / math.sin(half)) / (angle * angle)
    return np.eye(3) - 0.5 * k + cot_term * k2


def exp_map(xi: TwistVector) -> Se3Transform:
    """exp: se(3) -> SE(3)."""
    r = so3_exp(xi.phi)
    t = so3_left_jacobian(xi.phi) @ xi.rho
    return Se3Transform(_ensure_rotation(r), t)


def log_map(t: Se3Transform) -> TwistVector:
    """log: SE(3) -> se(3). Raises AngleNearPi within 1e-6 of the pi boundary."""
    r = t.rotation
    cos_angle = np.clip(0.5 * (np.trace(r) - 1.0), -1.0, 1.0)
    angle = math.acos(cos_angle)
    if angle > math.pi - 1e-6:
        raise AngleNearPi(f"rotation angle {angle} too close to pi")
    if angle < SMALL_ANGLE:
        phi = _unskew(0.5 * (r - r.T))
    else:
        phi = _unskew(r - r.T) * (angle / (2.0 * math.sin(angle)))
    rho = _so3_left_jacobian_inv(phi) @ t.translation
    return TwistVector(rho, phi)


def left_perturb(t: Se3Transform, delta: TwistVector) -> Se3Transform:
    """exp(delta) composed on the left of t."""
    return exp_map(delta).compose(t)


@dataclass(frozen=True)
class EulerAnglesDeg:
    """ZYX intrinsic (yaw-pitch-roll) angles in degrees, for reporting."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        if not (-180.0 < self.roll <= 180.0 and -180.0 < self.yaw <= 180.0):
            raise GeometryError("roll/yaw out of (-180, 180]")
        if not (-90.0 <= self.pitch <= 90.0):
            raise GeometryError("pitch out of [-90, 90]")


def euler_zyx_deg(r: np.ndarray) -> EulerAnglesDeg:
    """Decompose R = Rz(yaw) @ Ry(pitch) @ Rx(roll), angles in degrees."""
    r = np.asarray(r, dtype=float)
    sin_pitch = np.clip(-r[2, 0], -1.0, 1.0)
    pitch = math.asin(sin_pitch)
    if abs(sin_pitch) > 1.0 - 1e-12:
        # Gimbal lock: yaw/roll are coupled, put everything into yaw.
        yaw = math.atan2(-r[0, 1], r[1, 1])
        roll = 0.0
    else:
        yaw = math.atan2(r[1, 0], r[0, 0])
        roll = math.atan2(r[2, 1], r[2, 2])
    wrap = lambda a: a if a > -180.0 else a + 360.0
    return EulerAnglesDeg(
        roll=wrap(math.degrees(roll)),
        pitch=math.degrees(pitch),
        yaw=wrap(math.degrees(yaw)),
    )


def rotation_error_deg(a: Se3Transform, b: Se3Transform) -> tuple[float, float, float, float]:
    """(mean, roll, pitch, yaw) absolute Euler-angle errors of a @ b^-1, degrees."""
    rel = a.compose(b.inverse())
    e = euler_zyx_deg(rel.rotation)
    roll, pitch, yaw = abs(e.roll), abs(e.pitch), abs(e.yaw)
    return ((roll + pitch + yaw) / 3.0, roll, pitch, yaw)


def translation_error_cm(a: Se3Transform, b: Se3Transform) -> tuple[float, float, float, float]:
    """(mean, x, y, z) absolute translation errors of a @ b^-1, centimeters."""
    rel = a.compose(b.inverse())
    ex, ey, ez = (abs(float(v)) * 100.0 for v in rel.translation)
    return ((ex + ey + ez) / 3.0, ex, ey, ez)
