"""Pose parameterization, rotations and rigid transforms.

A pose is a 6-vector ``(rx, ry, rz, tx, ty, tz)``: three Euler angles in
radians followed by a translation in meters.  The rotation is composed as

    R = Rz(rz) @ Ry(ry) @ Rx(rx)

i.e. roll about x is applied first, yaw about z last.  This is the order
under which the analytic Euler Jacobians in :mod:`locreg.residuals` are
exact derivatives (their x/y/z rows are the partials w.r.t. rx/ry/rz).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

GIMBAL_EPS = 1e-9


class GimbalLockError(ValueError):
    """Euler angles cannot be recovered because |cos(ry)| is ~0."""


@dataclass(frozen=True)
class Pose6D:
    """Immutable 6-DOF pose: Euler angles (rad) and translation (m)."""

    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_vector())):
            raise ValueError("pose components must be finite")

    @classmethod
    def from_vector(cls, x: Sequence[float]) -> "Pose6D":
        x = np.asarray(x, dtype=float).reshape(6)
        return cls(*(float(v) for v in x))

    @classmethod
    def identity(cls) -> "Pose6D":
        return cls()

    def as_vector(self) -> np.ndarray:
        return np.array([self.rx, self.ry, self.rz, self.tx, self.ty, self.tz], dtype=float)

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self)

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz], dtype=float)

    def matrix(self) -> np.ndarray:
        return pose_to_matrix(self)


PoseLike = Union[Pose6D, Sequence[float], np.ndarray]


def as_pose_vector(pose: PoseLike) -> np.ndarray:
    """Return ``pose`` as a float array of shape (6,)."""
    if isinstance(pose, Pose6D):
        return pose.as_vector()
    x = np.asarray(pose, dtype=float)
    if x.shape != (6,):
        raise ValueError(f"pose must have 6 components, got shape {x.shape}")
    return x


@dataclass
class PointCloud:
    """An (N, 3) array of points with optional per-point scan-ring index."""

    points: np.ndarray
    ring: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.ascontiguousarray(np.asarray(self.points, dtype=float).reshape(-1, 3))
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.ring is not None:
            self.ring = np.asarray(self.ring, dtype=np.int64).reshape(-1)
            if self.ring.shape[0] != self.points.shape[0]:
                raise ValueError("ring indices must cover every point")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_rings(self) -> bool:
        return self.ring is not None


def euler_to_rotation(pose: PoseLike) -> np.ndarray:
    """Rotation matrix ``Rz(rz) Ry(ry) Rx(rx)`` for the pose's Euler angles."""
    rx, ry, rz = as_pose_vector(pose)[:3]
    sx, cx = np.sin(rx), np.cos(rx)
    sy, cy = np.sin(ry), np.cos(ry)
    sz, cz = np.sin(rz), np.cos(rz)
    return np.array(
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    )


def rotation_to_euler(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`euler_to_rotation`; returns ``(rx, ry, rz)``.

    Raises GimbalLockError when ``|cos(ry)| < 1e-9``.
    """
    R = np.asarray(R, dtype=float)
    cy = np.hypot(R[0, 0], R[1, 0])
    if cy < GIMBAL_EPS:
        raise GimbalLockError("pitch is at +-pi/2; Euler angles are not unique")
    ry = np.arctan2(-R[2, 0], cy)
    rx = np.arctan2(R[2, 1], R[2, 2])
    rz = np.arctan2(R[1, 0], R[0, 0])
    return np.array([rx, ry, rz])


def pose_to_matrix(pose: PoseLike) -> np.ndarray:
    x = as_pose_vector(pose)
    T = np.eye(4)
    T[:3, :3] = euler_to_rotation(x)
    T[:3, 3] = x[3:]
    return T


def matrix_to_pose(T: np.ndarray) -> Pose6D:
    T = np.asarray(T, dtype=float)
    angles = rotation_to_euler(T[:3, :3])
    return Pose6D.from_vector(np.concatenate([angles, T[:3, 3]]))


def transform_point(pose: PoseLike, p: Sequence[float]) -> np.ndarray:
    """``R p + t`` for a single point."""
    x = as_pose_vector(pose)
    return euler_to_rotation(x) @ np.asarray(p, dtype=float) + x[3:]


def transform_points(pose: PoseLike, points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`transform_point` over an (N, 3) array."""
    x = as_pose_vector(pose)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return pts @ euler_to_rotation(x).T + x[3:]


def compose(a: PoseLike, b: PoseLike) -> Pose6D:
    """Pose whose matrix is ``T(a) @ T(b)``."""
    return matrix_to_pose(pose_to_matrix(a) @ pose_to_matrix(b))


def invert(a: PoseLike) -> Pose6D:
    T = pose_to_matrix(a)
    R = T[:3, :3]
    Ti = np.eye(4)
    Ti[:3, :3] = R.T
    Ti[:3, 3] = -R.T @ T[:3, 3]
    return matrix_to_pose(Ti)


def wrap_angles(x: PoseLike) -> np.ndarray:
    """Wrap the angular block into (-pi, pi]; used only for emitted reports."""
    v = as_pose_vector(x).copy()
    v[:3] = np.pi - np.mod(np.pi - v[:3], 2.0 * np.pi)
    return v


def skew(v: Sequence[float]) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi: Sequence[float]) -> np.ndarray:
    """Rodrigues' formula."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-12:
        return np.eye(3) + K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * (K @ K)
