"""Point-to-line / point-to-plane residuals and their pose Jacobians.

Rotation Jacobians come in two flavors: partials w.r.t. the Euler angles
``(rx, ry, rz)`` of :mod:`locreg.core` (the default) and right-perturbation
Lie-algebra Jacobians ``p x w^L``.  In both, ``w`` is the residual gradient
direction in the map frame: the unit distance vector ``d`` for edges and the
plane normal ``n`` for planar matches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PoseLike, as_pose_vector, euler_to_rotation, transform_points
from .features import Correspondence, CorrespondenceSet, edge_distance_vector

EULER = "euler"
LIE = "lie"


def residual_line(pose: PoseLike, c: Correspondence) -> float:
    """Perpendicular distance ``|(R p + t - q) x l|``."""
    if not c.is_edge:
        raise ValueError("residual_line needs an edge correspondence")
    pm = transform_points(pose, c.p)[0]
    return float(np.linalg.norm(np.cross(pm - c.q, c.axis)))


def residual_plane(pose: PoseLike, c: Correspondence) -> float:
    """Signed distance ``(R p + t - q) . n``."""
    if c.is_edge:
        raise ValueError("residual_plane needs a planar correspondence")
    pm = transform_points(pose, c.p)[0]
    return float(np.dot(pm - c.q, c.axis))


def jacobian_line_translation(c: Correspondence) -> np.ndarray:
    return np.array(c.d, dtype=float)


def jacobian_plane_translation(c: Correspondence) -> np.ndarray:
    return np.array(c.axis, dtype=float)


def euler_rotation_jacobian(pose: PoseLike, p: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Rows ``(df/drx, df/dry, df/drz)`` for gradient directions ``w`` (map frame).

    Written out term by term with ``a = rz``, ``b = ry``, ``g = rx``.  The
    z-row has no ``w_z`` term: the third row of R does not depend on ``rz``.
    Accepts a single point (3,) or stacked points (N, 3).
    """
    x = as_pose_vector(pose)
    sg, cg = np.sin(x[0]), np.cos(x[0])
    sb, cb = np.sin(x[1]), np.cos(x[1])
    sa, ca = np.sin(x[2]), np.cos(x[2])
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    px, py, pz = p[..., 0], p[..., 1], p[..., 2]
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]

    jx = (
        ((sa * sg + ca * sb * cg) * py + (sa * cg - ca * sb * sg) * pz) * wx
        + ((-ca * sg + sa * sb * cg) * py + (-ca * cg - sa * sb * sg) * pz) * wy
        + (cb * cg * py - cb * sg * pz) * wz
    )
    jy = (
        (-ca * sb * px + ca * cb * sg * py + ca * cb * cg * pz) * wx
        + (-sa * sb * px + sa * cb * sg * py + sa * cb * cg * pz) * wy
        + (-cb * px - sb * sg * py - sb * cg * pz) * wz
    )
    jz = (-sa * cb * px + (-ca * cg - sa * sb * sg) * py + (ca * sg - sa * sb * cg) * pz) * wx + (
        ca * cb * px + (-sa * cg + ca * sb * sg) * py + (sa * sg + ca * sb * cg) * pz
    ) * wy
    return np.stack([jx, jy, jz], axis=-1)


def lie_rotation_jacobian(pose: PoseLike, p: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``(p^L x w^L)`` with ``w^L = R^T w^M``."""
    R = euler_to_rotation(pose)
    w_l = np.asarray(w, dtype=float) @ R  # row-wise R^T w
    return np.cross(np.asarray(p, dtype=float), w_l)


def jacobian_line_rotation_euler(pose: PoseLike, c: Correspondence) -> np.ndarray:
    return euler_rotation_jacobian(pose, c.p, c.d)


def jacobian_plane_rotation_euler(pose: PoseLike, c: Correspondence) -> np.ndarray:
    return euler_rotation_jacobian(pose, c.p, c.axis)


def jacobian_line_rotation_lie(pose: PoseLike, c: Correspondence) -> np.ndarray:
    return lie_rotation_jacobian(pose, c.p, c.d)


def jacobian_plane_rotation_lie(pose: PoseLike, c: Correspondence) -> np.ndarray:
    return lie_rotation_jacobian(pose, c.p, c.axis)


def normalize_rotation_jacobian(J_r: np.ndarray) -> np.ndarray:
    """Scale rows with norm > 1 down to unit norm; leave the rest untouched."""
    J = np.asarray(J_r, dtype=float)
    norm = np.linalg.norm(J, axis=-1, keepdims=True)
    return np.where(norm > 1.0, J / np.where(norm > 1.0, norm, 1.0), J)


@dataclass
class ResidualBatch:
    """Residuals and Jacobian blocks for a stack of correspondences."""

    values: np.ndarray  # (N,)
    J_r: np.ndarray  # (N, 3)
    J_t: np.ndarray  # (N, 3)
    is_edge: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def J(self) -> np.ndarray:
        return np.hstack([self.J_r, self.J_t])

    def normalized(self) -> "ResidualBatch":
        return ResidualBatch(self.values, normalize_rotation_jacobian(self.J_r), self.J_t, self.is_edge)

    def subset(self, rows) -> "ResidualBatch":
        return ResidualBatch(self.values[rows], self.J_r[rows], self.J_t[rows], self.is_edge[rows])


def evaluate(pose: PoseLike, corrs: CorrespondenceSet, jacobian: str = EULER) -> ResidualBatch:
    """Residuals and Jacobians of every correspondence at ``pose``.

    Edge distance vectors are recomputed at ``pose``; where the point sits on
    its line the stored direction is kept (the residual is zero there).
    """
    x = as_pose_vector(pose)
    pm = transform_points(x, corrs.p)
    e = corrs.is_edge
    values = np.einsum("ij,ij->i", pm - corrs.q, corrs.axis)
    w = corrs.axis.copy()
    if e.any():
        rej, dist = edge_distance_vector(pm[e], corrs.q[e], corrs.axis[e])
        safe = dist > 0
        d = corrs.d[e].copy()
        d[safe] = rej[safe] / dist[safe, None]
        w[e] = d
        values[e] = dist
    if jacobian == EULER:
        J_r = euler_rotation_jacobian(x, corrs.p, w)
    elif jacobian == LIE:
        J_r = lie_rotation_jacobian(x, corrs.p, w)
    else:
        raise ValueError(f"unknown jacobian flavor {jacobian!r}")
    return ResidualBatch(values, J_r.reshape(-1, 3), w, e.copy())
