"""Timestamped pose sequences, rigid alignment and ATE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Pose6D, PoseLike, as_pose_vector, compose, invert


@dataclass
class Trajectory:
    """Poses as an (N, 6) array ``(rx, ry, rz, tx, ty, tz)`` with timestamps."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.x = np.asarray(self.x, dtype=float).reshape(-1, 6)
        if len(self.t) != len(self.x):
            raise ValueError("timestamps and poses differ in length")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Pose6D:
        return Pose6D.from_vector(self.x[i])

    @property
    def positions(self) -> np.ndarray:
        return self.x[:, 3:]

    @classmethod
    def empty(cls) -> "Trajectory":
        return cls(np.zeros(0), np.zeros((0, 6)))

    @classmethod
    def from_poses(cls, t, poses) -> "Trajectory":
        return cls(t, np.array([as_pose_vector(p) for p in poses]).reshape(-1, 6))


def straight_line(n: int, start: PoseLike, step: PoseLike, dt: float = 0.1) -> Trajectory:
    """``n`` poses starting at ``start``, each composed with the body-frame ``step``."""
    poses = [Pose6D.from_vector(as_pose_vector(start))]
    for _ in range(n - 1):
        poses.append(compose(poses[-1], step))
    return Trajectory.from_poses(np.arange(n) * dt, poses)


def relative_motion(a: PoseLike, b: PoseLike) -> Pose6D:
    """Body-frame increment taking ``a`` to ``b``."""
    return compose(invert(a), b)


def associate(est: Trajectory, gt: Trajectory, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs of poses whose timestamps agree within ``tol``."""
    if len(est) == 0 or len(gt) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    j = np.clip(np.searchsorted(gt.t, est.t), 0, len(gt) - 1)
    jm = np.clip(j - 1, 0, len(gt) - 1)
    pick = np.where(np.abs(gt.t[jm] - est.t) < np.abs(gt.t[j] - est.t), jm, j)
    ok = np.abs(gt.t[pick] - est.t) <= tol
    return np.flatnonzero(ok), pick[ok]


def umeyama_rigid(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation with ``dst ~ R src + t`` (no scale)."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - mu_d).T @ (src - mu_s) / len(src)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mu_d - R @ mu_s


def aligned_errors(est: Trajectory, gt: Trajectory, align_n: int | None = None, tol: float = 1e-6) -> np.ndarray:
    """Per-pose translational error vectors after rigid alignment.

    The alignment is fitted on the first ``align_n`` associated poses
    (all of them when None; ``align_n=0`` skips alignment) and applied to
    the whole estimate.
    """
    i, j = associate(est, gt, tol)
    if len(i) == 0:
        raise ValueError("no associated poses")
    p_est, p_gt = est.positions[i], gt.positions[j]
    n = len(i) if align_n is None else int(align_n)
    if n > len(est):
        raise ValueError(f"align_n={n} exceeds trajectory length {len(est)}")
    n = min(n, len(i))
    if n > 0:
        R, t = umeyama_rigid(p_est[:n], p_gt[:n])
        p_est = p_est @ R.T + t
    return p_est - p_gt


def ate_rmse(est: Trajectory, gt: Trajectory, align_n: int | None = None, axis=None, tol: float = 1e-6) -> float:
    """Translational RMSE after rigid alignment on the first ``align_n`` poses.

    ``axis`` restricts the error to a unit direction (a 3-vector) in the
    ground-truth frame; None uses the full 3D error.
    """
    e = aligned_errors(est, gt, align_n, tol)
    if axis is not None:
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        return float(np.sqrt(np.mean((e @ a) ** 2)))
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", e, e))))
