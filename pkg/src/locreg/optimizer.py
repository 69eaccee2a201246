"""Constrained Gauss-Newton registration.

Directions found fully localizable are left alone, partially localizable
ones get a weighted soft pull toward a value estimated by a small block-only
ICP, and non-localizable ones are frozen by equality constraints solved
through the KKT system of the Lagrangian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import Pose6D, PoseLike, as_pose_vector
from .features import CorrespondenceSet, FeatureCloud, FeatureConfig, FeatureMap, find_correspondences
from .localizability import (
    Category,
    DetectionConfig,
    LocalizabilityReport,
    detect,
    zhang_degeneracy,
)
from .residuals import EULER, evaluate

log = logging.getLogger(__name__)

ROTATION = "rotation"
TRANSLATION = "translation"

LPICP = "lpicp"
ZHANG = "zhang"
XICP = "xicp"
NONE = "none"
METHODS = (LPICP, ZHANG, XICP, NONE)


class RankDeficient(RuntimeError):
    pass


class SingularKKT(np.linalg.LinAlgError):
    pass


@dataclass
class SolverConfig:
    mu_low: float = 2.0
    mu_high: float = 5.0
    T5: float = 15.0
    max_outer_iters: int = 30
    step_tol_rot: float = 1e-4
    step_tol_trans: float = 1e-4
    local_icp_iters: int = 10
    local_cond_max: float = 1e8
    kkt_rcond: float = 1e-12
    weak_cond_max: float = 1e10
    detect_every_iter: bool = False
    jacobian: str = EULER
    zhang_threshold: float = 50.0

    def __post_init__(self):
        if self.mu_low > self.mu_high:
            raise ValueError("mu_low must not exceed mu_high")
        if self.step_tol_rot <= 0 or self.step_tol_trans <= 0:
            raise ValueError("step tolerances must be positive")


@dataclass
class SoftConstraint:
    v: np.ndarray  # lifted unit direction
    dx: np.ndarray  # lifted constraint value
    mu: float
    direction: int = -1

    @property
    def target(self) -> float:
        return float(self.v @ self.dx)


def lift(v, block: str) -> np.ndarray:
    """Embed a 3-vector into the rotation (0..2) or translation (3..5) slots."""
    out = np.zeros(6)
    if block == ROTATION:
        out[:3] = v
    elif block == TRANSLATION:
        out[3:] = v
    else:
        raise ValueError(f"unknown block {block!r}")
    return out


lift_value = lift


def _block_of(j: int) -> str:
    return ROTATION if j < 3 else TRANSLATION


def local_icp(
    corrs: CorrespondenceSet,
    pose: PoseLike,
    mode: str,
    cfg: SolverConfig | None = None,
    direction: np.ndarray | None = None,
) -> np.ndarray:
    """Gauss-Newton over one 3-DOF block with the other block held fixed.

    Correspondence models stay fixed; only the residuals are re-evaluated.
    The step is the minimum-norm solution, so a subset that constrains just
    part of the block still yields the right value along the constrained
    directions.  Raises RankDeficient when the block Hessian carries no
    information along ``direction`` (or none at all).
    """
    cfg = cfg or SolverConfig()
    if len(corrs) == 0:
        raise RankDeficient("empty correspondence subset")
    x0 = as_pose_vector(pose)
    sl = slice(0, 3) if mode == ROTATION else slice(3, 6)
    delta = np.zeros(3)
    for it in range(cfg.local_icp_iters):
        ev = evaluate(x0 + lift(delta, mode), corrs, cfg.jacobian)
        J = ev.J[:, sl]
        H = J.T @ J
        g = J.T @ ev.values
        lam, V = np.linalg.eigh(H)
        if it == 0:
            if lam[-1] <= 0:
                raise RankDeficient("block Hessian is zero")
            rng = V[:, lam > lam[-1] / cfg.local_cond_max]
            if direction is not None:
                seen = np.linalg.norm(rng.T @ direction)
                if seen < np.sqrt(0.5):
                    raise RankDeficient("subset does not constrain the requested direction")
        step = -np.linalg.lstsq(H, g, rcond=1.0 / cfg.local_cond_max)[0]
        delta = delta + step
        if np.linalg.norm(step) < 1e-12:
            break
    return delta


def assemble_constraints(
    report: LocalizabilityReport,
    corrs: CorrespondenceSet,
    pose: PoseLike,
    cfg: SolverConfig | None = None,
) -> tuple[list[SoftConstraint], np.ndarray]:
    """Soft constraints for Partial directions and the hard-constraint matrix D."""
    cfg = cfg or SolverConfig()
    soft: list[SoftConstraint] = []
    hard: list[np.ndarray] = []
    for j, cat in enumerate(report.categories):
        if cat is Category.FULL:
            continue
        v = report.basis.lifted(j)
        if cat is Category.NONE:
            hard.append(v)
            continue
        block = _block_of(j)
        v3 = v[:3] if block == ROTATION else v[3:]
        try:
            dx0 = local_icp(corrs.subset(report.moderate_idx[j]), pose, block, cfg, direction=v3)
        except RankDeficient as exc:
            log.info("direction %d: local ICP failed (%s); using a hard constraint", j, exc)
            hard.append(v)
            continue
        mu = cfg.mu_high if report.L_u[j] >= cfg.T5 else cfg.mu_low
        soft.append(SoftConstraint(v, lift_value(dx0, block), mu, j))
    D = np.array(hard, dtype=float).reshape(-1, 6)
    return soft, D


def solve_kkt(H: np.ndarray, b: np.ndarray, D: np.ndarray | None = None, rcond: float = 1e-12):
    """Solve ``[[H, D^T], [D, 0]] [dx; lam] = [b; 0]`` by pivoted QR.

    Returns ``(dx, lam)``.  Raises SingularKKT when the KKT matrix is
    numerically rank deficient.
    """
    H = np.asarray(H, dtype=float)
    b = np.asarray(b, dtype=float)
    D = np.zeros((0, 6)) if D is None else np.asarray(D, dtype=float).reshape(-1, H.shape[0])
    n, k = H.shape[0], D.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[n:, :n] = D
    K[:n, n:] = D.T
    rhs = np.concatenate([b, np.zeros(k)])
    Q, R, piv = scipy.linalg.qr(K, pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0 or diag[-1] <= rcond * diag[0]:
        raise SingularKKT(f"KKT matrix is rank deficient (|R_min|/|R_max| = {diag[-1] / max(diag[0], 1e-300):.2e})")
    y = scipy.linalg.solve_triangular(R, Q.T @ rhs)
    z = np.empty_like(y)
    z[piv] = y
    dx, lam = z[:n], z[n:]
    if k:
        # clean the last ulps off the constraint residual
        dx = dx - D.T @ np.linalg.solve(D @ D.T, D @ dx)
    return dx, lam


def gn_step(H: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unconstrained step; minimum-norm when H is singular."""
    try:
        return solve_kkt(H, b)[0]
    except SingularKKT:
        return np.linalg.lstsq(H, b, rcond=1e-12)[0]


def remap_projector(H: np.ndarray, degenerate: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(0.5 * (H + H.T))
    S = np.diag((~np.asarray(degenerate, dtype=bool)).astype(float))
    return V @ S @ V.T


def solution_remap(H: np.ndarray, dx: np.ndarray, degenerate: np.ndarray) -> np.ndarray:
    """Drop the components of ``dx`` along flagged eigenvectors of ``H``.

    ``degenerate`` is indexed like ``np.linalg.eigh`` output (ascending).
    """
    return remap_projector(H, degenerate) @ np.asarray(dx, dtype=float)


def _cover_weak_directions(H: np.ndarray, D: np.ndarray, cond_max: float) -> np.ndarray:
    """Append rows to ``D`` for directions where H stays weak inside null(D).

    The KKT matrix is solvable iff H is positive definite on the null space
    of D, so only that restriction is examined.
    """
    D = np.asarray(D, dtype=float).reshape(-1, 6)
    Z = scipy.linalg.null_space(D) if D.shape[0] else np.eye(6)
    if Z.shape[1] == 0:
        return D
    lam, U = np.linalg.eigh(Z.T @ H @ Z)
    top = max(lam[-1], 0.0)
    weak = U if top == 0 else U[:, lam < top / cond_max]
    if weak.shape[1] == 0:
        return D
    log.warning("promoting %d uncovered weak direction(s) to hard constraints", weak.shape[1])
    return np.vstack([D, (Z @ weak).T])


@dataclass
class IterationRecord:
    iteration: int
    n_corr: int
    rms: float
    cost: float
    step_rot: float
    step_trans: float


@dataclass
class RegistrationResult:
    pose: Pose6D
    x0: np.ndarray
    trace: list = field(default_factory=list)
    converged: bool = False
    report: LocalizabilityReport | None = None
    soft: list = field(default_factory=list)
    D: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))
    zhang_flags: np.ndarray | None = None
    error: str | None = None

    @property
    def x(self) -> np.ndarray:
        return self.pose.as_vector()

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def k_n(self) -> int:
        return self.D.shape[0]

    @property
    def k_p(self) -> int:
        return len(self.soft)

    @property
    def constraint_residual(self) -> float:
        if self.k_n == 0:
            return 0.0
        return float(np.max(np.abs(self.D @ (self.x - self.x0))))

    @property
    def categories(self) -> list:
        return [] if self.report is None else [c.value for c in self.report.categories]


def _soft_terms(H, b, soft, offset):
    """Add the weighted pulls toward each soft target; ``offset`` is the update already taken."""
    for s in soft:
        vv = np.outer(s.v, s.v)
        H = H + 2.0 * s.mu * vv
        b = b + 2.0 * s.mu * vv @ (s.dx - offset)
    return H, b


def register(
    features: FeatureCloud,
    fmap: FeatureMap,
    x0: PoseLike,
    method: str = LPICP,
    detection: DetectionConfig | None = None,
    solver: SolverConfig | None = None,
    feature_cfg: FeatureConfig | None = None,
) -> RegistrationResult:
    """Scan-to-map registration from the initial estimate ``x0``.

    Each iteration re-associates features, builds ``H' = 2 sum J^T J`` and
    ``b = -2 sum J^T f`` (plus soft terms), and solves the KKT system.  The
    detection, soft targets and D are computed on the first iteration and
    reused afterwards; soft targets are absolute w.r.t. ``x0``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    solver = solver or SolverConfig()
    feature_cfg = feature_cfg or FeatureConfig()
    if detection is None:
        detection = DetectionConfig.absolute() if method == XICP else DetectionConfig()
    x_init = as_pose_vector(x0).copy()
    x = x_init.copy()
    result = RegistrationResult(Pose6D.from_vector(x_init), x_init)
    soft: list[SoftConstraint] = []
    D = np.zeros((0, 6))
    base = np.zeros(6)
    P_remap = None

    for it in range(solver.max_outer_iters):
        corrs = find_correspondences(features, fmap, x, feature_cfg)
        if len(corrs) == 0:
            if it == 0:
                result.error = "NoCorrespondences"
                return result
            log.warning("lost all correspondences at iteration %d", it)
            break
        ev = evaluate(x, corrs, solver.jacobian)
        J, f = ev.J, ev.values
        JtJ = J.T @ J
        H = 2.0 * JtJ
        b = -2.0 * (J.T @ f)
        offset = x - x_init

        if method in (LPICP, XICP):
            if it == 0 or solver.detect_every_iter:
                report = detect(ev, detection)
                soft, D = assemble_constraints(report, corrs, x, solver)
                base = offset.copy()
                result.report = report
            Hs, bs = _soft_terms(H, b, soft, offset - base)
            D_used = _cover_weak_directions(Hs, D, solver.weak_cond_max)
            if D_used.shape[0] != D.shape[0]:
                D = D_used
            try:
                dx, _ = solve_kkt(Hs, bs, D, solver.kkt_rcond)
            except SingularKKT as exc:
                result.error = f"SingularKKT: {exc}"
                log.error("registration aborted: %s", exc)
                result.pose = Pose6D.from_vector(x_init)
                return result
            cost = float(f @ f + sum(s.mu * (s.v @ (offset - base) - s.target) ** 2 for s in soft))
        elif method == ZHANG:
            if P_remap is None:
                z = zhang_degeneracy(JtJ, solver.zhang_threshold)
                result.zhang_flags = z.degenerate
                P_remap = remap_projector(JtJ, z.degenerate)
            dx = P_remap @ gn_step(H, b)
            cost = float(f @ f)
        else:
            dx = gn_step(H, b)
            cost = float(f @ f)

        x = x + dx
        rec = IterationRecord(
            it, len(corrs), float(np.sqrt(np.mean(f * f))), cost, float(np.linalg.norm(dx[:3])), float(np.linalg.norm(dx[3:]))
        )
        result.trace.append(rec)
        if rec.step_rot < solver.step_tol_rot and rec.step_trans < solver.step_tol_trans:
            result.converged = True
            break

    result.pose = Pose6D.from_vector(x)
    result.soft = soft
    result.D = D
    return result
