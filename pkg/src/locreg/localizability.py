"""Per-correspondence localizability analysis and direction categories.

Rotation and translation Hessian blocks are eigendecomposed separately.
Every correspondence's Jacobian is projected onto the six eigenvectors; the
squared projections form an N x 6 contribution matrix whose column sums are
the block eigenvalues.  Contributions are thresholded into moderate (``h_f``)
and high (``h_u``) sets, summed per direction, and the sums decide whether a
direction is fully, partially or not localizable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .residuals import ResidualBatch, normalize_rotation_jacobian

DIRECTIONS = ("r1", "r2", "r3", "t1", "t2", "t3")


class EmptyConstraintSet(ValueError):
    pass


class Category(str, Enum):
    NONE = "None"
    PARTIAL = "Partial"
    FULL = "Full"

    @property
    def rank(self) -> int:
        return {"None": 0, "Partial": 1, "Full": 2}[self.value]


SQUARED = "squared"
ABSOLUTE = "absolute"


@dataclass
class DetectionConfig:
    h_f: float = 0.03
    h_u: float = 0.4998
    T1: float = 50.0
    T2: float = 30.0
    T3: float = 15.0
    T4: float = 9.0
    metric: str = SQUARED
    normalize_rotation: bool = True

    def __post_init__(self):
        if not 0 <= self.h_f <= self.h_u:
            raise ValueError("need 0 <= h_f <= h_u")
        if self.T3 > self.T1 or self.T4 > self.T2:
            raise ValueError("need T3 <= T1 and T4 <= T2")
        if self.metric not in (SQUARED, ABSOLUTE):
            raise ValueError(f"unknown metric {self.metric!r}")

    @classmethod
    def absolute(cls) -> "DetectionConfig":
        """Defaults for the absolute-projection metric.

        Contribution thresholds are the square roots of the squared-metric
        ones so the same correspondences pass; the sum thresholds follow the
        90/50/35 values used with that metric, T4 scaled like T3.
        """
        return cls(h_f=0.03**0.5, h_u=0.4998**0.5, T1=90.0, T2=50.0, T3=35.0, T4=21.0, metric=ABSOLUTE)


@dataclass
class EigenBasis:
    """Eigenpairs of both 3x3 blocks, eigenvalues descending, vectors as columns."""

    lam_r: np.ndarray
    V_r: np.ndarray
    lam_t: np.ndarray
    V_t: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.concatenate([self.lam_r, self.lam_t])

    def lifted(self, j: int) -> np.ndarray:
        """Direction ``j`` (0..5) as a 6-vector."""
        v = np.zeros(6)
        if j < 3:
            v[:3] = self.V_r[:, j]
        else:
            v[3:] = self.V_t[:, j - 3]
        return v


@dataclass
class LocalizabilityReport:
    basis: EigenBasis
    F: np.ndarray
    L_f: np.ndarray
    L_u: np.ndarray
    categories: list
    moderate_idx: list
    high_idx: list
    config: DetectionConfig
    coupling_norm: float = 0.0

    @property
    def none_dirs(self) -> list[int]:
        return [j for j, c in enumerate(self.categories) if c is Category.NONE]

    @property
    def partial_dirs(self) -> list[int]:
        return [j for j, c in enumerate(self.categories) if c is Category.PARTIAL]

    def to_record(self, **extra) -> dict:
        """Plain-JSON record with a fixed key order."""
        rec = dict(extra)
        rec["eigenvalues_r"] = [float(v) for v in self.basis.lam_r]
        rec["eigenvalues_t"] = [float(v) for v in self.basis.lam_t]
        rec["eigenvectors_r"] = self.basis.V_r.T.tolist()
        rec["eigenvectors_t"] = self.basis.V_t.T.tolist()
        rec["L_f"] = [float(v) for v in self.L_f]
        rec["L_u"] = [float(v) for v in self.L_u]
        rec["categories"] = [c.value for c in self.categories]
        rec["n_moderate"] = [int(len(i)) for i in self.moderate_idx]
        rec["n_high"] = [int(len(i)) for i in self.high_idx]
        rec["coupling_norm"] = float(self.coupling_norm)
        rec["thresholds"] = asdict(self.config)
        return rec

    def to_json(self, **extra) -> str:
        return json.dumps(self.to_record(**extra), separators=(",", ":"))


def build_hessian_blocks(evals: ResidualBatch) -> tuple[np.ndarray, np.ndarray]:
    """``H_r = J_r^T J_r`` and ``H_t = J_t^T J_t`` for the given rows."""
    if len(evals) == 0:
        raise EmptyConstraintSet("no correspondences to analyse")
    return evals.J_r.T @ evals.J_r, evals.J_t.T @ evals.J_t


def _canonical_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so that the largest-magnitude entry is positive."""
    V = V.copy()
    pick = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[pick, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def eigendecompose(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition, eigenvalues descending, signs canonical."""
    H = np.asarray(H, dtype=float)
    lam, V = np.linalg.eigh(0.5 * (H + H.T))
    lam, V = lam[::-1], V[:, ::-1]
    return lam, _canonical_signs(V)


def eigen_basis(evals: ResidualBatch) -> EigenBasis:
    H_r, H_t = build_hessian_blocks(evals)
    lr, Vr = eigendecompose(H_r)
    lt, Vt = eigendecompose(H_t)
    return EigenBasis(lr, Vr, lt, Vt)


def contribution_matrix(evals: ResidualBatch, basis: EigenBasis, metric: str = SQUARED) -> np.ndarray:
    """N x 6 projections of each Jacobian onto (v_r1..v_r3, v_t1..v_t3)."""
    proj = np.hstack([evals.J_r @ basis.V_r, evals.J_t @ basis.V_t])
    if metric == SQUARED:
        return proj * proj
    if metric == ABSOLUTE:
        return np.abs(proj)
    raise ValueError(f"unknown metric {metric!r}")


def contribution_vectors(J_r, J_t, basis: EigenBasis, metric: str = SQUARED) -> np.ndarray:
    """Single-correspondence 6-vector ``(F_r, F_t)``."""
    proj = np.concatenate([np.asarray(J_r, dtype=float) @ basis.V_r, np.asarray(J_t, dtype=float) @ basis.V_t])
    return proj * proj if metric == SQUARED else np.abs(proj)


def filter_and_aggregate(F: np.ndarray, cfg: DetectionConfig):
    """Zero contributions below ``h_f`` / ``h_u`` and sum the columns.

    Returns ``(F_f, F_u, L_f, L_u, moderate_idx, high_idx)``.  Sums run in
    row order so the result does not depend on summation strategy.
    """
    F = np.asarray(F, dtype=float).reshape(-1, 6)
    F_f = np.where(F >= cfg.h_f, F, 0.0)
    F_u = np.where(F >= cfg.h_u, F, 0.0)
    L_f = np.add.reduce(F_f, axis=0) if len(F) else np.zeros(6)
    L_u = np.add.reduce(F_u, axis=0) if len(F) else np.zeros(6)
    moderate = [np.flatnonzero(F_f[:, j] > 0) for j in range(6)]
    high = [np.flatnonzero(F_u[:, j] > 0) for j in range(6)]
    return F_f, F_u, L_f, L_u, moderate, high


def categorize_one(L_f: float, L_u: float, cfg: DetectionConfig) -> Category:
    if L_f >= cfg.T1 or L_u >= cfg.T2:
        return Category.FULL
    if L_f >= cfg.T3 and L_u >= cfg.T4:
        return Category.PARTIAL
    return Category.NONE


def categorize(L_f, L_u, cfg: DetectionConfig) -> list[Category]:
    return [categorize_one(float(a), float(b), cfg) for a, b in zip(L_f, L_u)]


def detect(evals: ResidualBatch, cfg: DetectionConfig | None = None) -> LocalizabilityReport:
    """Full detection pass on one batch of residual Jacobians.

    Rotation Jacobians are normalized first (when enabled) so the Hessian
    blocks and the contributions share one scale.
    """
    cfg = cfg or DetectionConfig()
    if len(evals) == 0:
        raise EmptyConstraintSet("no correspondences to analyse")
    ev = evals.normalized() if cfg.normalize_rotation else evals
    basis = eigen_basis(ev)
    F = contribution_matrix(ev, basis, cfg.metric)
    _, _, L_f, L_u, moderate, high = filter_and_aggregate(F, cfg)
    coupling = float(np.linalg.norm(ev.J_r.T @ ev.J_t))
    return LocalizabilityReport(basis, F, L_f, L_u, categorize(L_f, L_u, cfg), moderate, high, cfg, coupling)


@dataclass
class ZhangResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, eigenvalues ascending
    degenerate: np.ndarray


def full_hessian(evals: ResidualBatch) -> np.ndarray:
    J = evals.J
    return J.T @ J


def zhang_degeneracy(H: np.ndarray, threshold: float = 50.0) -> ZhangResult:
    """Flag eigen-directions of the 6x6 Hessian whose eigenvalue is below ``threshold``."""
    H = np.asarray(H, dtype=float)
    lam, V = np.linalg.eigh(0.5 * (H + H.T))
    return ZhangResult(lam, _canonical_signs(V), lam < threshold)
