"""Trajectory experiments: simulate, register scan by scan, collect reports."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import compose, wrap_angles
from ..features import EmptyMap, EmptyScan, FeatureMap, extract_features
from ..localizability import DIRECTIONS, DetectionConfig, LocalizabilityReport
from ..optimizer import METHODS, XICP, RegistrationResult, register
from .config import PipelineConfig
from .io import write_trajectory
from .scenes import Scene, simulate_scan
from .trajectory import Trajectory, aligned_errors, ate_rmse, relative_motion

log = logging.getLogger(__name__)

ODOMETRY = "odometry"
CONSTANT_VELOCITY = "constant_velocity"


@dataclass
class ScanRecord:
    index: int
    t: float
    gt: np.ndarray | None  # None when no ground truth is known
    x0: np.ndarray
    est: np.ndarray
    injected: np.ndarray  # error added to the prediction for this scan
    status: str = "ok"
    converged: bool = False
    iterations: int = 0
    n_corr: int = 0
    k_n: int = 0
    k_p: int = 0
    constraint_residual: float = 0.0
    report: LocalizabilityReport | None = None
    zhang_flags: np.ndarray | None = None
    seconds: float = 0.0  # wall time; kept out of emitted files

    @property
    def categories(self) -> list[str]:
        return [] if self.report is None else [c.value for c in self.report.categories]


@dataclass
class ExperimentReport:
    method: str
    scans: list = field(default_factory=list)
    align_n: int = 50

    def __len__(self) -> int:
        return len(self.scans)

    @property
    def est(self) -> Trajectory:
        if not self.scans:
            return Trajectory.empty()
        return Trajectory([s.t for s in self.scans], [s.est for s in self.scans])

    @property
    def has_gt(self) -> bool:
        return bool(self.scans) and all(s.gt is not None for s in self.scans)

    @property
    def gt(self) -> Trajectory:
        if not self.has_gt:
            return Trajectory.empty()
        return Trajectory([s.t for s in self.scans], [s.gt for s in self.scans])

    @property
    def failures(self) -> list[int]:
        return [s.index for s in self.scans if s.status != "ok"]

    def ate(self, align_n: int | None = None) -> float | None:
        if not self.has_gt:
            return None
        n = self.align_n if align_n is None else align_n
        return ate_rmse(self.est, self.gt, min(n, len(self.scans)))

    def errors(self) -> np.ndarray:
        """Unaligned per-scan translation errors (map frame)."""
        if not self.has_gt:
            return np.zeros((0, 3))
        return aligned_errors(self.est, self.gt, 0)

    def axis_rmse(self) -> np.ndarray:
        """Unaligned RMSE along x, y and z."""
        e = self.errors()
        return np.sqrt(np.mean(e * e, axis=0)) if len(e) else np.full(3, np.nan)

    def accumulated_injection(self) -> np.ndarray:
        return np.cumsum([s.injected for s in self.scans], axis=0) if self.scans else np.zeros((0, 6))

    def timeline(self) -> list[list[str]]:
        return [s.categories for s in self.scans]


def _detection_for(method: str, cfg: DetectionConfig) -> DetectionConfig | None:
    # untouched defaults let register pick the metric-specific thresholds
    if method == XICP and cfg == DetectionConfig():
        return None
    return cfg


def _fill(rec: ScanRecord, res: RegistrationResult) -> None:
    rec.est = res.x.copy()
    rec.status = res.error or "ok"
    rec.converged = res.converged
    rec.iterations = res.iterations
    rec.n_corr = res.trace[0].n_corr if res.trace else 0
    rec.k_n, rec.k_p = res.k_n, res.k_p
    rec.constraint_residual = res.constraint_residual
    rec.report = res.report
    rec.zhang_flags = res.zhang_flags


def single_scan_report(res: RegistrationResult, method: str, gt=None, t: float = 0.0) -> ExperimentReport:
    """Wrap one registration result so it can go through :func:`emit_reports`."""
    x0 = np.asarray(res.x0, dtype=float)
    rec = ScanRecord(0, t, None if gt is None else np.asarray(gt, dtype=float), x0, x0.copy(), np.zeros(6))
    _fill(rec, res)
    return ExperimentReport(method, [rec], align_n=1)


def run_trajectory(
    scene: Scene,
    gt: Trajectory,
    cfg: PipelineConfig | None = None,
    method: str | None = None,
    fmap: FeatureMap | None = None,
) -> ExperimentReport:
    """Register one simulated scan per ground-truth pose.

    Scan ``k`` starts from ``x0_k = est_{k-1} o inc_k + e_k``, where ``inc_k``
    is the predicted body-frame increment (true increment for the odometry
    model, last estimated increment for the constant-velocity model) and
    ``e_k`` is the configured bias plus Gaussian noise on the pose vector.
    Scan 0 uses the true pose in place of the composed prediction.  Failures
    are recorded per scan and the prediction is carried forward.
    """
    cfg = cfg or PipelineConfig()
    exp = cfg.experiment
    method = (method or exp.method).lower()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if exp.prior_model not in (ODOMETRY, CONSTANT_VELOCITY):
        raise ValueError(f"unknown prior model {exp.prior_model!r}")
    if fmap is None:
        fmap = FeatureMap.from_cloud(scene.map, cfg.features)
    noise = scene.spec.sigma if exp.scan_noise < 0 else exp.scan_noise
    sensor = dataclasses.replace(cfg.sensor, range_sigma=noise)
    detection = _detection_for(method, cfg.detection)
    rng = np.random.default_rng(exp.seed)
    bias = np.asarray(exp.prior_bias, dtype=float)
    sigma = np.asarray(exp.prior_sigma, dtype=float)

    report = ExperimentReport(method, align_n=exp.align_n)
    for k in range(len(gt)):
        injected = bias + sigma * rng.standard_normal(6)
        if k == 0:
            pred = gt.x[0]
        else:
            prev = report.scans[-1].est
            if exp.prior_model == ODOMETRY:
                inc = relative_motion(gt.x[k - 1], gt.x[k])
            elif k >= 2:
                inc = relative_motion(report.scans[-2].est, prev)
            else:
                inc = np.zeros(6)
            pred = compose(prev, inc).as_vector()
        x0 = pred + injected
        rec = ScanRecord(k, float(gt.t[k]), gt.x[k].copy(), x0, x0.copy(), injected)
        tic = time.perf_counter()
        try:
            scan = simulate_scan(scene, gt.x[k], sensor, seed=exp.seed * 100003 + k)
            fc = extract_features(scan, cfg.features)
            res = register(fc, fmap, x0, method, detection, cfg.solver, cfg.features)
        except (EmptyScan, EmptyMap, ValueError, np.linalg.LinAlgError) as exc:
            rec.status = f"{type(exc).__name__}: {exc}"
            log.warning("scan %d failed: %s", k, rec.status)
        else:
            _fill(rec, res)
        rec.seconds = time.perf_counter() - tic
        report.scans.append(rec)
    return report


# --------------------------------------------------------------------------
# report files

TRAJECTORY_FILE = "trajectory.csv"
RECORDS_FILE = "localizability.jsonl"
TIMELINE_FILE = "categories.csv"
CONTRIB_FILE = "contributions.csv"
SUMMARY_FILE = "summary.json"


def _g(v: float) -> str:
    return format(float(v), ".17g")


def _record(s: ScanRecord, method: str) -> dict:
    rec = {
        "scan": s.index,
        "t": float(s.t),
        "method": method,
        "status": s.status,
        "converged": bool(s.converged),
        "iterations": int(s.iterations),
        "n_corr": int(s.n_corr),
        "k_n": int(s.k_n),
        "k_p": int(s.k_p),
        "constraint_residual": float(s.constraint_residual),
        "x0": [float(v) for v in s.x0],
        "est": [float(v) for v in s.est],
        "gt": None if s.gt is None else [float(v) for v in s.gt],
    }
    if s.zhang_flags is not None:
        rec["zhang_degenerate"] = [bool(f) for f in s.zhang_flags]
    if s.report is not None:
        rec.update(s.report.to_record())
    return rec


def emit_reports(report: ExperimentReport, out_dir: str | os.PathLike) -> dict[str, str]:
    """Write the trajectory, per-scan records, category timeline, contribution
    table and summary into ``out_dir``.  Output is byte-deterministic for a
    deterministic report (wall-clock timings are not written)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        name: os.path.join(out_dir, name)
        for name in (TRAJECTORY_FILE, RECORDS_FILE, TIMELINE_FILE, CONTRIB_FILE, SUMMARY_FILE)
    }
    est = report.est
    # angles are optimized unwrapped; wrap only for the written table
    write_trajectory(paths[TRAJECTORY_FILE], Trajectory(est.t, np.array([wrap_angles(x) for x in est.x]).reshape(-1, 6)))

    with open(paths[RECORDS_FILE], "w", newline="\n") as fh:
        for s in report.scans:
            fh.write(json.dumps(_record(s, report.method), separators=(",", ":")) + "\n")

    with open(paths[TIMELINE_FILE], "w", newline="\n") as fh:
        fh.write("scan,t," + ",".join(DIRECTIONS) + "\n")
        for s in report.scans:
            cats = s.categories or ["-"] * 6
            fh.write(f"{s.index},{_g(s.t)}," + ",".join(cats) + "\n")

    with open(paths[CONTRIB_FILE], "w", newline="\n") as fh:
        fh.write("scan,direction,eigenvalue,L_f,L_u,n_moderate,n_high,category\n")
        for s in report.scans:
            r = s.report
            if r is None:
                continue
            lam = r.basis.eigenvalues
            for j, name in enumerate(DIRECTIONS):
                fh.write(
                    f"{s.index},{name},{_g(lam[j])},{_g(r.L_f[j])},{_g(r.L_u[j])},"
                    f"{len(r.moderate_idx[j])},{len(r.high_idx[j])},{r.categories[j].value}\n"
                )

    n = len(report)
    summary = {
        "method": report.method,
        "n_scans": n,
        "n_failures": len(report.failures),
        "failures": report.failures,
        "align_n": int(min(report.align_n, n)),
        "ate_rmse": report.ate() if report.has_gt else None,
        "unaligned_axis_rmse": [float(v) for v in report.axis_rmse()] if report.has_gt else None,
        "final_error": [float(v) for v in report.errors()[-1]] if report.has_gt else None,
    }
    with open(paths[SUMMARY_FILE], "w", newline="\n") as fh:
        fh.write(json.dumps(summary, indent=2) + "\n")
    return paths
