#!/usr/bin/env python3
"""Driving down a featureless corridor with a biased odometry prior.

Walls and floor fix everything except the position along the corridor.
Every scan's initial guess is pushed 5 cm forward.  Without degeneracy
handling the solver takes whatever the near-singular Hessian gives it along
the axis; the Zhang baseline freezes the flagged direction; the
localizability-aware solver keeps the prior along the axis with a hard
constraint and still solves the other five directions freely.

Reports for each method land in ``demo_out/<method>/``.
"""

import sys

import numpy as np

from locreg.features import FeatureConfig, FeatureMap
from locreg.harness.config import ExperimentConfig, PipelineConfig
from locreg.harness.experiment import emit_reports, run_trajectory
from locreg.harness.scenes import SceneSpec, generate_scene
from locreg.harness.trajectory import straight_line

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
n_scans = 30

spec = SceneSpec(kind="corridor", sigma=0.01, seed=1)
scene = generate_scene(spec)
fmap = FeatureMap.from_cloud(scene.map, FeatureConfig())
gt = straight_line(n_scans, [0, 0, 0, -5, 0, 1.5], [0, 0, 0, 0.3, 0, 0])

print(f"corridor {spec.length:.0f} m x {spec.width:.0f} m, {len(scene.map)} map points, {n_scans} scans, +0.05 m/scan prior bias\n")
print("method   along-axis err (final)   cross-axis RMSE   failures   categories at scan 0")
for method in ("none", "zhang", "xicp", "lpicp"):
    cfg = PipelineConfig(
        scene=spec,
        experiment=ExperimentConfig(method=method, prior_bias=(0, 0, 0, 0.05, 0, 0), seed=1),
    )
    rep = run_trajectory(scene, gt, cfg, fmap=fmap)
    emit_reports(rep, f"{out}/{method}")
    err = rep.errors()
    cross = np.sqrt(np.mean(err[:, 1] ** 2 + err[:, 2] ** 2))
    cats = ",".join(rep.timeline()[0]) or "-"
    print(f"{method:7s}  {err[-1, 0]:+10.4f} m              {cross:8.4f} m      {len(rep.failures):3d}       {cats}")

print(f"\naccumulated prior bias at the last scan: {0.05 * n_scans:.2f} m")
print("the hard-constrained run should carry exactly that bias along the axis and nothing across it")
