"""Command-line entry point.

Exit codes: 0 success, 2 the run completed but some scans failed,
3 fatal error (bad input or configuration).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from ..core import PointCloud
from ..features import EmptyMap, EmptyScan, FeatureMap, extract_features
from ..optimizer import METHODS, register
from . import config as config_mod
from .experiment import emit_reports, run_trajectory, single_scan_report
from .io import read_cloud, read_trajectory, write_cloud, write_trajectory
from .scenes import KINDS, SceneSpec, generate_scene, simulate_scan
from .trajectory import ate_rmse, straight_line

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_FATAL = 3

log = logging.getLogger("locreg")


class Fatal(Exception):
    pass


def _vector(text: str, n: int = 6, name: str = "vector") -> np.ndarray:
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise Fatal(f"{name}: cannot parse {text!r}") from None
    if len(vals) != n:
        raise Fatal(f"{name}: expected {n} numbers, got {len(vals)}")
    return np.array(vals)


def _load_config(path: str | None) -> config_mod.PipelineConfig:
    if path is None:
        return config_mod.PipelineConfig()
    try:
        return config_mod.load(path)
    except config_mod.ConfigError as exc:
        raise Fatal(str(exc)) from None


def _scene_spec(args) -> SceneSpec:
    kw = {k: getattr(args, k) for k in ("length", "width", "height", "radius", "amplitude", "wavelength") if getattr(args, k) is not None}
    try:
        return SceneSpec(kind=args.kind, density=args.density, sigma=args.sigma, seed=args.seed, **kw)
    except ValueError as exc:
        raise Fatal(str(exc)) from None


def _scene_from_file(path: str) -> SceneSpec:
    return _load_config(path).scene


def cmd_scene_gen(args) -> int:
    spec = _scene_spec(args)
    scene = generate_scene(spec)
    write_cloud(args.out, scene.map)
    if args.spec_out:
        cfg = config_mod.PipelineConfig(scene=spec)
        with open(args.spec_out, "w", newline="\n") as fh:
            fh.write(config_mod.render(cfg))
    print(f"wrote {len(scene.map)} points to {args.out}")
    print("viewpoint:", ",".join(format(v, ".17g") for v in scene.viewpoint))
    print("unconstrained at viewpoint:", ",".join(scene.annotation["unconstrained"]) or "none")
    return EXIT_OK


def cmd_scene_scan(args) -> int:
    cfg = _load_config(args.scene)
    scene = generate_scene(cfg.scene)
    pose = scene.viewpoint if args.pose is None else _vector(args.pose, name="--pose")
    sensor = dataclasses.replace(cfg.sensor, range_sigma=cfg.scene.sigma if args.noise is None else args.noise)
    scan = simulate_scan(scene, pose, sensor, seed=args.seed)
    write_cloud(args.out, scan)
    print(f"wrote {len(scan)} points to {args.out}")
    return EXIT_OK


def cmd_traj(args) -> int:
    start = _vector(args.start, name="--start")
    step = _vector(args.step, name="--step")
    if args.n < 1:
        raise Fatal("--n must be positive")
    write_trajectory(args.out, straight_line(args.n, start, step, args.dt))
    print(f"wrote {args.n} poses to {args.out}")
    return EXIT_OK


def cmd_register(args) -> int:
    cfg = _load_config(args.config)
    method = (args.method or cfg.experiment.method).lower()
    try:
        cloud = read_cloud(args.map)
        scan = read_cloud(args.scan)
    except (OSError, ValueError) as exc:
        raise Fatal(str(exc)) from None
    x0 = _vector(args.x0, name="--x0")
    try:
        fmap = FeatureMap.from_cloud(PointCloud(cloud.points), cfg.features)
        fc = extract_features(scan, cfg.features)
    except (EmptyMap, EmptyScan, ValueError) as exc:
        raise Fatal(str(exc)) from None
    detection = None if method == "xicp" and cfg.detection == type(cfg.detection)() else cfg.detection
    res = register(fc, fmap, x0, method, detection, cfg.solver, cfg.features)
    print("pose:", ",".join(format(v, ".17g") for v in res.x))
    if res.categories:
        print("categories:", ",".join(res.categories))
    if args.report:
        emit_reports(single_scan_report(res, method), args.report)
    if res.error:
        log.error("registration failed: %s", res.error)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.scene:
        cfg = dataclasses.replace(cfg, scene=_scene_from_file(args.scene))
    if args.method:
        cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, method=args.method))
    try:
        gt = read_trajectory(args.traj)
    except (OSError, ValueError) as exc:
        raise Fatal(str(exc)) from None
    scene = generate_scene(cfg.scene)
    report = run_trajectory(scene, gt, cfg)
    if args.report:
        emit_reports(report, args.report)
    ate = report.ate()
    print(f"scans: {len(report)}  failures: {len(report.failures)}  ATE RMSE: {ate if ate is None else format(ate, '.6g')}")
    return EXIT_PARTIAL if report.failures else EXIT_OK


_AXES = {"x": (1, 0, 0), "y": (0, 1, 0), "z": (0, 0, 1)}


def cmd_eval(args) -> int:
    try:
        est = read_trajectory(args.est)
        gt = read_trajectory(args.gt)
        axis = _AXES[args.axis] if args.axis else None
        value = ate_rmse(est, gt, args.align_n, axis=axis)
    except (OSError, ValueError) as exc:
        raise Fatal(str(exc)) from None
    print(json.dumps({"ate_rmse": value, "align_n": args.align_n, "axis": args.axis}))
    return EXIT_OK


def cmd_config(args) -> int:
    text = config_mod.render()
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locreg", description="Localizability-aware LiDAR registration tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    scene = sub.add_parser("scene", help="synthetic scenes").add_subparsers(dest="scene_command", required=True)
    g = scene.add_parser("gen", help="sample a scene into a map cloud")
    g.add_argument("--kind", choices=KINDS, required=True)
    for dim in ("length", "width", "height", "radius", "amplitude", "wavelength"):
        g.add_argument(f"--{dim}", type=float)
    g.add_argument("--density", type=float, default=25.0)
    g.add_argument("--sigma", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--spec-out", help="also write the scene spec as a config file")
    g.set_defaults(func=cmd_scene_gen)

    s = scene.add_parser("scan", help="ray-cast one scan from a scene spec file")
    s.add_argument("--scene", required=True, help="config file with a [scene] section")
    s.add_argument("--pose", help="rx,ry,rz,tx,ty,tz (default: canonical viewpoint)")
    s.add_argument("--noise", type=float, help="range noise sigma (default: scene sigma)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scene_scan)

    t = sub.add_parser("traj", help="write a straight-line ground-truth trajectory")
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--start", default="0,0,0,0,0,0")
    t.add_argument("--step", required=True, help="body-frame increment per pose")
    t.add_argument("--dt", type=float, default=0.1)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_traj)

    r = sub.add_parser("register", help="register one scan against a map")
    r.add_argument("--map", required=True)
    r.add_argument("--scan", required=True)
    r.add_argument("--x0", required=True, help="rx,ry,rz,tx,ty,tz")
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--config")
    r.add_argument("--report")
    r.set_defaults(func=cmd_register)

    u = sub.add_parser("run", help="run a trajectory experiment")
    u.add_argument("--scene", help="config file with a [scene] section")
    u.add_argument("--traj", required=True)
    u.add_argument("--method", choices=METHODS)
    u.add_argument("--config")
    u.add_argument("--report")
    u.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="ATE RMSE of an estimate against ground truth")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--align-n", type=int, default=50)
    e.add_argument("--axis", choices=sorted(_AXES))
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("config", help="print the default configuration file")
    c.add_argument("--out")
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_FATAL
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Fatal as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
