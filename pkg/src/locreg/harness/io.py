"""Point cloud and trajectory files.

Point clouds: ASCII XYZ (``x y z [ring]`` per line) and ASCII PLY.
Trajectories: CSV ``t,rx,ry,rz,tx,ty,tz`` at 17 significant digits.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from ..core import PointCloud
from .trajectory import Trajectory

TRAJ_HEADER = ("t", "rx", "ry", "rz", "tx", "ty", "tz")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_xyz(path: str | os.PathLike, cloud: PointCloud) -> None:
    with open(path, "w", newline="\n") as fh:
        if cloud.has_rings:
            for p, r in zip(cloud.points, cloud.ring):
                fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])} {int(r)}\n")
        else:
            for p in cloud.points:
                fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")


def read_xyz(path: str | os.PathLike) -> PointCloud:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) not in (3, 4):
                raise ValueError(f"{path}:{lineno}: expected 'x y z [ring]'")
            rows.append([float(v) for v in parts])
    if not rows:
        return PointCloud(np.zeros((0, 3)))
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: mixed 3- and 4-column lines")
    arr = np.array(rows)
    ring = arr[:, 3].astype(np.int64) if arr.shape[1] == 4 else None
    return PointCloud(arr[:, :3], ring)


def write_ply(path: str | os.PathLike, cloud: PointCloud) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if cloud.has_rings:
            fh.write("property int ring\n")
        fh.write("end_header\n")
        for k, p in enumerate(cloud.points):
            line = f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}"
            if cloud.has_rings:
                line += f" {int(cloud.ring[k])}"
            fh.write(line + "\n")


def read_ply(path: str | os.PathLike) -> PointCloud:
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n, props, fmt = 0, [], None
        in_vertex = False
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                props.append(tok[-1])
            elif tok[0] == "end_header":
                break
        if fmt != "ascii":
            raise ValueError(f"{path}: only ASCII PLY is supported")
        data = np.loadtxt(fh, ndmin=2, max_rows=n) if n else np.zeros((0, len(props)))
    cols = {name: k for k, name in enumerate(props)}
    if not {"x", "y", "z"} <= cols.keys():
        raise ValueError(f"{path}: vertex element lacks x/y/z")
    pts = data[:, [cols["x"], cols["y"], cols["z"]]] if n else np.zeros((0, 3))
    ring = data[:, cols["ring"]].astype(np.int64) if "ring" in cols and n else None
    return PointCloud(pts, ring)


XYZ_SUFFIXES = (".xyz", ".txt")


def _cloud_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        return "ply"
    if ext in XYZ_SUFFIXES:
        return "xyz"
    raise ValueError(f"{path}: unsupported point cloud format {ext!r} (use .xyz, .txt or .ply)")


def read_cloud(path: str | os.PathLike) -> PointCloud:
    return read_ply(path) if _cloud_format(path) == "ply" else read_xyz(path)


def write_cloud(path: str | os.PathLike, cloud: PointCloud) -> None:
    if _cloud_format(path) == "ply":
        write_ply(path, cloud)
    else:
        write_xyz(path, cloud)


def write_trajectory(path: str | os.PathLike, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_HEADER)
        for t, x in zip(traj.t, traj.x):
            w.writerow([_fmt(t)] + [_fmt(v) for v in x])


def read_trajectory(path: str | os.PathLike) -> Trajectory:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    if not rows:
        return Trajectory.empty()
    arr = np.array([[float(v) for v in r] for r in rows])
    if arr.shape[1] != 7:
        raise ValueError(f"{path}: expected 7 columns (t + 6 pose values)")
    return Trajectory(arr[:, 0], arr[:, 1:])


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
