"""Analytic synthetic scenes and LiDAR ray casting.

Each scene is a small set of analytic surfaces (rectangles, an open
cylinder, a height field).  The map cloud samples every surface on a
cell-centered lattice at the requested areal density; creases between
surfaces are sampled separately along their length at ``edge_oversample``
times the lattice's linear density, the way edge features pile up along
corners in an accumulated LiDAR map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import PointCloud, PoseLike, as_pose_vector, euler_to_rotation

KINDS = ("plane", "corridor", "tunnel", "cuberoom", "openterrain", "lshape")

# pose-vector directions by name
AXES = {
    "rx": np.eye(6)[0],
    "ry": np.eye(6)[1],
    "rz": np.eye(6)[2],
    "tx": np.eye(6)[3],
    "ty": np.eye(6)[4],
    "tz": np.eye(6)[5],
}


_COMMON = dict(length=40.0, width=4.0, height=3.0, radius=2.5, amplitude=0.3, wavelength=8.0)
_DEFAULTS = {
    "plane": {**_COMMON, "length": 20.0},
    "corridor": dict(_COMMON),
    "tunnel": dict(_COMMON),
    "cuberoom": {**_COMMON, "length": 10.0, "width": 8.0, "height": 4.0},
    "lshape": {**_COMMON, "length": 20.0},
    "openterrain": dict(_COMMON),
}


@dataclass
class SceneSpec:
    kind: str = "corridor"
    length: float | None = None
    width: float | None = None
    height: float | None = None
    radius: float | None = None
    amplitude: float | None = None
    wavelength: float | None = None
    density: float = 25.0
    sigma: float = 0.0
    seed: int = 0
    edge_oversample: int = 4

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; choose from {KINDS}")
        for key, value in _DEFAULTS[self.kind].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        if self.density <= 0:
            raise ValueError("density must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def spacing(self) -> float:
        return 1.0 / np.sqrt(self.density)


# --------------------------------------------------------------------------
# surfaces


@dataclass
class Rect:
    """Planar patch ``origin + s*u + r*v`` with ``0 <= s <= a``, ``0 <= r <= b``."""

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.u, self.v)

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        n = self.normal
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.origin - o) @ n) / denom
        t = np.where(np.isfinite(t), t, -1.0)
        hit = o + t[:, None] * d
        s = (hit - self.origin) @ self.u
        r = (hit - self.origin) @ self.v
        ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0) & (s <= self.a) & (r >= 0) & (r <= self.b)
        return np.where(ok, t, np.inf)

    def sample(self, spacing: float) -> np.ndarray:
        ns, nr = int(round(self.a / spacing)), int(round(self.b / spacing))
        s = (np.arange(ns) + 0.5) * (self.a / ns)
        r = (np.arange(nr) + 0.5) * (self.b / nr)
        S, Rr = np.meshgrid(s, r, indexing="ij")
        return self.origin + S.reshape(-1, 1) * self.u + Rr.reshape(-1, 1) * self.v


@dataclass
class Cylinder:
    """Open cylinder around the x-axis line through ``(0, cy, cz)``."""

    radius: float
    x0: float
    x1: float
    cy: float = 0.0
    cz: float = 0.0

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        oy, oz = o[1] - self.cy, o[2] - self.cz
        a = d[:, 1] ** 2 + d[:, 2] ** 2
        b = 2 * (oy * d[:, 1] + oz * d[:, 2])
        c = oy**2 + oz**2 - self.radius**2
        disc = b * b - 4 * a * c
        with np.errstate(invalid="ignore", divide="ignore"):
            sq = np.sqrt(np.maximum(disc, 0))
            t1 = (-b - sq) / (2 * a)
            t2 = (-b + sq) / (2 * a)
        best = np.full(len(d), np.inf)
        for t in (t2, t1):
            x = o[0] + t * d[:, 0]
            ok = (disc >= 0) & (a > 1e-12) & (t > 1e-9) & (x >= self.x0) & (x <= self.x1)
            best = np.where(ok & (t < best), t, best)
        return best

    def sample(self, spacing: float) -> np.ndarray:
        nx = int(round((self.x1 - self.x0) / spacing))
        nt = int(round(2 * np.pi * self.radius / spacing))
        xs = self.x0 + (np.arange(nx) + 0.5) * ((self.x1 - self.x0) / nx)
        th = (np.arange(nt) + 0.5) * (2 * np.pi / nt)
        X, T = np.meshgrid(xs, th, indexing="ij")
        X, T = X.reshape(-1), T.reshape(-1)
        return np.column_stack([X, self.cy + self.radius * np.cos(T), self.cz + self.radius * np.sin(T)])


@dataclass
class HeightField:
    """``z = amplitude * sin(2 pi x / wavelength) * cos(2 pi y / wavelength)`` on a square."""

    half: float
    amplitude: float
    wavelength: float
    march_step: float = 0.05

    def height(self, x, y):
        k = 2 * np.pi / self.wavelength
        return self.amplitude * np.sin(k * x) * np.cos(k * y)

    def intersect(self, o: np.ndarray, d: np.ndarray, t_max: float = 100.0) -> np.ndarray:
        ts = np.arange(self.march_step, t_max + self.march_step, self.march_step)
        best = np.full(len(d), np.inf)
        lo = np.zeros(len(d))
        found = np.zeros(len(d), dtype=bool)
        prev_t = np.zeros(len(d))
        prev_g = o[2] - self.height(o[0], o[1]) * np.ones(len(d))
        for t in ts:
            p = o + t * d
            g = p[:, 2] - self.height(p[:, 0], p[:, 1])
            cross = ~found & (prev_g > 0) & (g <= 0)
            lo[cross] = prev_t[cross]
            found |= cross
            prev_g = np.where(found, prev_g, g)
            prev_t = np.where(found, prev_t, t)
            if found.all():
                break
        idx = np.flatnonzero(found)
        a, b = lo[idx], lo[idx] + self.march_step
        oo, dd = o, d[idx]
        for _ in range(60):
            m = 0.5 * (a + b)
            p = oo + m[:, None] * dd
            g = p[:, 2] - self.height(p[:, 0], p[:, 1])
            above = g > 0
            a = np.where(above, m, a)
            b = np.where(above, b, m)
        t = 0.5 * (a + b)
        p = oo + t[:, None] * dd
        inside = (np.abs(p[:, 0]) <= self.half) & (np.abs(p[:, 1]) <= self.half)
        best[idx[inside]] = t[inside]
        return best

    def sample(self, spacing: float) -> np.ndarray:
        n = int(round(2 * self.half / spacing))
        g = -self.half + (np.arange(n) + 0.5) * (2 * self.half / n)
        X, Y = np.meshgrid(g, g, indexing="ij")
        X, Y = X.reshape(-1), Y.reshape(-1)
        return np.column_stack([X, Y, self.height(X, Y)])


@dataclass
class Scene:
    spec: SceneSpec
    surfaces: list
    creases: list
    map: PointCloud
    viewpoint: np.ndarray
    annotation: dict = field(default_factory=dict)

    def intersect(self, o: np.ndarray, d: np.ndarray, t_max: float = np.inf) -> np.ndarray:
        t = np.full(len(d), np.inf)
        for s in self.surfaces:
            if isinstance(s, HeightField):
                t = np.minimum(t, s.intersect(o, d, t_max if np.isfinite(t_max) else 100.0))
            else:
                t = np.minimum(t, s.intersect(o, d))
        return t


def _box_faces(x0, x1, y0, y1, z0, z1, floor=True, ceiling=True, walls=("x0", "x1", "y0", "y1")):
    ex, ey, ez = np.eye(3)
    faces = []
    if floor:
        faces.append(Rect([x0, y0, z0], ex, ey, x1 - x0, y1 - y0))
    if ceiling:
        faces.append(Rect([x0, y0, z1], ex, ey, x1 - x0, y1 - y0))
    if "y0" in walls:
        faces.append(Rect([x0, y0, z0], ex, ez, x1 - x0, z1 - z0))
    if "y1" in walls:
        faces.append(Rect([x0, y1, z0], ex, ez, x1 - x0, z1 - z0))
    if "x0" in walls:
        faces.append(Rect([x0, y0, z0], ey, ez, y1 - y0, z1 - z0))
    if "x1" in walls:
        faces.append(Rect([x1, y0, z0], ey, ez, y1 - y0, z1 - z0))
    return faces


def _sample_segment(p0, p1, spacing):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    length = np.linalg.norm(p1 - p0)
    n = max(int(round(length / spacing)), 1)
    s = (np.arange(n) + 0.5) / n
    return p0 + s[:, None] * (p1 - p0)


def _annotation(unconstrained=(), weak=()):
    expected = {}
    for name in AXES:
        if name in unconstrained:
            expected[name] = "None"
        elif name in weak:
            expected[name] = "Partial"
        else:
            expected[name] = "Full"
    return {
        "unconstrained": list(unconstrained),
        "weak": list(weak),
        "expected": expected,
        "null_vectors": [AXES[n].tolist() for n in unconstrained],
    }


def generate_scene(spec: SceneSpec) -> Scene:
    """Build the analytic surfaces, the sampled map cloud and its annotation.

    The annotation names the pose directions that carry no information at
    the scene's canonical viewpoint (sensor frame aligned with the map).
    """
    L, W, Hh = spec.length, spec.width, spec.height
    creases: list[tuple[np.ndarray, np.ndarray]] = []
    if spec.kind == "plane":
        surfaces = [Rect([-L / 2, -L / 2, 0], np.eye(3)[0], np.eye(3)[1], L, L)]
        viewpoint = np.array([0, 0, 0, 0, 0, 2.0])
        ann = _annotation(unconstrained=("tx", "ty", "rz"))
    elif spec.kind == "corridor":
        surfaces = _box_faces(-L / 2, L / 2, -W / 2, W / 2, 0, Hh, ceiling=False, walls=("y0", "y1"))
        creases = [([-L / 2, -W / 2, 0], [L / 2, -W / 2, 0]), ([-L / 2, W / 2, 0], [L / 2, W / 2, 0])]
        viewpoint = np.array([0, 0, 0, 0, 0, 1.5])
        ann = _annotation(unconstrained=("tx",))
    elif spec.kind == "tunnel":
        surfaces = [Cylinder(spec.radius, -L / 2, L / 2)]
        viewpoint = np.zeros(6)
        ann = _annotation(unconstrained=("tx", "rx"))
    elif spec.kind == "cuberoom":
        Lx, Ly, z1 = L, W, Hh
        surfaces = _box_faces(-Lx / 2, Lx / 2, -Ly / 2, Ly / 2, 0, z1)
        cx, cy = [-Lx / 2, Lx / 2], [-Ly / 2, Ly / 2]
        for z in (0, z1):
            for y in cy:
                creases.append(([cx[0], y, z], [cx[1], y, z]))
            for x in cx:
                creases.append(([x, cy[0], z], [x, cy[1], z]))
        for x in cx:
            for y in cy:
                creases.append(([x, y, 0], [x, y, z1]))
        viewpoint = np.array([0, 0, 0, 0, 0, z1 / 2])
        ann = _annotation()
    elif spec.kind == "lshape":
        half = L / 2
        ex, ey, ez = np.eye(3)
        surfaces = [
            Rect([-half, -half, 0], ex, ey, 2 * half, 2 * half),
            Rect([-half, -half, 0], ex, ez, 2 * half, Hh),
            Rect([-half, -half, 0], ey, ez, 2 * half, Hh),
        ]
        creases = [
            ([-half, -half, 0], [half, -half, 0]),
            ([-half, -half, 0], [-half, half, 0]),
            ([-half, -half, 0], [-half, -half, Hh]),
        ]
        viewpoint = np.array([0, 0, 0, -half / 2, -half / 2, 1.5])
        ann = _annotation()
    elif spec.kind == "openterrain":
        half = L / 2
        surfaces = [HeightField(half, spec.amplitude, spec.wavelength)]
        viewpoint = np.array([0, 0, 0, 0, 0, 2.0])
        ann = _annotation(weak=("tx", "ty", "rz"))
    else:  # pragma: no cover - guarded by SceneSpec
        raise ValueError(spec.kind)

    s = spec.spacing
    pts = [surf.sample(s) for surf in surfaces]
    pts += [_sample_segment(a, b, s / spec.edge_oversample) for a, b in creases]
    cloud = np.vstack(pts)
    if spec.sigma > 0:
        rng = np.random.default_rng(spec.seed)
        cloud = cloud + rng.normal(0.0, spec.sigma, cloud.shape)
    return Scene(spec, surfaces, [(np.asarray(a, float), np.asarray(b, float)) for a, b in creases], PointCloud(cloud), viewpoint, ann)


# --------------------------------------------------------------------------
# LiDAR


@dataclass
class SensorModel:
    n_rings: int = 16
    fov_low_deg: float = -30.0
    fov_high_deg: float = 30.0
    h_res_deg: float = 1.0
    max_range: float = 30.0
    min_range: float = 0.3
    range_sigma: float = 0.0

    def ray_directions(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions in the sensor frame, ring-major, plus ring ids."""
        elev = np.deg2rad(np.linspace(self.fov_low_deg, self.fov_high_deg, self.n_rings))
        n_az = int(round(360.0 / self.h_res_deg))
        az = np.deg2rad(-180.0 + np.arange(n_az) * (360.0 / n_az))
        E, A = np.meshgrid(elev, az, indexing="ij")
        d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
        ring = np.repeat(np.arange(self.n_rings), n_az)
        return d, ring


def simulate_scan(scene: Scene, sensor_pose: PoseLike, sensor: SensorModel | None = None, seed: int = 0) -> PointCloud:
    """Cast every ray of ``sensor`` from ``sensor_pose`` against the scene surfaces.

    Returned points are in the sensor frame, ring-major in azimuth order, with
    ring metadata.  Rays with no hit inside ``[min_range, max_range]`` are dropped.
    """
    sensor = sensor or SensorModel()
    x = as_pose_vector(sensor_pose)
    R = euler_to_rotation(x)
    d_s, ring = sensor.ray_directions()
    d_w = d_s @ R.T
    t = scene.intersect(x[3:], d_w, sensor.max_range + 1.0)
    ok = np.isfinite(t) & (t >= sensor.min_range) & (t <= sensor.max_range)
    t = t[ok]
    if sensor.range_sigma > 0:
        rng = np.random.default_rng(seed)
        t = t + rng.normal(0.0, sensor.range_sigma, t.shape)
    pts = d_s[ok] * t[:, None]
    return PointCloud(pts, ring[ok], meta={"column": np.flatnonzero(ok) % (len(d_s) // sensor.n_rings)})
