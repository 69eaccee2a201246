"""Feature extraction, spatial indexing and scan-to-map correspondences."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.spatial import cKDTree

from .core import PointCloud, PoseLike, transform_points

log = logging.getLogger(__name__)

EDGE = "edge"
PLANAR = "planar"


class EmptyScan(ValueError):
    pass


class EmptyMap(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


@dataclass
class FeatureConfig:
    # ring (LOAM-style) mode
    curvature_window: int = 5
    edge_thresh: float = 0.02
    planar_thresh: float = 0.005
    n_sectors: int = 6
    max_edge_per_sector: int = 20
    max_planar_per_sector: int = 200
    gap_ratio: float = 0.05  # also rejects grazing-incidence runs at 1 deg steps
    refine_edges: bool = True
    # unorganized mode
    unorganized: bool = True
    unorganized_k: int = 10
    edge_variation: float = 0.057
    edge_linearity: float = 0.97
    planar_variation: float = 0.01
    # expected half-width of the edge-classified band around a sampled crease
    edge_band: float = 0.2
    # association
    k_line: int = 5
    line_ratio: float = 3.0
    k_plane: int = 5
    plane_tol: float = 0.2
    # neighbors whose own normal deviates from the fit (|cos| below this) reject it
    normal_consistency: float = 0.9
    max_corr_dist: float = 1.0


@dataclass
class FeatureCloud:
    edge_points: np.ndarray
    planar_points: np.ndarray
    edge_idx: np.ndarray | None = None
    planar_idx: np.ndarray | None = None

    def __post_init__(self):
        self.edge_points = np.asarray(self.edge_points, dtype=float).reshape(-1, 3)
        self.planar_points = np.asarray(self.planar_points, dtype=float).reshape(-1, 3)

    @property
    def n_edge(self) -> int:
        return len(self.edge_points)

    @property
    def n_planar(self) -> int:
        return len(self.planar_points)


@dataclass(frozen=True)
class LineModel:
    anchor: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True)
class PlaneModel:
    anchor: np.ndarray
    normal: np.ndarray


class Degenerate(Exception):
    """Raised by the scalar fitters when a neighborhood fails validation."""


# --------------------------------------------------------------------------
# extraction


def ring_curvature(points: np.ndarray, window: int = 5, gap_ratio: float = 0.1) -> np.ndarray:
    """LOAM curvature for one ring in scan order; NaN where undefined.

    ``c_i = |sum_j (p_j - p_i)| / (2h * |p_i|)`` over ``h`` neighbors on each
    side, ``h = min(window, i, m - 1 - i)``: near the ring ends the window
    shrinks symmetrically, and the two end points get no value.  Windows
    containing a step longer than ``gap_ratio * |p_i|`` are invalid.
    """
    pts = np.asarray(points, dtype=float)
    m = len(pts)
    c = np.full(m, np.nan)
    if m < 3 or window < 1:
        return c
    csum = np.vstack([np.zeros(3), np.cumsum(pts, axis=0)])
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    i = np.arange(m)
    half = np.minimum(window, np.minimum(i, m - 1 - i))
    for h in np.unique(half[half > 0]):
        centers = i[half == h]
        total = csum[centers + h + 1] - csum[centers - h]
        diff = total - (2 * h + 1) * pts[centers]
        rng = np.linalg.norm(pts[centers], axis=1)
        max_step = sliding_window_view(steps, 2 * h).max(axis=1)[centers - h]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.linalg.norm(diff, axis=1) / (2 * h * rng)
        ok = (max_step < gap_ratio * rng) & (rng > 0)
        c[centers[ok]] = val[ok]
    return c


def _fit_ring_line(pts: np.ndarray):
    c = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c)
    return c, vt[0], s

def refine_corner(ring_pts: np.ndarray, i: int, window: int = 5, max_shift: float | None = None):
    """Sub-sample crease location for an edge pick at ring index ``i``.

    Lines are fitted to the ring points on each side (skipping ``i`` and its
    direct neighbors, one of which may straddle the crease) and the midpoint
    of their closest approach is returned.  Returns None when either side is
    not straight, the lines are near-parallel, or the point would move more
    than ``max_shift`` (default: twice the local sample spacing).
    """
    lo, hi = i - window, i + window + 1
    if lo < 0 or hi > len(ring_pts) or window < 3:
        return None
    left, right = ring_pts[lo : i - 1], ring_pts[i + 2 : hi]
    a, u, su = _fit_ring_line(left)
    b, v, sv = _fit_ring_line(right)
    if su[1] > 0.05 * su[0] or sv[1] > 0.05 * sv[0]:
        return None
    uv = u @ v
    if 1.0 - abs(uv) < 0.02:
        return None
    w0 = a - b
    den = 1.0 - uv * uv
    s_ = (uv * (v @ w0) - (u @ w0)) / den
    t_ = ((v @ w0) - uv * (u @ w0)) / den
    pa, pb = a + s_ * u, b + t_ * v
    if np.linalg.norm(pa - pb) > 0.1 * np.linalg.norm(ring_pts[i + 1] - ring_pts[i - 1]):
        return None
    x = 0.5 * (pa + pb)
    if max_shift is None:
        max_shift = np.linalg.norm(ring_pts[i + 1] - ring_pts[i - 1])
    if np.linalg.norm(x - ring_pts[i]) > max_shift:
        return None
    return x


def _extract_ring(scan: PointCloud, cfg: FeatureConfig):
    edge_sel, planar_sel = [], []
    refined = {}
    w = cfg.curvature_window
    for r in np.unique(scan.ring):
        idx = np.flatnonzero(scan.ring == r)
        if len(idx) < 3:
            continue
        c = ring_curvature(scan.points[idx], w, cfg.gap_ratio)
        valid = np.flatnonzero(np.isfinite(c))
        if len(valid) == 0:
            continue
        picked = np.zeros(len(idx), dtype=bool)
        # edges must peak within their own window, so points beside a crease are skipped
        padded = np.pad(np.nan_to_num(c, nan=-np.inf), w, constant_values=-np.inf)
        peak = c >= sliding_window_view(padded, 2 * w + 1).max(axis=1)
        for sector in np.array_split(valid, cfg.n_sectors):
            if len(sector) == 0:
                continue
            order = sector[np.argsort(-c[sector], kind="stable")]
            n_edge = 0
            for i in order:
                if c[i] <= cfg.edge_thresh or n_edge >= cfg.max_edge_per_sector:
                    break
                if picked[i] or not peak[i]:
                    continue
                edge_sel.append(idx[i])
                if cfg.refine_edges:
                    x = refine_corner(scan.points[idx], i, w)
                    if x is not None:
                        refined[idx[i]] = x
                n_edge += 1
                # suppress the neighborhood so edges spread along the ring
                picked[max(0, i - w) : i + w + 1] = True
            flat = sector[np.argsort(c[sector], kind="stable")]
            flat = flat[(c[flat] < cfg.planar_thresh) & ~picked[flat]]
            planar_sel.extend(idx[flat[: cfg.max_planar_per_sector]])
    return np.sort(np.array(edge_sel, dtype=np.int64)), np.sort(np.array(planar_sel, dtype=np.int64)), refined


def neighborhood_eigenvalues(points: np.ndarray, k: int) -> np.ndarray:
    """Descending covariance eigenvalues of each point's k-NN neighborhood."""
    tree = cKDTree(points)
    k = min(k, len(points))
    _, nn = tree.query(points, k=k)
    nbrs = points[nn.reshape(len(points), -1)]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    return np.linalg.eigvalsh(cov)[:, ::-1]


def _extract_unorganized(cloud: PointCloud, cfg: FeatureConfig):
    lam = neighborhood_eigenvalues(cloud.points, cfg.unorganized_k)
    total = lam.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        variation = np.where(total > 0, lam[:, 2] / total, 0.0)
        linearity = np.where(lam[:, 0] > 0, (lam[:, 0] - lam[:, 1]) / lam[:, 0], 0.0)
    edge = (variation >= cfg.edge_variation) | (linearity >= cfg.edge_linearity)
    planar = ~edge & (variation <= cfg.planar_variation)
    return np.flatnonzero(edge), np.flatnonzero(planar)


def extract_features(scan: PointCloud, cfg: FeatureConfig | None = None) -> FeatureCloud:
    """Split a cloud into edge and planar points.

    Ring-organized clouds use the LOAM curvature along each ring; clouds
    without ring metadata fall back to neighborhood covariance statistics
    when ``cfg.unorganized`` is set.
    """
    cfg = cfg or FeatureConfig()
    if len(scan) == 0:
        raise EmptyScan("scan has no points")
    if scan.has_rings:
        e, p, refined = _extract_ring(scan, cfg)
        edge_pts = scan.points[e].copy()
        for r, k in enumerate(e):
            if k in refined:
                edge_pts[r] = refined[k]
        return FeatureCloud(edge_pts, scan.points[p], e, p)
    elif cfg.unorganized:
        e, p = _extract_unorganized(scan, cfg)
    else:
        raise ValueError("scan has no ring metadata and unorganized mode is disabled")
    return FeatureCloud(scan.points[e], scan.points[p], e, p)


# --------------------------------------------------------------------------
# spatial index


class SpatialIndex:
    """Immutable k-NN index; equal distances are broken by lower point index."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyMap("cannot index an empty map")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray, k: int, pad: int = 1) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        n = len(self.points)
        if k > n:
            raise TooFewPoints(f"k={k} exceeds map size {n}")
        if len(q) == 0:
            return np.zeros((0, k)), np.zeros((0, k), dtype=np.int64)
        kk = min(k + pad, n)
        dist, idx = self._tree.query(q, k=kk)
        dist = dist.reshape(len(q), kk)
        idx = idx.reshape(len(q), kk)
        # the tree returns rows sorted by distance; only rows with equal
        # distances need reordering by index
        tied = np.flatnonzero((np.diff(dist, axis=1) == 0).any(axis=1))
        if len(tied):
            order = np.lexsort((idx[tied], dist[tied]), axis=1)
            dist[tied] = np.take_along_axis(dist[tied], order, axis=1)
            idx[tied] = np.take_along_axis(idx[tied], order, axis=1)
        if kk < n:
            # a tie run reaching the padded boundary may hide lower-index points
            spill = np.flatnonzero(dist[:, kk - 1] == dist[:, k - 1])
            for r in spill:
                cand = np.array(self._tree.query_ball_point(q[r], dist[r, k - 1] * (1 + 1e-12) + 1e-300))
                d = np.linalg.norm(self.points[cand] - q[r], axis=1)
                o = np.lexsort((cand, d))[:k]
                dist[r, :k], idx[r, :k] = d[o], cand[o]
        return dist[:, :k], idx[:, :k]


def build_index(cloud: PointCloud | np.ndarray) -> SpatialIndex:
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    return SpatialIndex(pts)


def point_normals(points: np.ndarray, k: int) -> np.ndarray:
    """Unit normal of each point's k-NN neighborhood (smallest covariance axis)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    k = min(k, len(pts))
    if k < 3:
        return np.zeros_like(pts)
    _, nn = cKDTree(pts).query(pts, k=k)
    _, _, vec = _batch_cov(pts[nn])
    return vec[..., :, 0]


@dataclass
class FeatureMap:
    """Map-side edge and planar indices used for line/plane association.

    Planar points carry the normal of their own neighborhood so that plane
    fits straddling two surfaces can be rejected.
    """

    edge: SpatialIndex | None
    planar: SpatialIndex | None
    n_points: int = 0
    planar_normals: np.ndarray | None = None

    @classmethod
    def from_cloud(cls, cloud: PointCloud, cfg: FeatureConfig | None = None) -> "FeatureMap":
        cfg = cfg or FeatureConfig()
        if len(cloud) == 0:
            raise EmptyMap("cannot index an empty map")
        fc = extract_features(PointCloud(cloud.points), cfg)
        normals = None
        if fc.n_planar and fc.planar_idx is not None:
            # normals from the full cloud: planar points have single-surface neighborhoods there
            normals = point_normals(cloud.points, cfg.unorganized_k)[fc.planar_idx]
        return cls.from_features(fc, len(cloud), cfg.unorganized_k, normals)

    @classmethod
    def from_features(
        cls, fc: FeatureCloud, n_points: int = 0, normal_k: int = 10, normals: np.ndarray | None = None
    ) -> "FeatureMap":
        edge = SpatialIndex(fc.edge_points) if fc.n_edge else None
        planar = SpatialIndex(fc.planar_points) if fc.n_planar else None
        if edge is None and planar is None:
            raise EmptyMap("map has no usable features")
        if normals is None and planar is not None:
            normals = point_normals(fc.planar_points, normal_k)
        return cls(edge, planar, n_points, normals)


# --------------------------------------------------------------------------
# line / plane fitting


def _batch_cov(neighbors: np.ndarray):
    nb = np.asarray(neighbors, dtype=float)
    centroid = nb.mean(axis=-2)
    c = nb - centroid[..., None, :]
    cov = np.einsum("...ki,...kj->...ij", c, c) / nb.shape[-2]
    lam, vec = np.linalg.eigh(cov)
    return centroid, lam, vec


def fit_lines(neighbors: np.ndarray, line_ratio: float = 3.0):
    """Batched line fit over an (M, k, 3) array.

    Returns (anchors, directions, ok).  A fit is accepted when the largest
    covariance eigenvalue is at least ``line_ratio`` times the middle one.
    """
    centroid, lam, vec = _batch_cov(neighbors)
    direction = vec[..., :, 2]
    direction = direction / np.linalg.norm(direction, axis=-1, keepdims=True)
    ok = (lam[..., 2] > 0) & (lam[..., 2] >= line_ratio * lam[..., 1])
    return centroid, direction, ok


def fit_planes(neighbors: np.ndarray, plane_tol: float = 0.2):
    centroid, lam, vec = _batch_cov(neighbors)
    normal = vec[..., :, 0]
    normal = normal / np.linalg.norm(normal, axis=-1, keepdims=True)
    off = np.abs(np.einsum("...ki,...i->...k", neighbors - centroid[..., None, :], normal))
    # exactly collinear neighborhoods leave the normal undetermined
    ok = (off.max(axis=-1) <= plane_tol) & (lam[..., 1] > 1e-12 * np.maximum(lam[..., 2], 1e-300))
    return centroid, normal, ok


def fit_line(neighbors: Sequence[Sequence[float]], cfg: FeatureConfig | None = None) -> LineModel:
    cfg = cfg or FeatureConfig()
    nb = np.asarray(neighbors, dtype=float).reshape(-1, 3)
    if len(nb) < cfg.k_line:
        raise ValueError(f"need at least {cfg.k_line} points for a line fit")
    a, d, ok = fit_lines(nb[None], cfg.line_ratio)
    if not ok[0]:
        raise Degenerate("neighborhood is not line-like")
    return LineModel(a[0], d[0])


def fit_plane(neighbors: Sequence[Sequence[float]], cfg: FeatureConfig | None = None) -> PlaneModel:
    cfg = cfg or FeatureConfig()
    nb = np.asarray(neighbors, dtype=float).reshape(-1, 3)
    if len(nb) < cfg.k_plane:
        raise ValueError(f"need at least {cfg.k_plane} points for a plane fit")
    a, n, ok = fit_planes(nb[None], cfg.plane_tol)
    if not ok[0]:
        raise Degenerate("neighborhood is not planar within tolerance")
    return PlaneModel(a[0], n[0])


# --------------------------------------------------------------------------
# correspondences


@dataclass(frozen=True)
class Correspondence:
    """One matched constraint.

    ``axis`` is the line direction ``l`` for edges and the plane normal ``n``
    for planar matches.  ``d`` (edges only) is the unit vector from the line
    to the transformed point, taken at the pose used for matching.
    """

    kind: str
    p: np.ndarray
    p_map: np.ndarray
    q: np.ndarray
    axis: np.ndarray
    d: np.ndarray | None = None

    @property
    def is_edge(self) -> bool:
        return self.kind == EDGE


@dataclass
class CorrespondenceSet:
    """Struct-of-arrays container: edge rows first, then planar rows."""

    is_edge: np.ndarray
    p: np.ndarray
    p_map: np.ndarray
    q: np.ndarray
    axis: np.ndarray
    d: np.ndarray  # edges: unit distance vector; planar rows hold the normal

    def __len__(self) -> int:
        return len(self.is_edge)

    @property
    def n_edge(self) -> int:
        return int(self.is_edge.sum())

    def __getitem__(self, i: int) -> Correspondence:
        e = bool(self.is_edge[i])
        return Correspondence(
            EDGE if e else PLANAR, self.p[i], self.p_map[i], self.q[i], self.axis[i], self.d[i] if e else None
        )

    def subset(self, rows: np.ndarray) -> "CorrespondenceSet":
        rows = np.asarray(rows)
        return CorrespondenceSet(self.is_edge[rows], self.p[rows], self.p_map[rows], self.q[rows], self.axis[rows], self.d[rows])

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        z = np.zeros((0, 3))
        return cls(np.zeros(0, dtype=bool), z, z, z, z, z)

    @classmethod
    def from_list(cls, items: Iterable[Correspondence]) -> "CorrespondenceSet":
        items = sorted(items, key=lambda c: not c.is_edge)
        if not items:
            return cls.empty()
        return cls(
            np.array([c.is_edge for c in items]),
            np.array([c.p for c in items], dtype=float),
            np.array([c.p_map for c in items], dtype=float),
            np.array([c.q for c in items], dtype=float),
            np.array([c.axis for c in items], dtype=float),
            np.array([c.d if c.is_edge else c.axis for c in items], dtype=float),
        )


def edge_distance_vector(p_map: np.ndarray, q: np.ndarray, l: np.ndarray):
    """Rejection of ``p_map - q`` from the line direction and its norm."""
    w = p_map - q
    rej = w - np.sum(w * l, axis=-1, keepdims=True) * l
    return rej, np.linalg.norm(rej, axis=-1)


def make_edge(p, q, l, pose: PoseLike) -> Correspondence:
    """Edge correspondence with ``d`` computed at ``pose``."""
    p = np.asarray(p, dtype=float)
    l = np.asarray(l, dtype=float)
    l = l / np.linalg.norm(l)
    pm = transform_points(pose, p)[0]
    rej, dist = edge_distance_vector(pm, np.asarray(q, dtype=float), l)
    if dist < 1e-9:
        raise Degenerate("point lies on its line; distance direction undefined")
    return Correspondence(EDGE, p, pm, np.asarray(q, dtype=float), l, rej / dist)


def make_plane(p, q, n, pose: PoseLike) -> Correspondence:
    p = np.asarray(p, dtype=float)
    n = np.asarray(n, dtype=float)
    pm = transform_points(pose, p)[0]
    return Correspondence(PLANAR, p, pm, np.asarray(q, dtype=float), n / np.linalg.norm(n))


def find_correspondences(
    features: FeatureCloud, fmap: FeatureMap, pose: PoseLike, cfg: FeatureConfig | None = None
) -> CorrespondenceSet:
    """Match scan features against the map at ``pose``.

    Edge points get a line fitted to their ``k_line`` nearest map edge points,
    planar points a plane through their ``k_plane`` nearest map planar points.
    Matches are dropped when the nearest neighbor is farther than
    ``max_corr_dist``, the fit is degenerate, or an edge point lies on its
    line (zero residual, undefined gradient direction).
    """
    cfg = cfg or FeatureConfig()
    parts = []

    if features.n_edge and fmap.edge is not None and len(fmap.edge) >= cfg.k_line:
        p = features.edge_points
        pm = transform_points(pose, p)
        dist, nn = fmap.edge.query(pm, cfg.k_line)
        q, l, ok = fit_lines(fmap.edge.points[nn], cfg.line_ratio)
        rej, rd = edge_distance_vector(pm, q, l)
        ok &= (dist[:, 0] <= cfg.max_corr_dist) & (rd >= 1e-9)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = rej / rd[:, None]
        parts.append((np.ones(ok.sum(), dtype=bool), p[ok], pm[ok], q[ok], l[ok], d[ok]))

    if features.n_planar and fmap.planar is not None and len(fmap.planar) >= cfg.k_plane:
        p = features.planar_points
        pm = transform_points(pose, p)
        dist, nn = fmap.planar.query(pm, cfg.k_plane)
        q, n, ok = fit_planes(fmap.planar.points[nn], cfg.plane_tol)
        ok &= dist[:, 0] <= cfg.max_corr_dist
        if fmap.planar_normals is not None and cfg.normal_consistency > 0:
            agree = np.abs(np.einsum("mki,mi->mk", fmap.planar_normals[nn], n))
            ok &= agree.min(axis=1) >= cfg.normal_consistency
        parts.append((np.zeros(ok.sum(), dtype=bool), p[ok], pm[ok], q[ok], n[ok], n[ok]))

    if not parts:
        return CorrespondenceSet.empty()
    cols = [np.concatenate(c) for c in zip(*parts)]
    return CorrespondenceSet(*cols)
