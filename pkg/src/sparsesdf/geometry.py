"""Point-cloud containers, normalization, nearest neighbor, sampling, metrics.

All functions are pure; nothing here touches the networks.  Nearest-neighbor
search is exact: a brute-force scan below 512 targets, a scipy cKDTree above,
with ties always resolved to the lowest target index so results are
deterministic and reproducible across code paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError

# Exhaustive scan below this target count, KD-tree above; both exact.
BRUTE_FORCE_LIMIT = 64


@dataclass
class PointCloud:
    """Positions (n, d) with optional unit normals, d in {2, 3}."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] not in (2, 3):
            raise InvalidInputError(f"points must be (n, 2) or (n, 3), got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise InvalidInputError("point cloud must contain at least one point")
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("point coordinates must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.points.shape:
                raise InvalidInputError("normals must match points in shape")
            norms = np.linalg.norm(self.normals, axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-6):
                raise InvalidInputError("normals must have unit length (tol 1e-6)")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class NormalizationTransform:
    """y = (x - center) * scale; invertible exactly."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if not self.scale > 0:
            raise InvalidInputError("scale must be positive")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center


@dataclass
class TriangleMesh:
    """Vertices plus faces: triangles in 3-D, segment pairs (polyline) in 2-D."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise InvalidInputError("vertices must be (n, 2) or (n, 3)")
        want = 3 if self.vertices.shape[1] == 3 else 2
        if self.faces.size and (self.faces.ndim != 2 or self.faces.shape[1] != want):
            raise InvalidInputError(f"faces must be (m, {want})")
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise InvalidInputError("face index out of range")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def face_measures(self) -> np.ndarray:
        """Triangle areas (3-D) or segment lengths (2-D)."""
        v = self.vertices
        f = self.faces
        if self.dim == 3:
            a = v[f[:, 1]] - v[f[:, 0]]
            b = v[f[:, 2]] - v[f[:, 0]]
            return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)
        return np.linalg.norm(v[f[:, 1]] - v[f[:, 0]], axis=1)


def _pts(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError("expected an (n, d) point array")
    return arr


# ---------------------------------------------------------------------------
# normalization


def normalize_cloud(cloud: PointCloud):
    """Center at the centroid, scale so the max-abs coordinate is 0.5.

    Returns the normalized cloud and the transform that produced it.
    """
    pts = cloud.points
    center = pts.mean(axis=0)
    extent = np.abs(pts - center).max()
    scale = 1.0 if extent == 0.0 else 0.5 / extent
    tf = NormalizationTransform(center, scale)
    return PointCloud(tf.apply(pts), cloud.normals), tf


# ---------------------------------------------------------------------------
# nearest neighbor


def _brute_nn(queries: np.ndarray, targets: np.ndarray):
    # argmin returns the first (lowest-index) minimizer, which is the tie rule.
    d2 = ((queries[:, None, :] - targets[None, :, :]) ** 2).sum(axis=2)
    idx = d2.argmin(axis=1)
    return idx, np.sqrt(d2[np.arange(len(queries)), idx])


def nearest_neighbor(queries, targets):
    """Index and distance of each query's nearest target.

    Exact search; ties broken by the lowest target index.  Returns
    ``(indices, distances)`` as arrays aligned with the queries.
    """
    q = _pts(queries)
    t = _pts(targets)
    if t.shape[0] == 0:
        raise InvalidInputError("targets must be non-empty")
    if q.shape[1] != t.shape[1]:
        raise InvalidInputError("query/target dimension mismatch")
    if t.shape[0] <= BRUTE_FORCE_LIMIT:
        return _brute_nn(q, t)

    tree = cKDTree(t)
    dist, idx = tree.query(q, k=2)
    out_idx = idx[:, 0].astype(np.int64)
    # Exact ties (duplicated points, symmetric layouts): re-resolve against
    # every target at the minimal distance and keep the lowest index.
    tied = dist[:, 0] == dist[:, 1]
    if np.any(tied):
        for qi in np.nonzero(tied)[0]:
            r = dist[qi, 0] * (1.0 + 1e-12) + 1e-300
            cand = np.asarray(tree.query_ball_point(q[qi], r), dtype=np.int64)
            d2 = ((t[cand] - q[qi]) ** 2).sum(axis=1)
            best = cand[d2 == d2.min()].min()
            out_idx[qi] = best
    return out_idx, dist[:, 0]


def _directional_min_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each point of a, distance to its nearest point of b."""
    if b.shape[0] <= BRUTE_FORCE_LIMIT:
        return _brute_nn(a, b)[1]
    tree = cKDTree(b)
    d, _ = tree.query(a)
    return d


# ---------------------------------------------------------------------------
# metrics


def chamfer_l1(a, b) -> float:
    """0.5 * (mean min-dist a->b + mean min-dist b->a), unsquared."""
    pa, pb = _pts(a), _pts(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise InvalidInputError("chamfer inputs must be non-empty")
    return 0.5 * (
        _directional_min_dists(pa, pb).mean() + _directional_min_dists(pb, pa).mean()
    )


def chamfer_l2(a, b) -> float:
    """Sum of the two directional means of squared nearest distances."""
    pa, pb = _pts(a), _pts(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise InvalidInputError("chamfer inputs must be non-empty")
    d_ab = _directional_min_dists(pa, pb)
    d_ba = _directional_min_dists(pb, pa)
    return float((d_ab**2).mean() + (d_ba**2).mean())


def normal_consistency(a: PointCloud, b: PointCloud) -> float:
    """Mean |cos| between each point's normal and its nearest neighbor's,
    averaged over both directions."""
    if a.normals is None or b.normals is None:
        raise InvalidInputError("normal_consistency requires normals on both clouds")

    def one_way(src: PointCloud, dst: PointCloud) -> float:
        idx, _ = nearest_neighbor(src.points, dst.points)
        cos = np.abs((src.normals * dst.normals[idx]).sum(axis=1))
        return float(cos.mean())

    return 0.5 * (one_way(a, b) + one_way(b, a))


# ---------------------------------------------------------------------------
# sampling


def sample_mesh_surface(mesh: TriangleMesh, n: int, with_normals: bool = False, rng=None) -> PointCloud:
    """Area-uniform samples on a mesh (length-uniform on a 2-D polyline)."""
    if rng is None:
        rng = np.random.default_rng(0)
    if n < 1:
        raise InvalidInputError("sample count must be positive")
    if mesh.faces.size == 0:
        raise InvalidInputError("mesh has no faces")
    measures = mesh.face_measures()
    total = measures.sum()
    if total <= 0.0:
        raise InvalidInputError("mesh is degenerate (zero total area)")
    probs = measures / total
    choice = rng.choice(len(measures), size=n, p=probs)
    v = mesh.vertices
    f = mesh.faces[choice]
    if mesh.dim == 3:
        u = rng.random(n)
        w = rng.random(n)
        flip = u + w > 1.0
        u[flip] = 1.0 - u[flip]
        w[flip] = 1.0 - w[flip]
        p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        pts = p0 + u[:, None] * (p1 - p0) + w[:, None] * (p2 - p0)
        normals = None
        if with_normals:
            nrm = np.cross(p1 - p0, p2 - p0)
            nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
            normals = nrm
        return PointCloud(pts, normals)
    t = rng.random(n)[:, None]
    p0, p1 = v[f[:, 0]], v[f[:, 1]]
    pts = p0 + t * (p1 - p0)
    normals = None
    if with_normals:
        d = p1 - p0
        nrm = np.stack([d[:, 1], -d[:, 0]], axis=1)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        normals = nrm
    return PointCloud(pts, normals)


def sample_gaussian_queries(anchors, sigmas, per_anchor: int, rng) -> np.ndarray:
    """``per_anchor`` isotropic Gaussian draws around each anchor.

    Row order is anchor-major; deterministic for a given generator state.
    """
    a = _pts(anchors)
    sig = np.asarray(sigmas, dtype=np.float64)
    if sig.shape != (a.shape[0],):
        raise InvalidInputError("sigmas must have one entry per anchor")
    if np.any(sig <= 0.0):
        raise InvalidInputError("sigmas must be positive")
    if per_anchor < 1:
        raise InvalidInputError("per_anchor must be positive")
    noise = rng.standard_normal((a.shape[0], per_anchor, a.shape[1]))
    out = a[:, None, :] + sig[:, None, None] * noise
    return out.reshape(-1, a.shape[1])


def local_sigma(anchors, k: int) -> np.ndarray:
    """Distance from each anchor to its k-th nearest other anchor."""
    a = _pts(anchors)
    n = a.shape[0]
    if not 0 < k < n:
        raise InvalidInputError(f"k must be in [1, {n - 1}], got {k}")
    if n <= BRUTE_FORCE_LIMIT:
        d2 = ((a[:, None, :] - a[None, :, :]) ** 2).sum(axis=2)
        d2.sort(axis=1)
        return np.sqrt(d2[:, k])  # column 0 is the self distance
    tree = cKDTree(a)
    d, _ = tree.query(a, k=k + 1)
    return d[:, k]
