"""Synthetic test shapes: clouds, analytic distance fields, ground truth.

Each generated cloud ships with a descriptor (a plain dict, serialized as
JSON next to the cloud) that records the shape identity and parameters, so
evaluation can later draw arbitrarily dense ground-truth samplings and probe
the sign of a reconstructed field against the analytic one.

The 2-D "moon" is a crescent: the unit disk minus a second disk whose rim
passes through the first one.  With the default parameters the two boundary
circles intersect exactly at (0.6, +-0.8).  Its nonuniform sampling mode
concentrates points near one tip by warping the arc-length parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import InvalidInputError
from .geometry import PointCloud

SHAPE_KINDS = ("sphere", "cube", "torus", "moon2d")

TORUS_MAJOR = 1.0
TORUS_MINOR = 0.4
MOON_OFFSET = 0.6  # center of the cut disk, on the +x axis
MOON_CUT_RADIUS = 0.8
NONUNIFORM_WARP = 2.5


@dataclass
class SyntheticShapeSpec:
    kind: str
    count: int = 300
    noise: float = 0.0  # Gaussian sigma as a fraction of the bounding scale
    nonuniform: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise InvalidInputError(f"kind must be one of {SHAPE_KINDS}")
        if self.count < 3:
            raise InvalidInputError("sample count must be at least 3")
        if self.noise < 0:
            raise InvalidInputError("noise must be non-negative")


def bounding_scale(kind: str) -> float:
    """Max absolute clean-surface coordinate, used to scale noise."""
    return {
        "sphere": 1.0,
        "cube": 1.0,
        "torus": TORUS_MAJOR + TORUS_MINOR,
        "moon2d": 1.0,
    }[kind]


def generate_cloud(spec: SyntheticShapeSpec):
    """Sample the shape surface; returns (cloud, descriptor dict)."""
    rng = np.random.default_rng(spec.seed)
    clean = _surface_samples(spec.kind, spec.count, rng, spec.nonuniform)
    pts = clean.points
    if spec.noise > 0:
        pts = pts + spec.noise * bounding_scale(spec.kind) * rng.standard_normal(pts.shape)
    descriptor = {
        "kind": spec.kind,
        "count": spec.count,
        "noise": spec.noise,
        "nonuniform": spec.nonuniform,
        "seed": spec.seed,
        "bounding_scale": bounding_scale(spec.kind),
        "params": _shape_params(spec.kind),
    }
    return PointCloud(pts), descriptor


def _shape_params(kind: str) -> dict:
    if kind == "torus":
        return {"major": TORUS_MAJOR, "minor": TORUS_MINOR}
    if kind == "moon2d":
        return {"radius": 1.0, "cut_center": MOON_OFFSET, "cut_radius": MOON_CUT_RADIUS}
    if kind == "cube":
        return {"half_extent": 1.0}
    return {"radius": 1.0}


def _surface_samples(kind, n, rng, nonuniform=False) -> PointCloud:
    if kind == "sphere":
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return PointCloud(d, d.copy())
    if kind == "cube":
        face = rng.integers(0, 6, size=n)
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        for f in range(6):
            m = face == f
            axis, sign = divmod(f, 2)
            sign = 1.0 if sign == 0 else -1.0
            others = [a for a in range(3) if a != axis]
            pts[m, axis] = sign
            pts[m, others[0]] = uv[m, 0]
            pts[m, others[1]] = uv[m, 1]
            nrm[m, axis] = sign
        return PointCloud(pts, nrm)
    if kind == "torus":
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        # area density along the tube angle is proportional to R + r cos(phi)
        phi = np.empty(n)
        filled = 0
        while filled < n:
            cand = rng.uniform(0.0, 2 * np.pi, size=2 * (n - filled))
            acc = rng.random(cand.shape[0]) < (
                (TORUS_MAJOR + TORUS_MINOR * np.cos(cand)) / (TORUS_MAJOR + TORUS_MINOR)
            )
            take = cand[acc][: n - filled]
            phi[filled : filled + take.shape[0]] = take
            filled += take.shape[0]
        ring = TORUS_MAJOR + TORUS_MINOR * np.cos(phi)
        pts = np.stack(
            [ring * np.cos(theta), ring * np.sin(theta), TORUS_MINOR * np.sin(phi)], axis=1
        )
        nrm = np.stack(
            [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], axis=1
        )
        return PointCloud(pts, nrm)
    if kind == "moon2d":
        return _moon_samples(n, rng, nonuniform)
    raise InvalidInputError(f"unknown shape kind '{kind}'")


def _moon_arcs():
    """Arc parameterization of the crescent boundary.

    Returns (outer angle span on the unit circle, inner angle span on the cut
    circle, arc lengths).  Tips sit where the circles intersect.
    """
    cx, rb = MOON_OFFSET, MOON_CUT_RADIUS
    x_tip = (1.0 + cx**2 - rb**2) / (2 * cx)
    phi_a = np.arccos(x_tip)  # outer arc: angles [phi_a, 2pi - phi_a]
    cos_b = (1.0 - cx**2 - rb**2) / (2 * cx * rb)
    beta0 = np.arccos(cos_b)  # inner arc: angles [beta0, 2pi - beta0] around cut center
    len_outer = 1.0 * (2 * np.pi - 2 * phi_a)
    len_inner = rb * (2 * np.pi - 2 * beta0)
    return phi_a, beta0, len_outer, len_inner


def _moon_point_at(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boundary point and outward normal at arc length s in [0, total)."""
    cx, rb = MOON_OFFSET, MOON_CUT_RADIUS
    phi_a, beta0, len_outer, len_inner = _moon_arcs()
    s = np.asarray(s, dtype=np.float64)
    pts = np.empty((s.shape[0], 2))
    nrm = np.empty((s.shape[0], 2))
    on_outer = s < len_outer
    # outer arc starts at the upper tip and runs the long way around
    ang = phi_a + s[on_outer] / 1.0
    pts[on_outer] = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    nrm[on_outer] = pts[on_outer]
    t = s[~on_outer] - len_outer
    # inner arc continues from the lower tip back to the upper tip; the
    # crescent's outward normal there points into the cut disk
    ang = (2 * np.pi - beta0) - t / rb
    pts[~on_outer] = np.stack([cx + rb * np.cos(ang), rb * np.sin(ang)], axis=1)
    nrm[~on_outer] = -np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return pts, nrm


def _moon_samples(n, rng, nonuniform) -> PointCloud:
    _, _, len_outer, len_inner = _moon_arcs()
    total = len_outer + len_inner
    t = rng.random(n)
    if nonuniform:
        t = t**NONUNIFORM_WARP  # piles samples onto the tip at s = 0
    pts, nrm = _moon_point_at(t * total)
    return PointCloud(pts, nrm)


# ---------------------------------------------------------------------------
# analytic fields


def analytic_sdf(descriptor: dict):
    """Signed-distance callable (n, d) -> (n,) for a descriptor."""
    kind = descriptor["kind"]
    params = descriptor.get("params", _shape_params(kind))
    if kind == "sphere":
        r = params["radius"]
        return lambda p: np.linalg.norm(np.atleast_2d(p), axis=1) - r
    if kind == "cube":
        h = params["half_extent"]

        def box(p):
            q = np.abs(np.atleast_2d(p)) - h
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            return outside + inside

        return box
    if kind == "torus":
        major, minor = params["major"], params["minor"]

        def torus(p):
            p = np.atleast_2d(p)
            ring = np.hypot(np.hypot(p[:, 0], p[:, 1]) - major, p[:, 2])
            return ring - minor

        return torus
    if kind == "moon2d":
        cx, rb = params["cut_center"], params["cut_radius"]
        ra = params["radius"]

        def moon(p):
            p = np.atleast_2d(p)
            da = np.linalg.norm(p, axis=1) - ra
            db = np.hypot(p[:, 0] - cx, p[:, 1]) - rb
            return np.maximum(da, -db)

        return moon
    raise InvalidInputError(f"unknown shape kind '{kind}'")


def sample_ground_truth(descriptor: dict, n: int, rng=None) -> PointCloud:
    """Dense clean surface sampling with analytic normals."""
    if rng is None:
        rng = np.random.default_rng(12345)
    kind = descriptor["kind"]
    if kind == "moon2d":
        _, _, lo, li = _moon_arcs()
        s = rng.random(n) * (lo + li)
        pts, nrm = _moon_point_at(s)
        return PointCloud(pts, nrm)
    return _surface_samples(kind, n, rng)
