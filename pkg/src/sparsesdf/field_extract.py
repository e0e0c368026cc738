"""Dense field evaluation and iso-surface extraction.

3-D extraction is table-driven marching cubes over the 256 corner-sign
cases with linear edge interpolation.  The case table is derived once at
import time by walking each case's zero-crossing loops over the cube faces:
on a face, consecutive crossings capping a run of inside corners form a
segment, and since every crossed cube edge belongs to exactly two faces the
segments close into loops, which are fan-triangulated and oriented along the
field gradient (normals point toward positive values).  Ambiguous faces
(alternating corner signs) are resolved by the fixed geometric rule
"separate the inside corners", which both neighboring cells derive
identically, so no cracks open across cell boundaries.

2-D extraction is the 16-case marching squares; its ambiguous saddle cells
are resolved by sampling the evaluator at the cell center when one is
available, else by the average of the four corners.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError
from .geometry import TriangleMesh

DEGENERATE_AREA = 1e-12

_CORNERS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
)
_EDGES = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)]
_FACES = [(0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]

_EDGE_OF_PAIR = {tuple(sorted(e)): i for i, e in enumerate(_EDGES)}

# per local edge: (axis, base offset) for mapping onto global grid edges
_EDGE_AXIS = []
_EDGE_BASE = []
for _a, _b in _EDGES:
    ca, cb = _CORNERS[_a], _CORNERS[_b]
    _EDGE_AXIS.append(int(np.nonzero(ca != cb)[0][0]))
    _EDGE_BASE.append(np.minimum(ca, cb))
_EDGE_AXIS = np.array(_EDGE_AXIS)
_EDGE_BASE = np.array(_EDGE_BASE)


@dataclass
class ScalarField:
    """Dense scalar samples over an axis-aligned box; values[i, j, (k)]
    corresponds to the grid vertex at lo + index * spacing."""

    values: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if self.values.ndim not in (2, 3):
            raise InvalidInputError("field must be 2-D or 3-D")
        if self.lo.shape != (self.values.ndim,) or self.hi.shape != (self.values.ndim,):
            raise InvalidInputError("bounds must match field dimension")
        if any(r < 2 for r in self.values.shape):
            raise InvalidInputError("resolution must be >= 2 per axis")
        if not np.all(self.hi > self.lo):
            raise InvalidInputError("bounds must have positive extent")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("field values must be finite")

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.values.shape) - 1)

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.linspace(self.lo[axis], self.hi[axis], self.values.shape[axis])


def eval_grid(evaluator, resolution, lo, hi, chunk: int = 65536) -> ScalarField:
    """Evaluate a pure function of (n, d) point batches on a dense grid."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    dim = lo.shape[0]
    if np.isscalar(resolution):
        resolution = (int(resolution),) * dim
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != dim or any(r < 2 for r in resolution):
        raise InvalidInputError("resolution must be >= 2 per axis")
    axes = [np.linspace(lo[a], hi[a], resolution[a]) for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    out = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], chunk):
        sl = slice(start, min(start + chunk, pts.shape[0]))
        out[sl] = np.asarray(evaluator(pts[sl]), dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(out[sl])):
            bad = start + int(np.nonzero(~np.isfinite(out[sl]))[0][0])
            raise NumericalError(f"non-finite field sample at grid point {pts[bad]}")
    return ScalarField(out.reshape(resolution), lo, hi)


# ---------------------------------------------------------------------------
# marching cubes table


def _face_segments(face, inside):
    """Contour segments on one face as (edge, edge) pairs of cube edge ids."""
    corners = list(face)
    state = [inside[c] for c in corners]
    crossings = []  # (slot, edge id); slot i is the edge between corner i and i+1
    for i in range(4):
        if state[i] != state[(i + 1) % 4]:
            pair = tuple(sorted((corners[i], corners[(i + 1) % 4])))
            crossings.append((i, _EDGE_OF_PAIR[pair]))
    if not crossings:
        return []
    # cap every maximal run of inside corners: the crossing entering the run
    # pairs with the crossing leaving it
    segs = []
    for slot, edge in crossings:
        if not state[(slot + 1) % 4]:
            continue  # not entering an inside run
        j = (slot + 1) % 4
        while state[j]:
            j = (j + 1) % 4
        # the run ends between corner j-1 and j; that slot holds the partner
        partner = [e for s, e in crossings if s == (j - 1) % 4]
        segs.append((edge, partner[0]))
    return segs


def _trilinear_gradient(corner_vals, point):
    eps = 1e-4

    def interp(p):
        x, y, z = p
        acc = 0.0
        for c, v in zip(_CORNERS, corner_vals):
            wx = x if c[0] else 1.0 - x
            wy = y if c[1] else 1.0 - y
            wz = z if c[2] else 1.0 - z
            acc += v * wx * wy * wz
        return acc

    g = np.zeros(3)
    for a in range(3):
        dp = np.zeros(3)
        dp[a] = eps
        g[a] = (interp(point + dp) - interp(point - dp)) / (2 * eps)
    return g


def _build_case(case: int):
    inside = [(case >> c) & 1 == 1 for c in range(8)]
    segs = []
    for face in _FACES:
        segs.extend(_face_segments(face, inside))
    if not segs:
        return []
    # each crossed edge appears in exactly two segments; walk the loops
    adj: dict[int, list[int]] = {}
    for a, b in segs:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    loops = []
    remaining = set(adj)
    while remaining:
        start = min(remaining)
        loop = [start]
        remaining.discard(start)
        prev, cur = None, start
        while True:
            a, b = adj[cur]
            nxt = a if a != prev else b
            if nxt == start:
                break
            loop.append(nxt)
            remaining.discard(nxt)
            prev, cur = cur, nxt
        loops.append(loop)

    corner_vals = [-1.0 if inside[c] else 1.0 for c in range(8)]
    tris = []
    for loop in loops:
        mids = np.array([(_CORNERS[_EDGES[e][0]] + _CORNERS[_EDGES[e][1]]) / 2.0 for e in loop])
        newell = np.zeros(3)
        for i in range(len(loop)):
            newell += np.cross(mids[i], mids[(i + 1) % len(loop)])
        grad = _trilinear_gradient(corner_vals, mids.mean(axis=0))
        if np.dot(newell, grad) < 0:
            loop = loop[::-1]
        for i in range(1, len(loop) - 1):
            tris.append((loop[0], loop[i], loop[i + 1]))
    return tris


_MC_TABLE = [_build_case(c) for c in range(256)]


# ---------------------------------------------------------------------------
# 3-D extraction


def marching_cubes(field: ScalarField, iso: float = 0.0) -> TriangleMesh:
    """Triangulated iso-surface with vertices on linearly interpolated grid
    edges; triangle normals point toward increasing field values."""
    if field.dim != 3:
        raise InvalidInputError("marching_cubes needs a 3-D field")
    v = field.values
    inside = v < iso
    nx, ny, nz = v.shape

    edge_ids = []
    edge_pos = []
    offset = 0
    for axis in range(3):
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[axis] = slice(0, -1)
        sl1[axis] = slice(1, None)
        v0 = v[tuple(sl0)]
        v1 = v[tuple(sl1)]
        crossed = inside[tuple(sl0)] != inside[tuple(sl1)]
        ids = np.full(v0.shape, -1, dtype=np.int64)
        n_cross = int(crossed.sum())
        ids[crossed] = offset + np.arange(n_cross)
        offset += n_cross
        t = np.zeros(n_cross)
        if n_cross:
            t = (iso - v0[crossed]) / (v1[crossed] - v0[crossed])
        base = np.argwhere(crossed).astype(np.float64)
        pos = base.copy()
        pos[:, axis] += t
        edge_ids.append(ids)
        edge_pos.append(pos)

    vertices_index = np.concatenate(edge_pos, axis=0) if offset else np.zeros((0, 3))
    vertices = field.lo + vertices_index * field.spacing

    cases = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for c, (dx, dy, dz) in enumerate(_CORNERS):
        cases |= inside[dx : dx + nx - 1, dy : dy + ny - 1, dz : dz + nz - 1].astype(np.int32) << c

    faces = []
    for case in np.unique(cases):
        tris = _MC_TABLE[case]
        if not tris:
            continue
        ci, cj, ck = np.nonzero(cases == case)
        for e0, e1, e2 in tris:
            cols = []
            for e in (e0, e1, e2):
                ax = _EDGE_AXIS[e]
                bx, by, bz = _EDGE_BASE[e]
                cols.append(edge_ids[ax][ci + bx, cj + by, ck + bz])
            faces.append(np.stack(cols, axis=1))
    face_arr = np.concatenate(faces, axis=0) if faces else np.zeros((0, 3), dtype=np.int64)
    mesh = TriangleMesh(vertices, face_arr)
    return _drop_degenerate(mesh)


def _drop_degenerate(mesh: TriangleMesh) -> TriangleMesh:
    if mesh.faces.size == 0:
        return mesh
    keep = mesh.face_measures() > DEGENERATE_AREA
    faces = mesh.faces[keep]
    used = np.unique(faces)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[faces])


# ---------------------------------------------------------------------------
# 2-D extraction

_SQ_CORNERS = [(0, 0), (1, 0), (1, 1), (0, 1)]  # cyclic
_SQ_EDGES = [(0, 1), (1, 2), (2, 3), (3, 0)]


def marching_squares(field: ScalarField, iso: float = 0.0, evaluator=None):
    """Iso-contours of a 2-D field as polylines.

    Returns a list of (vertices, closed) pairs.  ``evaluator`` (same signature
    as for eval_grid) refines the two ambiguous saddle cases by sampling the
    cell center; without it the corner average decides.
    """
    if field.dim != 2:
        raise InvalidInputError("marching_squares needs a 2-D field")
    v = field.values
    inside = v < iso
    nx, ny = v.shape

    edge_ids = []
    edge_pos = []
    offset = 0
    for axis in range(2):
        sl0 = [slice(None)] * 2
        sl1 = [slice(None)] * 2
        sl0[axis] = slice(0, -1)
        sl1[axis] = slice(1, None)
        v0 = v[tuple(sl0)]
        v1 = v[tuple(sl1)]
        crossed = inside[tuple(sl0)] != inside[tuple(sl1)]
        ids = np.full(v0.shape, -1, dtype=np.int64)
        n_cross = int(crossed.sum())
        ids[crossed] = offset + np.arange(n_cross)
        offset += n_cross
        pos = np.argwhere(crossed).astype(np.float64)
        if n_cross:
            pos[:, axis] += (iso - v0[crossed]) / (v1[crossed] - v0[crossed])
        edge_ids.append(ids)
        edge_pos.append(pos)

    verts_index = np.concatenate(edge_pos, axis=0) if offset else np.zeros((0, 2))
    vertices = field.lo + verts_index * field.spacing

    def cell_edge_id(cell, local_edge):
        (ca, cb) = _SQ_EDGES[local_edge]
        pa = np.array(_SQ_CORNERS[ca])
        pb = np.array(_SQ_CORNERS[cb])
        axis = int(np.nonzero(pa != pb)[0][0])
        base = np.minimum(pa, pb)
        return edge_ids[axis][cell[0] + base[0], cell[1] + base[1]]

    segments = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            state = [inside[i + dx, j + dy] for dx, dy in _SQ_CORNERS]
            crossings = [k for k in range(4) if state[k] != state[(k + 1) % 4]]
            if not crossings:
                continue
            if len(crossings) == 2:
                segments.append((cell_edge_id((i, j), crossings[0]), cell_edge_id((i, j), crossings[1])))
                continue
            # saddle: corners alternate; decide by center value
            if evaluator is not None:
                center = field.lo + (np.array([i, j]) + 0.5) * field.spacing
                cval = float(np.asarray(evaluator(center[None, :])).reshape(-1)[0])
            else:
                cval = float(np.mean([v[i + dx, j + dy] for dx, dy in _SQ_CORNERS]))
            center_inside = cval < iso
            # connect each crossing with its neighbor so the center-side
            # region stays connected: capping runs of corners whose state
            # differs from the center's
            for k in range(4):
                if state[(k + 1) % 4] != center_inside:
                    segments.append((cell_edge_id((i, j), k), cell_edge_id((i, j), (k + 1) % 4)))

    return _join_polylines(vertices, segments)


def _join_polylines(vertices, segments):
    adj: dict[int, list[int]] = {}
    for a, b in segments:
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    visited = set()
    out = []
    # open chains first (endpoints have degree 1)
    for start in sorted(adj):
        if start in visited or len(adj[start]) != 1:
            continue
        chain = [start]
        visited.add(start)
        prev, cur = None, start
        while True:
            nxts = [n for n in adj[cur] if n != prev]
            if not nxts:
                break
            prev, cur = cur, nxts[0]
            if cur in visited:
                break
            chain.append(cur)
            visited.add(cur)
        out.append((vertices[chain], False))
    for start in sorted(adj):
        if start in visited:
            continue
        loop = [start]
        visited.add(start)
        prev, cur = None, start
        while True:
            nxts = [n for n in adj[cur] if n != prev]
            if not nxts:
                break
            nxt = nxts[0]
            if nxt == start:
                break
            loop.append(nxt)
            visited.add(nxt)
            prev, cur = cur, nxt
        out.append((vertices[loop], True))
    return out


# ---------------------------------------------------------------------------
# 2-D raster


def raster_field(field: ScalarField, level_spacing: float, path=None):
    """Colormapped image of a 2-D field with iso-contour overlays.

    Blue below zero, red above, white near zero; contour lines at integer
    multiples of ``level_spacing``, the zero level drawn heavier.  Returns
    the RGB array; writes a PNG when ``path`` is given.
    """
    if field.dim != 2:
        raise InvalidInputError("raster_field needs a 2-D field")
    if level_spacing <= 0:
        raise InvalidInputError("level spacing must be positive")
    v = field.values
    vmax = np.abs(v).max() or 1.0
    t = np.clip(v / vmax, -1.0, 1.0)
    r = np.where(t >= 0, 1.0, 1.0 + t)
    g = 1.0 - np.abs(t) * 0.55
    b = np.where(t <= 0, 1.0, 1.0 - t)
    img = np.stack([r, g, b], axis=-1)

    lo_k = int(np.floor(v.min() / level_spacing))
    hi_k = int(np.ceil(v.max() / level_spacing))
    for k in range(lo_k, hi_k + 1):
        level = k * level_spacing
        s = v - level
        mask = np.zeros(v.shape, dtype=bool)
        mask[:-1, :] |= (s[:-1, :] * s[1:, :]) < 0
        mask[:, :-1] |= (s[:, :-1] * s[:, 1:]) < 0
        shade = 0.0 if k == 0 else 0.25
        img[mask] *= shade
    arr = (np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    # image rows run top-to-bottom; field j-axis runs bottom-to-top
    arr = np.transpose(arr, (1, 0, 2))[::-1]
    if path is not None:
        from PIL import Image

        Image.fromarray(arr).save(path, format="PNG")
    return arr
