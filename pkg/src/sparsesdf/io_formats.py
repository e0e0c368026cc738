"""Point-cloud and mesh file I/O.

Readers accept what the pipeline consumes: whitespace-delimited XYZ (2, 3,
4, or 6 columns; the extra columns are normals) and PLY (ascii or
binary_little_endian, positions only; normals in the file are ignored with a
warning since the method never uses them).  Writers emit ASCII with %.17g
formatting so decimal inputs round-trip exactly.
"""

from __future__ import annotations

import struct
import warnings

import numpy as np

from .errors import InvalidInputError, ParseError
from .geometry import PointCloud, TriangleMesh

_FMT = "%.17g"


# ---------------------------------------------------------------------------
# XYZ


def read_xyz(path) -> PointCloud:
    rows = []
    ncols = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if ncols is None:
                if len(parts) not in (2, 3, 4, 6):
                    raise ParseError(
                        f"{path}:{lineno}: expected 2, 3, 4, or 6 columns, got {len(parts)}"
                    )
                ncols = len(parts)
            elif len(parts) != ncols:
                raise ParseError(
                    f"{path}:{lineno}: inconsistent column count ({len(parts)} vs {ncols})"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no points found")
    data = np.asarray(rows, dtype=np.float64)
    if ncols in (2, 3):
        return PointCloud(data)
    dim = ncols // 2
    return PointCloud(data[:, :dim], data[:, dim:])


def write_xyz(path, cloud: PointCloud):
    data = cloud.points
    if cloud.normals is not None:
        data = np.concatenate([cloud.points, cloud.normals], axis=1)
    with open(path, "w") as fh:
        for row in data:
            fh.write(" ".join(_FMT % v for v in row) + "\n")


# ---------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ParseError(f"{path}:1: not a PLY file")
        fmt = None
        elements = []  # (name, count, [(prop_name, dtype_code)])
        lineno = 1
        while True:
            line = fh.readline()
            lineno += 1
            if not line:
                raise ParseError(f"{path}:{lineno}: unexpected end of header")
            tokens = line.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if tokens[1] == "list":
                    elements[-1][2].append((tokens[-1], ("list", tokens[2], tokens[3])))
                else:
                    if tokens[1] not in _PLY_TYPES:
                        raise ParseError(f"{path}:{lineno}: unsupported type '{tokens[1]}'")
                    elements[-1][2].append((tokens[-1], _PLY_TYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise ParseError(f"{path}: unsupported format '{fmt}'")

        vertex_el = next((e for e in elements if e[0] == "vertex"), None)
        if vertex_el is None:
            raise ParseError(f"{path}: no vertex element")
        names = [p[0] for p in vertex_el[2]]
        if not all(c in names for c in ("x", "y", "z")):
            raise ParseError(f"{path}: vertex element lacks x/y/z")
        if any(n in names for n in ("nx", "ny", "nz")):
            warnings.warn(f"{path}: normals present in PLY are ignored", stacklevel=2)
        if any(isinstance(p[1], tuple) for p in vertex_el[2]):
            raise ParseError(f"{path}: list properties on vertices are unsupported")

        if elements[0][0] != "vertex":
            raise ParseError(f"{path}: vertex element must come first")
        count = vertex_el[1]
        if fmt == "ascii":
            vals = []
            for i in range(count):
                line = fh.readline()
                if not line:
                    raise ParseError(f"{path}: truncated vertex data at row {i}")
                parts = line.split()
                if len(parts) != len(names):
                    raise ParseError(f"{path}: bad vertex row {i}")
                vals.append([float(v) for v in parts])
            arr = np.asarray(vals, dtype=np.float64)
            cols = {n: arr[:, i] for i, n in enumerate(names)}
        else:
            dtype = np.dtype([(n, "<" + c) for n, c in vertex_el[2]])
            raw = fh.read(dtype.itemsize * count)
            if len(raw) < dtype.itemsize * count:
                raise ParseError(f"{path}: truncated binary vertex data")
            rec = np.frombuffer(raw, dtype=dtype, count=count)
            cols = {n: rec[n].astype(np.float64) for n in names}
        pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    return PointCloud(pts)


def write_ply(path, cloud: PointCloud):
    """ASCII PLY with positions only."""
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        for axis in "xyz"[: cloud.dim]:
            fh.write(f"property double {axis}\n")
        fh.write("end_header\n")
        for row in cloud.points:
            fh.write(" ".join(_FMT % v for v in row) + "\n")


# ---------------------------------------------------------------------------
# OBJ


def write_obj(path, mesh: TriangleMesh):
    if mesh.dim != 3:
        raise InvalidInputError("OBJ output is for 3-D meshes")
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v " + " ".join(_FMT % x for x in v) + "\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def read_obj(path) -> TriangleMesh:
    verts = []
    faces = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: bad vertex line")
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: bad face line")
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):  # fan for polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise ParseError(f"{path}: no vertices found")
    return TriangleMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


# ---------------------------------------------------------------------------
# 2-D polylines


def write_polylines2d(path, polylines):
    """Plain-text loop format: 'loop closed|open', vertex rows, 'end'."""
    with open(path, "w") as fh:
        for verts, closed in polylines:
            fh.write(f"loop {'closed' if closed else 'open'}\n")
            for v in np.asarray(verts):
                fh.write("v " + " ".join(_FMT % x for x in v) + "\n")
            fh.write("end\n")


def read_polylines2d(path):
    polylines = []
    verts = None
    closed = False
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "loop":
                if verts is not None:
                    raise ParseError(f"{path}:{lineno}: nested loop")
                closed = len(parts) > 1 and parts[1] == "closed"
                verts = []
            elif parts[0] == "v":
                if verts is None:
                    raise ParseError(f"{path}:{lineno}: vertex outside loop")
                verts.append([float(parts[1]), float(parts[2])])
            elif parts[0] == "end":
                if verts is None:
                    raise ParseError(f"{path}:{lineno}: stray end")
                polylines.append((np.asarray(verts), closed))
                verts = None
            else:
                raise ParseError(f"{path}:{lineno}: unknown record '{parts[0]}'")
    if verts is not None:
        raise ParseError(f"{path}: unterminated loop")
    return polylines
