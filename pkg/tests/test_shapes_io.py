import numpy as np
import pytest

from sparsesdf import io_formats as iof
from sparsesdf import shapes
from sparsesdf.errors import InvalidInputError, ParseError
from sparsesdf.geometry import PointCloud, TriangleMesh


# synthetic shapes


def test_sphere_points_on_radius():
    cloud, desc = shapes.generate_cloud(shapes.SyntheticShapeSpec("sphere", count=300))
    r = np.linalg.norm(cloud.points, axis=1)
    assert np.abs(r - 1.0).max() < 1e-9


def test_every_shape_on_zero_level():
    for kind in shapes.SHAPE_KINDS:
        cloud, desc = shapes.generate_cloud(shapes.SyntheticShapeSpec(kind, count=200))
        sdf = shapes.analytic_sdf(desc)
        assert np.abs(sdf(cloud.points)).max() < 1e-9, kind


def test_noise_magnitude_statistics():
    spec = shapes.SyntheticShapeSpec("sphere", count=20_000, noise=0.02, seed=3)
    cloud, desc = shapes.generate_cloud(spec)
    sdf = shapes.analytic_sdf(desc)
    d = sdf(cloud.points)
    # radial deviation of an isotropic 3-D Gaussian of sigma=0.02 about r=1:
    # the signed surface distance has std close to sigma
    assert abs(d.std() - 0.02) < 0.002
    assert abs(d.mean()) < 0.001 + 0.02  # small bias from curvature allowed


def test_moon_nonuniform_tip_density():
    spec = shapes.SyntheticShapeSpec("moon2d", count=2000, nonuniform=True, seed=5)
    cloud, _ = shapes.generate_cloud(spec)
    tip_hi = np.array([0.6, 0.8])
    tip_lo = np.array([0.6, -0.8])
    near_hi = (np.linalg.norm(cloud.points - tip_hi, axis=1) < 0.25).sum()
    near_lo = (np.linalg.norm(cloud.points - tip_lo, axis=1) < 0.25).sum()
    assert near_hi >= 3 * max(near_lo, 1)


def test_ground_truth_normals_align_with_sdf_gradient():
    for kind in shapes.SHAPE_KINDS:
        desc = {"kind": kind}
        gt = shapes.sample_ground_truth(desc, 2000, np.random.default_rng(0))
        sdf = shapes.analytic_sdf(desc)
        eps = 1e-6
        d = (sdf(gt.points + eps * gt.normals) - sdf(gt.points - eps * gt.normals)) / (2 * eps)
        assert np.percentile(d, 5) > 0.9, kind


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        shapes.SyntheticShapeSpec("pyramid")
    with pytest.raises(InvalidInputError):
        shapes.SyntheticShapeSpec("sphere", count=2)
    with pytest.raises(InvalidInputError):
        shapes.SyntheticShapeSpec("sphere", noise=-0.1)


def test_generation_deterministic():
    a, _ = shapes.generate_cloud(shapes.SyntheticShapeSpec("torus", count=100, seed=9))
    b, _ = shapes.generate_cloud(shapes.SyntheticShapeSpec("torus", count=100, seed=9))
    assert np.array_equal(a.points, b.points)


# xyz


def test_xyz_roundtrip_exact(tmp_path, rng):
    pts = rng.normal(size=(40, 3)) * np.array([1.0, 1e-7, 1e6])
    cloud = PointCloud(pts)
    path = tmp_path / "c.xyz"
    iof.write_xyz(path, cloud)
    back = iof.read_xyz(path)
    assert np.array_equal(back.points, pts)


def test_xyz_roundtrip_with_normals(tmp_path, rng):
    n = rng.normal(size=(10, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    cloud = PointCloud(rng.normal(size=(10, 3)), n)
    path = tmp_path / "c.xyz"
    iof.write_xyz(path, cloud)
    back = iof.read_xyz(path)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.normals, n)


def test_xyz_2d_columns(tmp_path):
    path = tmp_path / "c.xyz"
    path.write_text("0.5 0.25\n-1 2\n")
    cloud = iof.read_xyz(path)
    assert cloud.dim == 2
    assert len(cloud) == 2


def test_xyz_parse_error_carries_line_number(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 3\n4 five 6\n")
    with pytest.raises(ParseError, match=":2"):
        iof.read_xyz(path)


def test_xyz_inconsistent_columns(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 3\n4 5\n")
    with pytest.raises(ParseError, match=":2"):
        iof.read_xyz(path)


# ply


def test_ply_ascii_roundtrip(tmp_path, rng):
    pts = rng.normal(size=(25, 3))
    path = tmp_path / "c.ply"
    iof.write_ply(path, PointCloud(pts))
    back = iof.read_ply(path)
    assert np.array_equal(back.points, pts)


def test_ply_binary_little_endian(tmp_path, rng):
    pts = rng.normal(size=(7, 3)).astype(np.float32)
    path = tmp_path / "c.ply"
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        "element vertex 7\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(pts.astype("<f4").tobytes())
    back = iof.read_ply(path)
    np.testing.assert_allclose(back.points, pts, rtol=1e-7)


def test_ply_normals_ignored_with_warning(tmp_path, rng):
    pts = rng.normal(size=(4, 3))
    path = tmp_path / "n.ply"
    body = "\n".join(
        " ".join("%.8f" % v for v in np.concatenate([p, [0, 0, 1]])) for p in pts
    )
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 4\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property double nx\nproperty double ny\nproperty double nz\n"
        "end_header\n" + body + "\n"
    )
    with pytest.warns(UserWarning, match="normals"):
        back = iof.read_ply(path)
    assert back.normals is None
    assert len(back) == 4


def test_ply_rejects_garbage(tmp_path):
    path = tmp_path / "x.ply"
    path.write_text("not a ply\n")
    with pytest.raises(ParseError):
        iof.read_ply(path)


# obj


def test_obj_roundtrip(tmp_path, rng):
    mesh = TriangleMesh(rng.normal(size=(9, 3)), np.array([[0, 1, 2], [3, 4, 5], [6, 7, 8]]))
    path = tmp_path / "m.obj"
    iof.write_obj(path, mesh)
    back = iof.read_obj(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)


def test_obj_reads_slash_faces(tmp_path):
    path = tmp_path / "m.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n")
    mesh = iof.read_obj(path)
    assert np.array_equal(mesh.faces, [[0, 1, 2]])


def test_obj_triangulates_quads(tmp_path):
    path = tmp_path / "m.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    mesh = iof.read_obj(path)
    assert len(mesh.faces) == 2


# polylines


def test_polylines_roundtrip(tmp_path, rng):
    lines = [
        (rng.normal(size=(5, 2)), True),
        (rng.normal(size=(3, 2)), False),
    ]
    path = tmp_path / "c.txt"
    iof.write_polylines2d(path, lines)
    back = iof.read_polylines2d(path)
    assert len(back) == 2
    for (va, ca), (vb, cb) in zip(lines, back):
        assert np.array_equal(va, vb)
        assert ca == cb


def test_polylines_rejects_unterminated(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("loop closed\nv 0 0\n")
    with pytest.raises(ParseError):
        iof.read_polylines2d(path)
