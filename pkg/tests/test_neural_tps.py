import numpy as np
import pytest

from conftest import fd_gradients, max_rel_err
from sparsesdf import autodiff as ad
from sparsesdf import neural_tps as ntps
from sparsesdf.errors import InternalConsistencyError, InvalidInputError


def tiny_net(rng, n_ctrl=6, feature_dim=8, layers=3, **kw):
    ctrl = rng.normal(size=(n_ctrl, 3)) * 0.3
    net = ntps.build_tps_net(ctrl, rng, feature_dim=feature_dim, mlp1_layers=layers, **kw)
    net.c_weights[:] = rng.normal(size=n_ctrl) * 0.1
    net.bump_version()
    return net


# psi


def test_psi_thin_plate_values():
    assert ntps.psi(1.0) == 0.0
    assert ntps.psi(0.0) == 0.0
    assert ntps.psi(np.e) == pytest.approx(np.e**2, rel=1e-12)


def test_psi_cubic():
    assert ntps.psi(2.0, "cubic") == 8.0
    assert ntps.psi(0.0, "cubic") == 0.0


def test_psi_rejects_negative():
    with pytest.raises(InvalidInputError):
        ntps.psi(-0.5)
    with pytest.raises(InvalidInputError):
        ntps.psi(np.array([0.1, -0.1]))


def test_psi_guard_tiny_argument():
    assert ntps.psi(1e-31) == 0.0


# embedding


def test_embed_deterministic(rng):
    net = tiny_net(rng)
    p = np.array([0.1, -0.2, 0.3])
    np.testing.assert_array_equal(ntps.embed(net, p), ntps.embed(net, p))


def test_embed_batch_equals_per_point(rng):
    # same code path; BLAS kernels for different batch shapes may differ in
    # the last ulp, so equality is asserted at near-machine tolerance
    net = tiny_net(rng)
    pts = rng.normal(size=(5, 3))
    batch = ntps.embed(net, pts)
    for i in range(5):
        np.testing.assert_allclose(batch[i], ntps.embed(net, pts[i]), rtol=1e-13, atol=1e-16)


def test_embed_lipschitz_bound(rng):
    net = tiny_net(rng)
    # product of layer spectral norms bounds the embedding's Lipschitz
    # constant (softplus slope <= 1)
    bound = 1.0
    for layer in net.mlp1.layers:
        bound *= np.linalg.norm(layer.weight, 2)
    x = rng.normal(size=(20, 3)) * 0.2
    dx = 1e-8
    y1 = ntps.embed(net, x)
    y2 = ntps.embed(net, x + dx)
    change = np.linalg.norm(y2 - y1, axis=1).max()
    assert change <= bound * dx * np.sqrt(3) * (1 + 1e-6)


# interpolation


def test_tps_zero_weights(rng):
    net = tiny_net(rng)
    net.c_weights[:] = 0.0
    net.bump_version()
    net.refresh_features()
    q = ntps.embed(net, rng.normal(size=(4, 3)))
    np.testing.assert_array_equal(ntps.tps_interpolate(net, q), np.zeros(4))


def test_tps_control_point_excludes_own_term(rng):
    net = tiny_net(rng)
    feats = net.refresh_features()
    j = 2
    d2 = ((feats - feats[j]) ** 2).sum(axis=1)
    expected = sum(
        net.c_weights[i] * ntps.psi(d2[i]) for i in range(len(net.c_weights)) if i != j
    )
    got = ntps.tps_interpolate(net, feats[j])
    assert got == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_tps_hand_computed_two_controls():
    net = ntps.TpsNet(
        control_points=np.zeros((2, 3)),
        mlp1=None,
        c_weights=np.array([2.0, -3.0]),
        mlp3=None,
    )
    # identity embedding: features are the raw coordinates
    net.control_points[0] = [0.0, 0.0, 0.0]
    net.control_points[1] = [1.0, 0.0, 0.0]
    net.refresh_features()
    q = np.array([0.5, 0.0, 0.0])
    # both controls sit at squared distance 0.25 from q:
    # d_TPS = (2 - 3) * psi(0.25) = -(0.25^2 ln 0.25)
    expected = -(0.25**2) * np.log(0.25)
    assert ntps.tps_interpolate(net, q) == pytest.approx(expected, rel=1e-12)


def test_tps_linear_in_c(rng):
    net = tiny_net(rng)
    net.refresh_features()
    q = ntps.embed(net, rng.normal(size=(7, 3)))
    base = ntps.tps_interpolate(net, q)
    net.c_weights *= 2.0
    net.bump_version()
    net.refresh_features()
    np.testing.assert_allclose(ntps.tps_interpolate(net, q), 2.0 * base, rtol=1e-12)


def test_stale_cache_raises(rng):
    net = tiny_net(rng)
    net.refresh_features()
    q = ntps.embed(net, np.zeros(3))
    net.mlp1.layers[0].weight *= 1.1
    net.bump_version()
    with pytest.raises(InternalConsistencyError):
        ntps.tps_interpolate(net, q)


def test_control_order_invariance(rng):
    net = tiny_net(rng)
    q = rng.normal(size=(5, 3))
    base = ntps.sdf_eval(net, q)
    perm = rng.permutation(len(net.control_points))
    net2 = ntps.TpsNet(
        net.control_points[perm], net.mlp1, net.c_weights[perm], net.mlp3,
        basis=net.basis, squared_arg=net.squared_arg,
    )
    np.testing.assert_allclose(ntps.sdf_eval(net2, q), base, rtol=1e-10, atol=1e-14)


# the full field


def test_sdf_zeroed_output_layers(rng):
    net = tiny_net(rng)
    net.c_weights[:] = 0.0
    net.mlp3.layers[-1].weight[:] = 0.0
    net.mlp3.layers[-1].bias[:] = 0.0
    net.bump_version()
    q = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(ntps.sdf_eval(net, q), np.zeros(6))


def test_sdf_surface_point_same_code_path(rng):
    net = tiny_net(rng)
    p = net.control_points[3]
    batched = ntps.sdf_eval(net, np.stack([p, p + 0.1]))
    assert ntps.sdf_eval(net, p) == pytest.approx(batched[0], rel=1e-12, abs=1e-18)


def test_sdf_graph_matches_eval(rng):
    net = tiny_net(rng)
    q = rng.normal(size=(9, 3)) * 0.4
    pv = ntps.wrap_tps_params(net)
    graph_vals = ntps.sdf_graph(net, ad.leaf(q), pv).value
    np.testing.assert_allclose(graph_vals, ntps.sdf_eval(net, q), rtol=1e-12, atol=1e-15)


def test_sdf_query_gradient_matches_fd(rng):
    net = tiny_net(rng)
    q = rng.normal(size=(8, 3)) * 0.4
    pv = ntps.wrap_tps_params(net)
    q_var = ad.leaf(q)
    f = ntps.sdf_graph(net, q_var, pv)
    (grad,) = ad.backward(ad.vsum(f), [q_var])

    def loss():
        return float(np.sum(ntps.sdf_eval(net, q)))

    assert max_rel_err([grad.value], fd_gradients(loss, [q])) < 1e-6


def test_sdf_parameter_gradients_match_fd(rng):
    net = tiny_net(rng, n_ctrl=5, feature_dim=6, layers=3)
    q = rng.normal(size=(4, 3)) * 0.4
    pv = ntps.wrap_tps_params(net)
    f = ntps.sdf_graph(net, ad.constant(q), pv)
    loss_node = ad.vsum(ad.mul(f, f))
    analytic = [g.value.copy() for g in ad.backward(loss_node, pv.all_vars())]
    arrays = ntps.tps_param_arrays(net)

    def loss():
        net.bump_version()
        return float(np.sum(ntps.sdf_eval(net, q) ** 2))

    assert max_rel_err(analytic, fd_gradients(loss, arrays)) < 1e-5


def test_no_feature_ablation_valid(rng):
    net = tiny_net(rng, use_feature=False)
    assert net.mlp1 is None
    vals = ntps.sdf_eval(net, rng.normal(size=(5, 3)))
    assert np.all(np.isfinite(vals))


def test_no_disp_ablation(rng):
    net = tiny_net(rng, use_displacement=False)
    net.refresh_features()
    q = rng.normal(size=(4, 3))
    qf = ntps.embed(net, q)
    np.testing.assert_allclose(
        ntps.sdf_eval(net, q), ntps.tps_interpolate(net, qf), rtol=1e-12, atol=1e-15
    )


def test_cubic_basis_trains_shape(rng):
    net = tiny_net(rng, basis="cubic")
    vals = ntps.sdf_eval(net, rng.normal(size=(5, 3)))
    assert np.all(np.isfinite(vals))


def test_flip_sign_is_exact(rng):
    net = tiny_net(rng)
    q = rng.normal(size=(10, 3))
    before = ntps.sdf_eval(net, q)
    ntps.flip_sign(net)
    np.testing.assert_array_equal(ntps.sdf_eval(net, q), -before)


# classical solve (oracle for the basis machinery)


def test_classic_solve_constant(rng):
    pos = rng.normal(size=(8, 2))
    w = ntps.classic_tps_solve(pos, np.full(8, 3.5))
    vals = ntps.classic_tps_eval(pos, w, pos)
    np.testing.assert_allclose(vals, 3.5, rtol=1e-8)


@pytest.mark.parametrize("kind", ["thin_plate", "cubic"])
def test_classic_solve_reproduces_nodes(rng, kind):
    pos = rng.normal(size=(10, 2))
    vals = rng.normal(size=10)
    w = ntps.classic_tps_solve(pos, vals, kind)
    got = ntps.classic_tps_eval(pos, w, pos, kind)
    assert np.abs(got - vals).max() < 1e-8


def test_classic_solve_rejects_duplicates(rng):
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(InvalidInputError):
        ntps.classic_tps_solve(pos, np.zeros(3))
