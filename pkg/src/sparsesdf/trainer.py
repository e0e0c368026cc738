"""Joint optimization of the chart network and the signed-distance field.

Each iteration: sample fresh charts S (regulated against the input cloud)
and G (supervision targets, gradient-stopped), sample Gaussian queries around
the chart, pull each query along the field gradient by its signed distance,
and penalize the pulled location against its nearest point in G union P with
a confidence weight that decays with the target's distance from the input
cloud.  The supervision expectation over charts is realized stochastically:
G is resampled every iteration, never averaged.

Loss = L_CD + alpha * L_Surf + beta * L_Pull with alpha = beta = 0.1 and
confidence decay delta = 50.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import nets
from . import neural_tps as ntps
from . import surface_param as sp
from .errors import InvalidInputError, TrainingError
from .geometry import PointCloud, local_sigma, nearest_neighbor, sample_gaussian_queries

PULL_EPS = 1e-12


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    delta: float = 50.0
    iterations: int = 2000
    lr: float = 1e-3
    seed: int = 0
    queries_per_iter: int = 1000
    sigma_k: int = 50
    query_anchor: str = "S"  # or "P"
    s_count: int = 2000
    g_count: int = 5000
    feature_dim: int = 128
    mlp1_layers: int = 10
    param_width: int = 128
    patch_count: int = 1
    basis_kind: str = "thin_plate"
    tps_squared_arg: bool = True
    # ablation switches
    no_cd: bool = False
    no_surf: bool = False
    grad_diff: bool = False
    separate: bool = False
    separate_warmup: int | None = None
    no_feature: bool = False
    no_disp: bool = False
    # field initialization: fit a centered-sphere distance guess first, so
    # optimization starts in the signed basin (the pull and surface losses
    # are both also minimized by the unsigned |d| field, and a random init
    # falls into either basin by luck)
    pretrain_iterations: int = 300
    pretrain_queries: int = 512
    # bookkeeping
    log_every: int = 50
    canonicalize_sign: bool = True
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidInputError("alpha and beta must be non-negative")
        if self.delta <= 0:
            raise InvalidInputError("delta must be positive")
        if self.iterations < 1:
            raise InvalidInputError("iterations must be positive")
        if self.lr <= 0:
            raise InvalidInputError("lr must be positive")
        if self.query_anchor not in ("S", "P"):
            raise InvalidInputError("query_anchor must be 'S' or 'P'")
        if self.patch_count not in sp.SUPPORTED_PATCH_COUNTS:
            raise InvalidInputError(f"patch_count must be one of {sp.SUPPORTED_PATCH_COUNTS}")
        if self.basis_kind not in ntps.BASIS_KINDS:
            raise InvalidInputError(f"basis_kind must be one of {ntps.BASIS_KINDS}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    param_net: sp.ParamNet
    tps_net: ntps.TpsNet
    config: TrainConfig
    iteration: int = 0
    history: list = field(default_factory=list)
    sign_flipped: bool = False


# ---------------------------------------------------------------------------
# pull operation


def pull_graph(q: ad.Var, f: ad.Var, grad: ad.Var) -> ad.Var:
    """q' = q - f * grad / ||grad||, rows independent; eps under the root."""
    norm = ad.vsqrt(ad.add(ad.vsum(ad.mul(grad, grad), axis=1, keepdims=True), ad.constant(PULL_EPS)))
    f_col = ad.reshape(f, (f.value.shape[0], 1))
    return ad.sub(q, ad.mul(f_col, ad.div(grad, norm)))


def pull(q, f, grad) -> np.ndarray:
    """Value-level pull of query rows onto the current zero level set."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    f = np.atleast_1d(np.asarray(f, dtype=np.float64))
    grad = np.atleast_2d(np.asarray(grad, dtype=np.float64))
    raw = np.linalg.norm(grad, axis=1)
    if np.any(raw <= PULL_EPS):
        raise InvalidInputError("pull requires gradient norms above 1e-12")
    out = pull_graph(ad.constant(q), ad.constant(f), ad.constant(grad)).value
    return out[0] if out.shape[0] == 1 and q.shape[0] == 1 else out


def confidence_weight(g, cloud: PointCloud, delta: float) -> np.ndarray:
    """w = exp(-delta * ||g - nearest point of g in the cloud||^2), in (0, 1]."""
    g = np.atleast_2d(np.asarray(g, dtype=np.float64))
    _, dist = nearest_neighbor(g, cloud.points)
    w = np.exp(-delta * dist**2)
    return w if w.shape[0] > 1 else float(w[0])


# ---------------------------------------------------------------------------
# loss terms


def loss_surf(net: ntps.TpsNet, pv: ntps.TpsParamVars, points: np.ndarray) -> ad.Var:
    """Sum of squared field values at the input points (their zero-level constraint)."""
    f = ntps.sdf_graph(net, ad.constant(points, tag="surf_pts"), pv)
    return ad.vsum(ad.mul(f, f))


def loss_pull(
    net: ntps.TpsNet,
    pv: ntps.TpsParamVars,
    queries: np.ndarray,
    targets_node: ad.Var,
    target_values: np.ndarray,
    n_non_p_targets: int,
    delta: float,
    cloud: PointCloud,
):
    """Confidence-weighted pull loss against the target union.

    ``targets_node`` rows [0, n_non_p_targets) are chart points (their
    confidence decays with distance from the cloud); remaining rows are the
    sparse input points themselves, which carry weight exactly 1.  Queries
    with near-zero field gradient are excluded from the mean and counted in
    the returned diagnostics.
    """
    q_var = ad.leaf(queries, tag="queries")
    f = ntps.sdf_graph(net, q_var, pv)
    (grad,) = ad.backward(ad.vsum(f), [q_var])

    raw_norm = np.linalg.norm(grad.value, axis=1)
    valid = raw_norm > PULL_EPS
    n_total = queries.shape[0]
    n_valid = int(valid.sum())
    diag = {"skipped": n_total - n_valid, "total": n_total}
    if n_valid == 0:
        raise TrainingError(f"all {n_total} queries skipped (degenerate field gradient)")

    sel = np.nonzero(valid)[0]
    q_v = ad.gather_rows(q_var, sel)
    f_v = ad.gather_rows(f, sel)
    g_v = ad.gather_rows(grad, sel)
    pulled = pull_graph(q_v, f_v, g_v)

    # match on the pre-pull query location, frozen within the step
    idx, _ = nearest_neighbor(queries[sel], target_values)
    matched = ad.gather_rows(targets_node, idx)

    # Confidence of each matched target: exp(-delta * d(g, cloud)^2) for chart
    # points, exactly 1 for matches that are input points themselves.  The
    # weight is a graph node because g is: when the gradient stop on the chart
    # is disabled, feedback flows through the weight as well.
    p_idx, _ = nearest_neighbor(target_values[idx], cloud.points)
    dgp = ad.sub(matched, ad.constant(cloud.points[p_idx]))
    w_chart = ad.vexp(ad.mul(ad.constant(-delta), ad.vsum(ad.mul(dgp, dgp), axis=1)))
    from_p = (idx >= n_non_p_targets)
    w = ad.where_const(from_p, ad.constant(np.ones(n_valid)), w_chart)

    d = ad.sub(pulled, matched)
    per_query = ad.vsum(ad.mul(d, d), axis=1)
    loss = ad.vmean(ad.mul(w, per_query))
    return loss, diag


def total_loss(cd: ad.Var | None, surf: ad.Var | None, pull_term: ad.Var | None, config: TrainConfig):
    """Weighted sum; returns (loss node, per-term float breakdown)."""
    zero = ad.constant(0.0)
    cd = cd if cd is not None else zero
    surf = surf if surf is not None else zero
    pull_term = pull_term if pull_term is not None else zero
    total = ad.add(
        cd,
        ad.add(
            ad.mul(ad.constant(config.alpha), surf),
            ad.mul(ad.constant(config.beta), pull_term),
        ),
    )
    breakdown = {
        "cd": cd.item(),
        "surf": surf.item(),
        "pull": pull_term.item(),
        "total": total.item(),
    }
    return total, breakdown


# ---------------------------------------------------------------------------
# training loop


def _lr_at(config: TrainConfig, iteration: int) -> float:
    lr = config.lr
    if iteration >= math.floor(0.6 * config.iterations):
        lr *= 0.5
    if iteration >= math.floor(0.8 * config.iterations):
        lr *= 0.5
    return lr


def _pick_anchors(anchors: np.ndarray, count: int, rng) -> np.ndarray:
    n = anchors.shape[0]
    idx = rng.choice(n, size=count, replace=count > n)
    return idx


def pretrain_sphere_guess(tps_net, p_pts: np.ndarray, config: TrainConfig, rng):
    """Regress the fresh field toward ||q - centroid|| - mean point radius.

    A couple hundred cheap steps anchor the sign convention (negative
    inside) and give the far field its outward growth; the main loop then
    reshapes geometry and topology freely.
    """
    if config.pretrain_iterations < 1:
        return
    center = p_pts.mean(axis=0)
    radius = np.linalg.norm(p_pts - center, axis=1).mean()
    span = p_pts.max(axis=0) - p_pts.min(axis=0)
    lo = p_pts.min(axis=0) - 0.2 * span
    hi = p_pts.max(axis=0) + 0.2 * span
    theta_arrays = ntps.tps_param_arrays(tps_net)
    adam = nets.AdamState(theta_arrays)
    for _ in range(config.pretrain_iterations):
        q = rng.uniform(lo, hi, size=(config.pretrain_queries, p_pts.shape[1]))
        target = np.linalg.norm(q - center, axis=1) - radius
        pv = ntps.wrap_tps_params(tps_net)
        f = ntps.sdf_graph(tps_net, ad.constant(q), pv)
        d = ad.sub(f, ad.constant(target))
        loss = ad.vmean(ad.mul(d, d))
        grads = [g.value for g in ad.backward(loss, pv.all_vars())]
        nets.adam_step(theta_arrays, grads, adam, config.lr)
        tps_net.bump_version()


def train(cloud: PointCloud, config: TrainConfig, log_path=None) -> TrainState:
    """Run the full optimization on one (normalized) point cloud."""
    if len(cloud) < 3:
        raise InvalidInputError("training requires at least 3 points")
    rng = np.random.default_rng(config.seed)
    p_pts = cloud.points
    dim = cloud.dim

    param_net = sp.build_param_net(
        rng, out_dim=dim, width=config.param_width, patch_count=config.patch_count
    )
    tps_net = ntps.build_tps_net(
        p_pts,
        rng,
        feature_dim=config.feature_dim,
        mlp1_layers=config.mlp1_layers,
        basis=config.basis_kind,
        use_feature=not config.no_feature,
        use_displacement=not config.no_disp,
        squared_arg=config.tps_squared_arg,
    )
    pretrain_sphere_guess(tps_net, p_pts, config, rng)
    phi_arrays = sp.param_net_arrays(param_net)
    theta_arrays = ntps.tps_param_arrays(tps_net)
    adam_phi = nets.AdamState(phi_arrays)
    adam_theta = nets.AdamState(theta_arrays)

    state = TrainState(param_net, tps_net, config)
    warmup = config.separate_warmup if config.separate_warmup is not None else config.iterations // 2
    fixed_g: np.ndarray | None = None

    log_file = open(log_path, "w") if log_path else None
    if log_file:
        log_file.write("iter\tcd\tsurf\tpull\ttotal\tskip_rate\n")

    try:
        for it in range(config.iterations):
            lr = _lr_at(config, it)
            separate_main = config.separate and it >= warmup
            if config.separate and it == warmup:
                # freeze the chart net; a single fixed target set from here on
                pv_phi = sp.wrap_param_net(param_net)
                g_chart = sp.generate_chart(param_net, config.g_count, sp.ROLE_G, rng, pv_phi)
                fixed_g = g_chart.xyz.value.copy()

            pv_phi = sp.wrap_param_net(param_net)
            pv_theta = ntps.wrap_tps_params(tps_net)

            cd_node = None
            s_chart = None
            train_phi = not config.no_cd and not separate_main
            if train_phi:
                s_chart = sp.generate_chart(param_net, config.s_count, sp.ROLE_S, rng, pv_phi)
                cd_node = sp.chamfer_loss(s_chart, cloud)

            surf_node = None
            pull_node = None
            diag = {"skipped": 0, "total": 0}
            train_theta = not (config.separate and not separate_main)
            if train_theta:
                if config.no_cd:
                    targets_node = ad.constant(p_pts, tag="targets")
                    target_values = p_pts
                    n_chart_targets = 0
                    anchors = p_pts
                elif separate_main:
                    targets_node = ad.concat_rows(
                        [ad.constant(fixed_g, tag="fixed_g"), ad.constant(p_pts)]
                    )
                    target_values = np.concatenate([fixed_g, p_pts], axis=0)
                    n_chart_targets = fixed_g.shape[0]
                    anchors = fixed_g
                else:
                    g_chart = sp.generate_chart(
                        param_net,
                        config.g_count,
                        sp.ROLE_G,
                        rng,
                        pv_phi,
                        stop_grad=not config.grad_diff,
                    )
                    targets_node = ad.concat_rows([g_chart.xyz, ad.constant(p_pts)])
                    target_values = np.concatenate([g_chart.xyz.value, p_pts], axis=0)
                    n_chart_targets = config.g_count
                    anchors = s_chart.xyz.value if config.query_anchor == "S" and s_chart is not None else p_pts

                k = min(config.sigma_k, anchors.shape[0] - 1)
                sigmas = local_sigma(anchors, k)
                sel = _pick_anchors(anchors, config.queries_per_iter, rng)
                queries = sample_gaussian_queries(anchors[sel], sigmas[sel], 1, rng)

                if not config.no_surf:
                    surf_node = loss_surf(tps_net, pv_theta, p_pts)
                pull_node, diag = loss_pull(
                    tps_net,
                    pv_theta,
                    queries,
                    targets_node,
                    target_values,
                    n_chart_targets,
                    config.delta,
                    cloud,
                )

            total, breakdown = total_loss(cd_node, surf_node, pull_node, config)
            breakdown["iter"] = it
            breakdown["skip_rate"] = diag["skipped"] / max(diag["total"], 1)
            state.history.append(breakdown)

            if not np.isfinite(breakdown["total"]) or breakdown["total"] > config.divergence_limit:
                raise TrainingError(
                    f"divergence at iteration {it}: total={breakdown['total']}",
                    history=state.history,
                )

            wrt = []
            if train_phi or config.grad_diff:
                wrt.extend(pv_phi.all_vars())
            if train_theta:
                wrt.extend(pv_theta.all_vars())
            grad_vars = ad.backward(total, wrt)
            grads = [g.value for g in grad_vars]

            ofs = 0
            if train_phi or config.grad_diff:
                n_phi = len(phi_arrays)
                nets.adam_step(phi_arrays, grads[:n_phi], adam_phi, lr)
                ofs = n_phi
            if train_theta:
                nets.adam_step(theta_arrays, grads[ofs:], adam_theta, lr)
                tps_net.bump_version()

            state.iteration = it + 1
            if log_file and (it % config.log_every == 0 or it == config.iterations - 1):
                log_file.write(
                    f"{it}\t{breakdown['cd']:.6e}\t{breakdown['surf']:.6e}\t"
                    f"{breakdown['pull']:.6e}\t{breakdown['total']:.6e}\t"
                    f"{breakdown['skip_rate']:.4f}\n"
                )
    finally:
        if log_file:
            log_file.close()

    if config.canonicalize_sign:
        state.sign_flipped = canonicalize_field_sign(tps_net, p_pts)
    return state


def canonicalize_field_sign(net: ntps.TpsNet, points: np.ndarray, pad: float = 0.1) -> bool:
    """Make the far field positive (outside convention).

    The training objective is invariant under a global sign flip of the
    field, so the realized sign is seed luck.  Probing the padded bounding
    box corners (outside any closed shape fit inside it) and flipping the
    output layer when their mean is negative pins the convention exactly.
    """
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = hi - lo
    lo = lo - pad * span
    hi = hi + pad * span
    dim = points.shape[1]
    corners = np.array(
        [[(hi if (i >> k) & 1 else lo)[k] for k in range(dim)] for i in range(2**dim)]
    )
    vals = np.atleast_1d(ntps.sdf_eval(net, corners))
    if vals.mean() < 0.0:
        ntps.flip_sign(net)
        return True
    return False
