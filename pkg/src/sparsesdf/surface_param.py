"""Chart network: 2-D unit-square samples mapped to points on the surface.

One five-layer MLP covers the whole shape as a single patch (the default);
the multi-patch variant shares the first three layers as a trunk and gives
each patch its own final-two-layer head.  Charts are resampled fresh every
iteration, once as the regulated set S (fit to the input cloud with a
squared-distance Chamfer loss) and once as the supervision set G consumed by
the field trainer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .errors import InvalidInputError
from .geometry import PointCloud, nearest_neighbor

SUPPORTED_PATCH_COUNTS = (1, 3, 5)
HIDDEN_WIDTH = 256

ROLE_S = "S_regulated"
ROLE_G = "G_supervision"


@dataclass
class ParamNet:
    """Shared trunk plus one head per patch; 5 dense layers end to end."""

    trunk: nets.MlpParams
    heads: list[nets.MlpParams]

    @property
    def patch_count(self) -> int:
        return len(self.heads)

    @property
    def out_dim(self) -> int:
        return self.heads[0].out_dim


@dataclass
class ChartSample:
    uv: np.ndarray  # (n, 2) in the unit square
    xyz: ad.Var  # (n, out_dim) mapped points (graph node)
    role: str


def build_param_net(rng, out_dim: int = 3, width: int = HIDDEN_WIDTH, patch_count: int = 1) -> ParamNet:
    if patch_count not in SUPPORTED_PATCH_COUNTS:
        raise InvalidInputError(
            f"patch_count must be one of {SUPPORTED_PATCH_COUNTS}, got {patch_count}"
        )
    trunk = nets.init_mlp([2, width, width, width], "relu", rng)
    # trunk layers all activate; the head's first layer does too
    for layer in trunk.layers:
        layer.activation = "relu"
    heads = [nets.init_mlp([width, width, out_dim], "relu", rng) for _ in range(patch_count)]
    return ParamNet(trunk, heads)


def param_net_arrays(net: ParamNet) -> list[np.ndarray]:
    out = list(net.trunk.arrays())
    for head in net.heads:
        out.extend(head.arrays())
    return out


@dataclass
class ParamNetVars:
    trunk: list[ad.Var]
    heads: list[list[ad.Var]]

    def all_vars(self) -> list[ad.Var]:
        out = list(self.trunk)
        for h in self.heads:
            out.extend(h)
        return out


def wrap_param_net(net: ParamNet) -> ParamNetVars:
    return ParamNetVars(
        nets.wrap_params(net.trunk), [nets.wrap_params(h) for h in net.heads]
    )


def sample_unit_square(n: int, rng) -> np.ndarray:
    """n i.i.d. uniform samples in [0, 1)^2."""
    if n < 1:
        raise InvalidInputError("sample count must be positive")
    return rng.random((n, 2))


def multi_patch_forward(net: ParamNet, uv_per_patch, pv: ParamNetVars | None = None) -> ad.Var:
    """Map per-patch uv batches to output points; patches concatenated in order."""
    if len(uv_per_patch) != net.patch_count:
        raise InvalidInputError(
            f"expected {net.patch_count} uv batches, got {len(uv_per_patch)}"
        )
    parts = []
    for k, uv in enumerate(uv_per_patch):
        h = nets.mlp_forward(net.trunk, np.asarray(uv, dtype=np.float64), pv.trunk if pv else None)
        parts.append(nets.mlp_forward(net.heads[k], h, pv.heads[k] if pv else None))
    return parts[0] if len(parts) == 1 else ad.concat_rows(parts)


def generate_chart(net: ParamNet, n: int, role: str, rng, pv: ParamNetVars | None = None, stop_grad: bool | None = None) -> ChartSample:
    """Fresh uv sample mapped through the net.

    G-role charts are wrapped in stop_gradient by default so field losses
    cannot reach the chart parameters; pass ``stop_grad=False`` to disable
    (the gradient-feedback ablation).
    """
    if role not in (ROLE_S, ROLE_G):
        raise InvalidInputError(f"unknown chart role '{role}'")
    uv = sample_unit_square(n, rng)
    per = np.array_split(np.arange(n), net.patch_count)
    xyz = multi_patch_forward(net, [uv[ix] for ix in per], pv)
    if stop_grad is None:
        stop_grad = role == ROLE_G
    if stop_grad:
        xyz = ad.stop_gradient(xyz)
    return ChartSample(uv=uv, xyz=xyz, role=role)


def chamfer_loss(chart: ChartSample, target: PointCloud) -> ad.Var:
    """Bidirectional squared-distance Chamfer between the chart and the cloud.

    (1/J) sum_s min_p ||s-p||^2 + (1/I) sum_p min_s ||p-s||^2, with the
    nearest matches recomputed here and held fixed within the step.
    """
    if chart.role != ROLE_S:
        raise InvalidInputError("chamfer_loss regulates S-role charts only")
    s_vals = chart.xyz.value
    if s_vals.shape[0] == 0 or len(target) == 0:
        raise InvalidInputError("chamfer_loss inputs must be non-empty")
    p = target.points
    idx_sp, _ = nearest_neighbor(s_vals, p)
    idx_ps, _ = nearest_neighbor(p, s_vals)

    d1 = ad.sub(chart.xyz, ad.constant(p[idx_sp]))
    term1 = ad.vmean(ad.vsum(ad.mul(d1, d1), axis=1))
    d2 = ad.sub(ad.gather_rows(chart.xyz, idx_ps), ad.constant(p))
    term2 = ad.vmean(ad.vsum(ad.mul(d2, d2), axis=1))
    return ad.add(term1, term2)
