"""Dense-layer networks over the autodiff engine.

``MlpParams`` is the unit of optimization: plain float64 arrays plus an
activation tag per layer.  Graph-building forwards are used during training;
``mlp_values`` is the identical arithmetic on raw arrays for bulk evaluation
(grid extraction), where node bookkeeping would be dead weight.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, NumericalError

CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("relu", "softplus", "linear")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise InvalidInputError("layer weight must be 2-D and bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise InvalidInputError("bias length must match weight rows")
        if self.activation not in _ACTIVATIONS:
            raise InvalidInputError(f"unknown activation '{self.activation}'")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise InvalidInputError("layer parameters must be finite")


@dataclass
class MlpParams:
    """Weights of one multilayer perceptron."""

    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise InvalidInputError(
                    f"layer dims do not chain: {a.weight.shape} -> {b.weight.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list: weight, bias per layer, in order."""
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


def init_mlp(dims, hidden_activation, rng, final_scale=None) -> MlpParams:
    """Kaiming-style uniform fan-in init; final layer linear.

    ``final_scale`` overrides the last layer's weight scale (near-flat SDF
    heads use 1e-4) and zeroes its bias.  Hidden biases start at zero.
    """
    layers = []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        last = i == n_layers - 1
        bound = np.sqrt(6.0 / fan_in)
        if last and final_scale is not None:
            bound = final_scale
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append(Layer(w, b, "linear" if last else hidden_activation))
    return MlpParams(layers)


def wrap_params(params: MlpParams) -> list[ad.Var]:
    """One leaf Var per parameter array, aligned with ``params.arrays()``."""
    return [ad.leaf(a, tag="param") for a in params.arrays()]


def _activation_node(x: ad.Var, kind: str) -> ad.Var:
    if kind == "relu":
        return ad.relu(x)
    if kind == "softplus":
        return ad.softplus(x, beta=100.0)
    return x


def mlp_forward(params: MlpParams, x, param_vars: list[ad.Var] | None = None) -> ad.Var:
    """Forward pass building graph nodes.

    ``x`` may be a Var or an array of shape (n, in_dim) or (in_dim,).
    ``param_vars`` supplies the parameter leaves when gradients w.r.t. the
    parameters are wanted; otherwise the stored arrays are used as constants.
    """
    squeeze = False
    if not isinstance(x, ad.Var):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
            squeeze = True
        x = ad.constant(x, tag="input")
    if x.value.ndim != 2 or x.value.shape[1] != params.in_dim:
        raise InvalidInputError(
            f"input dim {x.value.shape} does not match first layer ({params.in_dim})"
        )
    if param_vars is None:
        param_vars = [ad.constant(a) for a in params.arrays()]
    h = x
    for i, layer in enumerate(params.layers):
        w, b = param_vars[2 * i], param_vars[2 * i + 1]
        h = ad.add(ad.matmul(h, ad.transpose(w)), b)
        h = _activation_node(h, layer.activation)
    if squeeze:
        h = ad.reshape(h, (params.out_dim,))
    return h


def mlp_values(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Graph-free forward on raw arrays; same arithmetic as ``mlp_forward``."""
    h = np.asarray(x, dtype=np.float64)
    squeeze = h.ndim == 1
    if squeeze:
        h = h[None, :]
    if h.shape[1] != params.in_dim:
        raise InvalidInputError(
            f"input dim {h.shape} does not match first layer ({params.in_dim})"
        )
    for layer in params.layers:
        h = h @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            np.maximum(h, 0.0, out=h)
        elif layer.activation == "softplus":
            h = ad.softplus_values(h, 100.0)
    return h[0] if squeeze else h


def input_gradient(params: MlpParams, x, param_vars=None):
    """Gradient of a scalar-output network w.r.t. its input.

    Returns ``(grad_var, x_var, out_var)``; the gradient is recorded as graph
    nodes, so a later reverse pass can differentiate through it.  For batched
    input, rows are independent and the per-row gradients are returned
    stacked (gradient of the summed output).
    """
    if params.out_dim != 1:
        raise InvalidInputError("input_gradient requires a scalar-output network")
    if not isinstance(x, ad.Var):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        x = ad.leaf(x, tag="input")
    out = mlp_forward(params, x, param_vars)
    (grad,) = ad.backward(ad.vsum(out), [x])
    return grad, x, out


@dataclass
class GradientBundle:
    """Loss value plus parameter gradients mirroring the parameter arrays."""

    loss: float
    grads: list[np.ndarray]

    def __post_init__(self):
        if not np.isfinite(self.loss):
            raise NumericalError("loss is non-finite")
        for g in self.grads:
            if not np.all(np.isfinite(g)):
                raise NumericalError("gradient is non-finite")


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """First/second moment buffers for one flat parameter list."""

    def __init__(self, arrays, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]


def adam_step(arrays, grads, state: AdamState, lr: float):
    """Standard Adam update with bias correction, in place on ``arrays``."""
    if lr <= 0:
        raise InvalidInputError("learning rate must be positive")
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise InvalidInputError("parameter/gradient/state length mismatch")
    for a, g in zip(arrays, grads):
        if a.shape != g.shape:
            raise InvalidInputError(f"gradient shape {g.shape} != parameter shape {a.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError("NaN or Inf gradient in adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        a -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return arrays, state


# ---------------------------------------------------------------------------
# checkpointing
#
# A checkpoint is a zip of .npy payloads plus a JSON manifest carrying the
# version tag, layer shapes, and activation tags.  Arrays round-trip exactly.


def save_checkpoint(path, mlps: dict[str, MlpParams], extra: dict[str, np.ndarray] | None = None, meta: dict | None = None):
    manifest = {
        "version": CHECKPOINT_VERSION,
        "mlps": {
            name: {
                "shapes": [list(l.weight.shape) for l in p.layers],
                "activations": [l.activation for l in p.layers],
            }
            for name, p in mlps.items()
        },
        "extra": sorted(extra.keys()) if extra else [],
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode())
        for name, p in mlps.items():
            for i, layer in enumerate(p.layers):
                _write_npy(zf, f"{name}/w{i}.npy", layer.weight)
                _write_npy(zf, f"{name}/b{i}.npy", layer.bias)
        if extra:
            for key, arr in extra.items():
                _write_npy(zf, f"extra/{key}.npy", np.asarray(arr, dtype=np.float64))


def load_checkpoint(path):
    """Returns (mlps, extra, meta); inverse of ``save_checkpoint``."""
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(
                f"unsupported checkpoint version {manifest.get('version')!r}"
            )
        mlps = {}
        for name, info in manifest["mlps"].items():
            layers = []
            for i, act in enumerate(info["activations"]):
                w = _read_npy(zf, f"{name}/w{i}.npy")
                b = _read_npy(zf, f"{name}/b{i}.npy")
                if list(w.shape) != info["shapes"][i]:
                    raise InvalidInputError("checkpoint shape header mismatch")
                layers.append(Layer(w, b, act))
            mlps[name] = MlpParams(layers)
        extra = {key: _read_npy(zf, f"extra/{key}.npy") for key in manifest["extra"]}
    return mlps, extra, manifest["meta"]


def _write_entry(zf, name, payload: bytes):
    # fixed timestamp so identical parameters give byte-identical checkpoints
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def _write_npy(zf, name, arr):
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr))
    _write_entry(zf, name, buf.getvalue())


def _read_npy(zf, name):
    return np.load(io.BytesIO(zf.read(name)))
