"""Minimal reverse-mode differentiation over float64 numpy arrays.

Nodes hold whole arrays, so a training step builds a graph of a few hundred
nodes whose cost is dominated by the underlying BLAS calls.  Every op's
reverse rule is itself expressed with these ops: the cotangents returned by
``backward`` are ordinary graph nodes, and running ``backward`` again on a
scalar function of them yields exact second-order derivatives.  That is the
property the query-pulling loss relies on, since it differentiates a loss
that already contains an input gradient.

Only what dense-layer networks need is provided: elementwise arithmetic,
matmul, reductions, row gather/scatter, and a handful of activation /
radial-basis primitives with hand-written derivative chains.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, NumericalError

__all__ = [
    "Var",
    "as_var",
    "constant",
    "leaf",
    "stop_gradient",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_const",
    "vexp",
    "vlog",
    "vsqrt",
    "matmul",
    "transpose",
    "reshape",
    "broadcast_to",
    "vsum",
    "vmean",
    "gather_rows",
    "scatter_rows",
    "concat_rows",
    "where_const",
    "relu",
    "softplus",
    "sigmoid",
    "rbf_thin_plate",
    "rbf_cubic",
]


class Var:
    """One node of the compute graph: a value plus its reverse rule."""

    __slots__ = ("value", "parents", "vjp", "tag")

    def __init__(self, value, parents=(), vjp=None, tag="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents: tuple[Var, ...] = parents
        # vjp(cot, need) -> tuple aligned with parents; entries may be None
        # where need[i] is False.
        self.vjp: Callable | None = vjp
        self.tag = tag

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    # Operator sugar; scalars and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, as_var(other))

    def __radd__(self, other):
        return add(as_var(other), self)

    def __sub__(self, other):
        return sub(self, as_var(other))

    def __rsub__(self, other):
        return sub(as_var(other), self)

    def __mul__(self, other):
        return mul(self, as_var(other))

    def __rmul__(self, other):
        return mul(as_var(other), self)

    def __truediv__(self, other):
        return div(self, as_var(other))

    def __rtruediv__(self, other):
        return div(as_var(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_var(other))

    def __repr__(self):
        return f"Var({self.tag}, shape={self.value.shape})"


def constant(value, tag="const") -> Var:
    return Var(value, tag=tag)


def leaf(value, tag="param") -> Var:
    """A differentiable leaf (parameter or watched input)."""
    return Var(value, tag=tag)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else constant(x)


def stop_gradient(x: Var) -> Var:
    """Pass the value through; contribute exactly zero to the reverse pass.

    The returned node has no parents, so upstream nodes are never visited:
    the cut is structural, not a multiplication by zero.
    """
    return Var(x.value, tag="stop_gradient")


# ---------------------------------------------------------------------------
# broadcasting helper


def _unbroadcast(cot: Var, shape: tuple) -> Var:
    """Reduce a cotangent back to ``shape`` after numpy broadcasting."""
    extra = cot.value.ndim - len(shape)
    if extra > 0:
        cot = vsum(cot, axis=tuple(range(extra)))
    axes = tuple(
        i for i, s in enumerate(shape) if s == 1 and cot.value.shape[i] != 1
    )
    if axes:
        cot = vsum(cot, axis=axes, keepdims=True)
    if cot.value.shape != shape:
        cot = reshape(cot, shape)
    return cot


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Var, b: Var) -> Var:
    out = Var(a.value + b.value, (a, b), tag="add")

    def vjp(cot, need):
        ga = _unbroadcast(cot, a.value.shape) if need[0] else None
        gb = _unbroadcast(cot, b.value.shape) if need[1] else None
        return ga, gb

    out.vjp = vjp
    return out


def sub(a: Var, b: Var) -> Var:
    out = Var(a.value - b.value, (a, b), tag="sub")

    def vjp(cot, need):
        ga = _unbroadcast(cot, a.value.shape) if need[0] else None
        gb = _unbroadcast(neg(cot), b.value.shape) if need[1] else None
        return ga, gb

    out.vjp = vjp
    return out


def neg(a: Var) -> Var:
    out = Var(-a.value, (a,), tag="neg")
    out.vjp = lambda cot, need: (neg(cot),)
    return out


def mul(a: Var, b: Var) -> Var:
    out = Var(a.value * b.value, (a, b), tag="mul")

    def vjp(cot, need):
        ga = _unbroadcast(mul(cot, b), a.value.shape) if need[0] else None
        gb = _unbroadcast(mul(cot, a), b.value.shape) if need[1] else None
        return ga, gb

    out.vjp = vjp
    return out


def div(a: Var, b: Var) -> Var:
    out = Var(a.value / b.value, (a, b), tag="div")

    def vjp(cot, need):
        ga = _unbroadcast(div(cot, b), a.value.shape) if need[0] else None
        gb = None
        if need[1]:
            gb = _unbroadcast(neg(div(mul(cot, a), mul(b, b))), b.value.shape)
        return ga, gb

    out.vjp = vjp
    return out


def pow_const(a: Var, p: float) -> Var:
    """a ** p for a constant exponent."""
    out = Var(a.value**p, (a,), tag=f"pow{p}")

    def vjp(cot, need):
        return (mul(cot, mul(constant(p), pow_const(a, p - 1.0))),)

    out.vjp = vjp
    return out


def vexp(a: Var) -> Var:
    out = Var(np.exp(a.value), (a,), tag="exp")
    out.vjp = lambda cot, need: (mul(cot, out),)
    return out


def vlog(a: Var) -> Var:
    out = Var(np.log(a.value), (a,), tag="log")
    out.vjp = lambda cot, need: (div(cot, a),)
    return out


def vsqrt(a: Var) -> Var:
    out = Var(np.sqrt(a.value), (a,), tag="sqrt")
    out.vjp = lambda cot, need: (div(cot, mul(constant(2.0), out)),)
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Var, b: Var) -> Var:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise InvalidInputError("matmul supports 2-D operands only")
    out = Var(a.value @ b.value, (a, b), tag="matmul")

    def vjp(cot, need):
        ga = matmul(cot, transpose(b)) if need[0] else None
        gb = matmul(transpose(a), cot) if need[1] else None
        return ga, gb

    out.vjp = vjp
    return out


def transpose(a: Var) -> Var:
    out = Var(a.value.T, (a,), tag="T")
    out.vjp = lambda cot, need: (transpose(cot),)
    return out


def reshape(a: Var, shape) -> Var:
    shape = tuple(shape)
    out = Var(a.value.reshape(shape), (a,), tag="reshape")
    out.vjp = lambda cot, need: (reshape(cot, a.value.shape),)
    return out


def broadcast_to(a: Var, shape) -> Var:
    # read-only broadcast view; engine ops never mutate values
    shape = tuple(shape)
    out = Var(np.broadcast_to(a.value, shape), (a,), tag="bcast")
    out.vjp = lambda cot, need: (_unbroadcast(cot, a.value.shape),)
    return out


def vsum(a: Var, axis=None, keepdims=False) -> Var:
    out = Var(a.value.sum(axis=axis, keepdims=keepdims), (a,), tag="sum")

    def vjp(cot, need):
        c = cot
        if not keepdims and axis is not None:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            kshape = list(a.value.shape)
            for ax in axes:
                kshape[ax] = 1
            c = reshape(c, kshape)
        elif not keepdims and axis is None:
            c = reshape(c, (1,) * a.value.ndim)
        return (broadcast_to(c, a.value.shape),)

    out.vjp = vjp
    return out


def vmean(a: Var, axis=None, keepdims=False) -> Var:
    n = a.value.size if axis is None else np.prod(
        [a.value.shape[ax] for ax in ((axis,) if isinstance(axis, int) else axis)]
    )
    return mul(vsum(a, axis=axis, keepdims=keepdims), constant(1.0 / float(n)))


def gather_rows(a: Var, idx: np.ndarray) -> Var:
    """Select rows by a constant integer index array."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(a.value[idx], (a,), tag="gather")
    out.vjp = lambda cot, need: (scatter_rows(cot, idx, a.value.shape[0]),)
    return out


def scatter_rows(c: Var, idx: np.ndarray, n_rows: int) -> Var:
    """Sum rows of ``c`` into an ``n_rows``-row array at positions ``idx``."""
    idx = np.asarray(idx, dtype=np.intp)
    val = np.zeros((n_rows,) + c.value.shape[1:], dtype=np.float64)
    np.add.at(val, idx, c.value)
    out = Var(val, (c,), tag="scatter")
    out.vjp = lambda cot, need: (gather_rows(cot, idx),)
    return out


def concat_rows(parts: Sequence[Var]) -> Var:
    parts = tuple(parts)
    out = Var(np.concatenate([p.value for p in parts], axis=0), parts, tag="concat")
    offsets = np.cumsum([0] + [p.value.shape[0] for p in parts])

    def vjp(cot, need):
        grads = []
        for i, p in enumerate(parts):
            if need[i]:
                grads.append(gather_rows(cot, np.arange(offsets[i], offsets[i + 1])))
            else:
                grads.append(None)
        return tuple(grads)

    out.vjp = vjp
    return out


def where_const(mask: np.ndarray, a: Var, b: Var) -> Var:
    """Select between two nodes with a constant boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    out = Var(np.where(mask, a.value, b.value), (a, b), tag="where")
    fmask = mask.astype(np.float64)

    def vjp(cot, need):
        ga = _unbroadcast(mul(cot, constant(fmask)), a.value.shape) if need[0] else None
        gb = _unbroadcast(mul(cot, constant(1.0 - fmask)), b.value.shape) if need[1] else None
        return ga, gb

    out.vjp = vjp
    return out


# ---------------------------------------------------------------------------
# activations


def relu(a: Var) -> Var:
    out = Var(np.maximum(a.value, 0.0), (a,), tag="relu")
    mask_holder: list = []

    def vjp(cot, need):
        if not mask_holder:
            mask_holder.append(constant((a.value > 0.0).astype(np.float64)))
        return (mul(cot, mask_holder[0]),)

    out.vjp = vjp
    return out


def _sigmoid_values(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def _softplus_deriv_values(s: np.ndarray, beta: float, order: int) -> np.ndarray:
    """Order-th derivative of softplus_beta, expressed via its sigmoid s."""
    if order == 1:
        return s
    if order == 2:
        return beta * (s * (1.0 - s))
    if order == 3:
        return beta**2 * (s * (1.0 - s) * (1.0 - 2.0 * s))
    if order == 4:
        return beta**3 * (s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s))
    raise NumericalError("softplus derivatives beyond order 4 are not supported")


def _softplus_deriv_node(a: Var, beta: float, order: int, sig_holder: list) -> Var:
    """Fused derivative node; the underlying sigmoid array is computed once
    per activation and shared by every reverse pass at every order."""
    if not sig_holder:
        sig_holder.append(_sigmoid_values(beta * a.value))
    out = Var(_softplus_deriv_values(sig_holder[0], beta, order), (a,), tag=f"sp{order}")
    out.vjp = lambda cot, need: (mul(cot, _softplus_deriv_node(a, beta, order + 1, sig_holder)),)
    return out


def sigmoid(a: Var, scale: float = 1.0) -> Var:
    """Logistic sigmoid of ``scale * a``; reverse rule differentiable again."""
    return _softplus_deriv_node(a, scale, 1, [])


_SOFTPLUS_CUT = 30.0


def softplus_values(x: np.ndarray, beta: float = 100.0) -> np.ndarray:
    """log(1 + exp(beta x)) / beta, exactly linear above the cut and zero
    below it (the tails agree with the true value to ~1e-15 absolute).
    Shared by the graph op and the raw value path so both produce
    bit-identical numbers."""
    z = beta * x
    out = np.where(z > 0.0, x, 0.0)
    band = np.abs(z) <= _SOFTPLUS_CUT
    if np.any(band):
        out[band] = np.log1p(np.exp(z[band])) / beta
    return out


def softplus(a: Var, beta: float = 100.0) -> Var:
    """softplus(x) = log(1 + exp(beta x)) / beta, elementwise."""
    out = Var(softplus_values(a.value, beta), (a,), tag="softplus")
    sig_holder: list = []
    out.vjp = lambda cot, need: (mul(cot, _softplus_deriv_node(a, beta, 1, sig_holder)),)
    return out


# ---------------------------------------------------------------------------
# radial basis primitives
#
# The thin-plate kernel r^2 log r and its derivative chain, with the
# continuous extension to 0 guarded below RBF_GUARD.  Derivatives are their
# own primitives so that the reverse pass of a reverse pass stays exact.

RBF_GUARD = 1e-30


def _tp_value(r: np.ndarray, order: int) -> np.ndarray:
    small = r <= RBF_GUARD
    rs = np.where(small, 1.0, r)
    if order == 0:
        v = rs * rs * np.log(rs)
    elif order == 1:
        v = 2.0 * rs * np.log(rs) + rs
    elif order == 2:
        v = 2.0 * np.log(rs) + 3.0
    elif order == 3:
        v = 2.0 / rs
    else:
        raise NumericalError("thin-plate derivatives beyond order 3 are not supported")
    return np.where(small, 0.0, v)


def _tp_node(a: Var, order: int) -> Var:
    out = Var(_tp_value(a.value, order), (a,), tag=f"tp{order}")
    out.vjp = lambda cot, need: (mul(cot, _tp_node(a, order + 1)),)
    return out


def rbf_thin_plate(a: Var) -> Var:
    """psi(r) = r^2 log r with psi(0) = 0; expects r >= 0."""
    return _tp_node(a, 0)


def _cubic_value(r: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return r**3
    if order == 1:
        return 3.0 * r**2
    if order == 2:
        return 6.0 * r
    if order == 3:
        return np.full_like(r, 6.0)
    return np.zeros_like(r)


def _cubic_node(a: Var, order: int) -> Var:
    out = Var(_cubic_value(a.value, order), (a,), tag=f"cb{order}")
    out.vjp = lambda cot, need: (mul(cot, _cubic_node(a, order + 1)),)
    return out


def rbf_cubic(a: Var) -> Var:
    """psi(r) = r^3 for r >= 0."""
    return _cubic_node(a, 0)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Var) -> list[Var]:
    """Ancestors of ``root`` in topological order (parents first)."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Var, wrt: Sequence[Var], seed: Var | None = None) -> list[Var]:
    """Cotangents of ``root`` with respect to each node in ``wrt``.

    The returned nodes are part of the graph, so they can be differentiated
    again.  Nodes in ``wrt`` that ``root`` does not depend on get exact-zero
    constants.  ``seed`` defaults to ones of the root's shape (the usual
    scalar-loss case).
    """
    if not np.all(np.isfinite(root.value)):
        raise NumericalError(f"non-finite value at node '{root.tag}' before reverse pass")

    order = _topo_order(root)
    wrt_ids = {id(w) for w in wrt}

    # A node needs a cotangent only if some wrt leaf can be reached from it.
    needs: set[int] = set()
    for node in order:  # parents precede children
        if id(node) in wrt_ids or any(id(p) in needs for p in node.parents):
            needs.add(id(node))

    cots: dict[int, Var] = {}
    if id(root) in needs:
        cots[id(root)] = seed if seed is not None else constant(np.ones_like(root.value))

    for node in reversed(order):
        cot = cots.get(id(node))
        if cot is None or node.vjp is None:
            continue
        need = tuple(id(p) in needs for p in node.parents)
        grads = node.vjp(cot, need)
        for p, g, n in zip(node.parents, grads, need):
            if not n or g is None:
                continue
            prev = cots.get(id(p))
            cots[id(p)] = g if prev is None else add(prev, g)

    out = []
    for w in wrt:
        g = cots.get(id(w))
        out.append(g if g is not None else constant(np.zeros_like(w.value)))
    return out
