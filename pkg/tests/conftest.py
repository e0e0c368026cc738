import numpy as np
import pytest


def fd_gradients(loss_fn, arrays, h=1e-5):
    """Central finite differences of a scalar function w.r.t. every entry of
    the given parameter arrays (mutated in place and restored)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            lp = loss_fn()
            a[idx] = orig - h
            lm = loss_fn()
            a[idx] = orig
            g[idx] = (lp - lm) / (2.0 * h)
            it.iternext()
        grads.append(g)
    return grads


def max_rel_err(analytic, fd):
    """Worst relative disagreement, scaled per array by the larger magnitude."""
    worst = 0.0
    for a, f in zip(analytic, fd):
        scale = max(np.abs(f).max(), np.abs(a).max(), 1e-8)
        worst = max(worst, np.abs(a - f).max() / scale)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(20240813)
