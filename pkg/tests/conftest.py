import numpy as np
import pytest

from trajgan import kernels
from trajgan import numerics as nx


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run a test once per available kernel backend."""
    with kernels.use_backend(request.param):
        yield request.param


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. ndarray ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_grads(build, leaves, h=1e-5, tol=1e-4):
    """Compare tape gradients of scalar ``build()`` with finite differences for each leaf tensor."""
    tape = nx.Tape()
    with tape:
        loss = build()
    analytic = nx.backward(tape, loss, leaves)

    def value():
        return float(build().data)

    for leaf, g in zip(leaves, analytic):
        num = numeric_grad(value, leaf.data, h)
        assert rel_error(g, num) < tol, (leaf.name, g, num)
    return analytic
