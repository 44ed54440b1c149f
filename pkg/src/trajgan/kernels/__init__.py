"""Hot inner-loop kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built and ``TRAJGAN_PURE_PYTHON``
is not set to ``1``. Both backends expose the same functions:

lstm_pointwise_forward / lstm_pointwise_backward
    Gate nonlinearities of one LSTM step (gate order: input, forget, cell, output).
gmm_log_prob_forward / gmm_log_prob_backward
    Log density of bivariate Gaussian mixtures and its analytic gradient.
weighted_dbscan
    DBSCAN with a summed-weight core test and noise merged into clusters.
"""
import contextlib
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("TRAJGAN_PURE_PYTHON") != "1":
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        _impl = _ckernels
        BACKEND = "cython"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def backend_module(name=None):
    """Return the kernel module for ``name`` ("python" or "cython"), default active."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return ["python"]
    return ["python", "cython"]


@contextlib.contextmanager
def use_backend(name):
    """Temporarily route every kernel call to backend ``name``."""
    global _impl, BACKEND
    saved = _impl, BACKEND
    _impl, BACKEND = backend_module(name), name
    try:
        yield _impl
    finally:
        _impl, BACKEND = saved


def lstm_pointwise_forward(pre, c_prev):
    return _impl.lstm_pointwise_forward(_c(pre), _c(c_prev))


def lstm_pointwise_backward(dh, dc, cache):
    return _impl.lstm_pointwise_backward(dh, dc, cache)


def gmm_log_prob_forward(pi, mux, muy, sx, sy, rho, px, py):
    return _impl.gmm_log_prob_forward(
        _c(pi), _c(mux), _c(muy), _c(sx), _c(sy), _c(rho), _c(px), _c(py)
    )


def gmm_log_prob_backward(grad, pi, mux, muy, sx, sy, rho, cache):
    return _impl.gmm_log_prob_backward(
        grad, _c(pi), _c(mux), _c(muy), _c(sx), _c(sy), _c(rho), cache
    )


def weighted_dbscan(points, weights, eps, min_weight):
    return _impl.weighted_dbscan(points, weights, float(eps), float(min_weight))
