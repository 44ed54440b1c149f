"""Bivariate Gaussian mixtures: MDN activation, density and NLL loss.

A :class:`Mixture` holds six tensors of identical shape ``(..., K)``. A single
step for one agent has shape ``(K,)``; a sequence ``(T, K)``; a batch of
agents ``(A, T, K)``.

The raw MDN vector of length ``6K`` is laid out in blocks of K::

    [pi logits | mu_x | mu_y | log sigma_x | log sigma_y | rho (pre-tanh)]
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import numerics as nx

SIGMA_FLOOR = 1e-3
RHO_CAP = 0.999
FIELDS = ("pi", "mux", "muy", "sx", "sy", "rho")


@dataclass
class Mixture:
    pi: nx.Tensor
    mux: nx.Tensor
    muy: nx.Tensor
    sx: nx.Tensor
    sy: nx.Tensor
    rho: nx.Tensor

    @property
    def k(self):
        return self.pi.shape[-1]

    @property
    def shape(self):
        return self.pi.shape

    def tensors(self):
        return [getattr(self, f) for f in FIELDS]

    def arrays(self):
        """Plain ndarray copies, keyed by field name."""
        return {f: getattr(self, f).data.copy() for f in FIELDS}

    def index(self, idx):
        return Mixture(*(nx.take(t, idx) for t in self.tensors()))

    @classmethod
    def from_arrays(cls, pi, mux, muy, sx, sy, rho):
        return cls(*(nx.Tensor(np.asarray(a, dtype=np.float64)) for a in (pi, mux, muy, sx, sy, rho)))


def mdn_activate(raw, k):
    """Map raw MDN outputs (..., 6K) to mixture parameters."""
    raw = nx.as_tensor(raw)
    if raw.shape[-1] != 6 * k:
        raise nx.DimensionError(f"raw MDN vector has length {raw.shape[-1]}, expected {6 * k}")
    blocks = [nx.slice(raw, i * k, (i + 1) * k) for i in range(6)]
    pi = nx.softmax(blocks[0])
    sx = nx.maximum(nx.exp(blocks[3]), SIGMA_FLOOR)
    sy = nx.maximum(nx.exp(blocks[4]), SIGMA_FLOOR)
    rho = nx.mul(nx.tanh(blocks[5]), RHO_CAP)
    return Mixture(pi, blocks[1], blocks[2], sx, sy, rho)


def log_pdf(point, mix):
    """log sum_k pi_k N(point; mu_k, sigma_k, rho_k), evaluated with log-sum-exp."""
    return nx.gmm_log_prob(*mix.tensors(), nx.as_tensor(point))


def nll_loss(mix, truth):
    """Negative log-likelihood summed over agents and prediction steps."""
    truth = nx.as_tensor(truth)
    if truth.shape != mix.shape[:-1] + (2,):
        raise nx.DimensionError(
            f"truth shape {truth.shape} does not align with mixture batch {mix.shape[:-1]}"
        )
    return nx.mul(nx.sum(log_pdf(truth, mix)), -1.0)


def weighted_mean(mix):
    """Mixture mean (pi-weighted component means), shape (..., 2) as ndarray."""
    pi = mix.pi.data
    return np.stack([(pi * mix.mux.data).sum(-1), (pi * mix.muy.data).sum(-1)], axis=-1)


# -- JSON layout --------------------------------------------------------------
#
# {"format": "trajgan-gmm", "version": 1, "k": K,
#  "agents": [                                  # one entry per agent
#     [                                         # one entry per prediction step
#        [{"pi": p, "mu": [x, y], "sigma": [sx, sy], "rho": r}, ...K]
#     ], ...]}

GMM_FORMAT = "trajgan-gmm"


def to_json_obj(mix):
    """Serialise an (A, T, K) mixture batch to the documented JSON structure."""
    a = mix.arrays() if isinstance(mix, Mixture) else {f: np.asarray(mix[f]) for f in FIELDS}
    if a["pi"].ndim != 3:
        raise nx.DimensionError("expected an (agents, steps, K) mixture")
    n_agents, n_steps, k = a["pi"].shape
    agents = []
    for i in range(n_agents):
        steps = []
        for t in range(n_steps):
            steps.append([
                {
                    "pi": float(a["pi"][i, t, c]),
                    "mu": [float(a["mux"][i, t, c]), float(a["muy"][i, t, c])],
                    "sigma": [float(a["sx"][i, t, c]), float(a["sy"][i, t, c])],
                    "rho": float(a["rho"][i, t, c]),
                }
                for c in range(k)
            ])
        agents.append(steps)
    return {"format": GMM_FORMAT, "version": 1, "k": k, "agents": agents}


def from_json_obj(obj):
    """Inverse of :func:`to_json_obj`; returns a Mixture of shape (A, T, K)."""
    if obj.get("format") != GMM_FORMAT:
        raise ValueError(f"not a {GMM_FORMAT} document")
    k = obj["k"]
    agents = obj["agents"]
    if not agents:
        raise ValueError("GMM document has no agents")
    n_steps = len(agents[0])
    out = {f: np.zeros((len(agents), n_steps, k)) for f in FIELDS}
    for i, steps in enumerate(agents):
        if len(steps) != n_steps:
            raise nx.DimensionError("all agents must share the prediction horizon")
        for t, comps in enumerate(steps):
            if len(comps) != k:
                raise nx.DimensionError(f"agent {i} step {t} has {len(comps)} components, expected {k}")
            for c, comp in enumerate(comps):
                out["pi"][i, t, c] = comp["pi"]
                out["mux"][i, t, c], out["muy"][i, t, c] = comp["mu"]
                out["sx"][i, t, c], out["sy"][i, t, c] = comp["sigma"]
                out["rho"][i, t, c] = comp["rho"]
    return Mixture.from_arrays(*(out[f] for f in FIELDS))


def dump_json(mix, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_json_obj(mix), fh, indent=1)


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return from_json_obj(json.load(fh))
