"""Modal-path extraction from per-step Gaussian mixtures.

At each prediction step the K component means are clustered with a weighted
DBSCAN; each cluster's centroid is the pi-weighted mean of its members. Each
cluster is linked to a parent in the previous step, giving a tree whose
root-to-leaf chains are the modal paths. Leaves are the clusters of the final
step, so every path spans the full horizon and leaf weights sum to one.

Cluster membership and parent links are discrete; :func:`path_tensors`
rebuilds centroids and path weights as differentiable functions of the
mixture with the membership held fixed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import numerics as nx
from .kernels._pykernels import nearest_index

DEFAULT_EPS = 0.5
DEFAULT_MIN_WEIGHT = 0.05


@dataclass
class ClusterNode:
    step: int
    centroid: np.ndarray
    weight: float
    members: tuple
    parent: int | None = None   # index into the previous layer


@dataclass
class ModalPathTree:
    layers: list = field(default_factory=list)

    @property
    def horizon(self):
        return len(self.layers)

    def to_json_obj(self):
        return {
            "format": "trajgan-modal-tree",
            "version": 1,
            "layers": [
                [
                    {
                        "centroid": [float(n.centroid[0]), float(n.centroid[1])],
                        "weight": float(n.weight),
                        "members": [int(m) for m in n.members],
                        "parent": n.parent,
                    }
                    for n in layer
                ]
                for layer in self.layers
            ],
        }


@dataclass
class ModalPath:
    positions: np.ndarray   # (T, 2)
    weight: float
    nodes: tuple            # node index per layer

    def to_json_obj(self):
        return {"positions": self.positions.tolist(), "weight": float(self.weight)}


def weighted_dbscan(points, weights, eps=DEFAULT_EPS, min_weight=DEFAULT_MIN_WEIGHT):
    """Cluster labels (0..C-1) for K points; see :mod:`trajgan.kernels`."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 1:
        raise ValueError("need at least one point")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return kernels.weighted_dbscan(pts, np.asarray(weights, dtype=np.float64), eps, min_weight)


def _layer(step, means, pi, labels):
    nodes = []
    for c in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == c)
        w = pi[members]
        tot = float(w.sum())
        cen = (w[:, None] * means[members]).sum(axis=0) / tot if tot > 0 else means[members].mean(axis=0)
        nodes.append(ClusterNode(step, cen, tot, tuple(int(m) for m in members)))
    return nodes


def _assign_parents(prev, layer, pi_child):
    for child in layer:
        best, best_mass = None, 0.0
        for pidx, par in enumerate(prev):
            shared = set(child.members).intersection(par.members)
            mass = float(sum(pi_child[m] for m in sorted(shared)))
            if shared and (best is None or mass > best_mass):
                best, best_mass = pidx, mass
        if best is None:
            d = [float(np.sum((par.centroid - child.centroid) ** 2)) for par in prev]
            best = nearest_index(d)
        child.parent = best


def build_tree(pi, mux, muy, eps=DEFAULT_EPS, min_weight=DEFAULT_MIN_WEIGHT):
    """Modal-path tree for one agent from (T, K) mixture weight and mean arrays.

    A child cluster's parent is the previous-step cluster sharing the most
    child-step weight over common component indices; with no shared
    components the nearest centroid is used.
    """
    pi = np.asarray(pi, dtype=np.float64)
    means = np.stack([np.asarray(mux, dtype=np.float64), np.asarray(muy, dtype=np.float64)], axis=-1)
    if pi.ndim != 2 or pi.shape[0] < 1:
        raise ValueError("expected a non-empty (T, K) mixture sequence")
    tree = ModalPathTree()
    for t in range(pi.shape[0]):
        labels = weighted_dbscan(means[t], pi[t], eps, min_weight)
        layer = _layer(t, means[t], pi[t], labels)
        if tree.layers:
            _assign_parents(tree.layers[-1], layer, pi[t])
        tree.layers.append(layer)
    return tree


def extract_modal_paths(tree):
    """One path per final-step cluster, weights renormalised to sum to one."""
    if not tree.layers:
        return []
    leaves = tree.layers[-1]
    total = sum(n.weight for n in leaves)
    paths = []
    for li, leaf in enumerate(leaves):
        idx = [li]
        node = leaf
        for t in range(tree.horizon - 1, 0, -1):
            idx.append(node.parent)
            node = tree.layers[t - 1][node.parent]
        idx.reverse()
        pos = np.stack([tree.layers[t][i].centroid for t, i in enumerate(idx)])
        w = leaf.weight / total if total > 0 else 1.0 / len(leaves)
        paths.append(ModalPath(pos, w, tuple(idx)))
    return paths


def most_likely_path(paths):
    """Highest-weight path; ties go to the lowest index."""
    if not paths:
        raise ValueError("no modal paths to choose from")
    best = 0
    for i, p in enumerate(paths):
        if p.weight > paths[best].weight:
            best = i
    return paths[best]


def agent_trees(mix, eps=DEFAULT_EPS, min_weight=DEFAULT_MIN_WEIGHT):
    """Trees for every agent of an (A, T, K) mixture."""
    pi, mux, muy = mix.pi.data, mix.mux.data, mix.muy.data
    return [build_tree(pi[a], mux[a], muy[a], eps, min_weight) for a in range(pi.shape[0])]


@dataclass
class PathBatch:
    positions: nx.Tensor   # (P, T, 2) differentiable centroids
    weights: nx.Tensor     # (P,) differentiable path likelihoods
    agent: np.ndarray      # (P,) owning agent


def path_tensors(mix, trees):
    """Rebuild every modal path of every agent as tensors of the mixture.

    Centroids are ``sum_k m_k pi_k mu_k / sum_k m_k pi_k`` with membership
    masks ``m`` fixed by the trees; a path's weight is its leaf mass divided by
    the total leaf mass of its agent.
    """
    n_agents, horizon, k = mix.shape
    masks, agent, leaf_masks = [], [], []
    for a, tree in enumerate(trees):
        for path in extract_modal_paths(tree):
            m = np.zeros((horizon, k))
            for t, node_idx in enumerate(path.nodes):
                m[t, list(tree.layers[t][node_idx].members)] = 1.0
            masks.append(m)
            leaf_masks.append(m[-1])
            agent.append(a)
    masks = np.asarray(masks).reshape(-1, horizon, k)
    agent = np.asarray(agent, dtype=np.intp)
    pi = nx.take(mix.pi, agent)
    wpi = nx.mul(pi, masks)
    den = nx.sum(wpi, axis=-1)
    cx = nx.div(nx.sum(nx.mul(wpi, nx.take(mix.mux, agent)), axis=-1), den)
    cy = nx.div(nx.sum(nx.mul(wpi, nx.take(mix.muy, agent)), axis=-1), den)
    positions = nx.stack([cx, cy], axis=-1)
    leaf_mass = nx.sum(nx.mul(nx.take(mix.pi, (agent, horizon - 1)), np.asarray(leaf_masks).reshape(-1, k)), axis=-1)
    agent_total = nx.segment_sum(leaf_mass, agent, n_agents)
    weights = nx.div(leaf_mass, nx.take(agent_total, agent))
    return PathBatch(positions, weights, agent)


def trees_to_json(trees, paths=None):
    out = []
    for a, tree in enumerate(trees):
        ps = extract_modal_paths(tree) if paths is None else paths[a]
        entry = tree.to_json_obj()
        entry["modal_paths"] = [p.to_json_obj() for p in ps]
        out.append(entry)
    return out


def trees_from_gmm_file(gmm_path, out_path, eps=DEFAULT_EPS, min_weight=DEFAULT_MIN_WEIGHT):
    """File mode: read a serialised GMM batch and write its modal-path trees."""
    from . import gmm

    mix = gmm.load_json(gmm_path)
    trees = agent_trees(mix, eps, min_weight)
    doc = {"format": "trajgan-modal-trees", "version": 1, "eps": eps, "min_weight": min_weight,
           "agents": trees_to_json(trees)}
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return trees
