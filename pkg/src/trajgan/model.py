"""Generator and discriminator networks.

Generator: linear embedding -> LSTM encoder -> attention pooling over
neighbours (with an optional vehicle offset feature) -> LSTM decoder fed zeros
after its first step -> MDN head. Discriminator: linear embedding -> LSTM over
the full observed+future track -> ReLU MLP -> sigmoid.

Parameters live in flat dicts keyed ``<network>.<layer>.<matrix>``. LSTM gate
blocks are ordered input, forget, cell, output.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import gmm
from . import numerics as nx

GVAT_SLOPE = 0.2   # negative slope of the leaky ReLU on attention logits


@dataclass(frozen=True)
class ModelConfig:
    obs_len: int = 8
    pred_len: int = 12
    k: int = 6
    embed_dim: int = 16
    hidden_dim: int = 32
    disc_hidden_dim: int = 64
    mlp_dim: int = 64
    rel_embed_dim: int = 16
    # mixture means are offsets from the agent's last observed position
    relative_means: bool = False

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# -- parameter construction ---------------------------------------------------

def _linear(params, rng, prefix, n_in, n_out, w="w", b="b"):
    params[f"{prefix}.{w}"] = nx.init_weight(rng, n_in, (n_in, n_out))
    params[f"{prefix}.{b}"] = nx.init_bias((n_out,))


def _lstm(params, rng, prefix, n_in, hidden):
    # fan-in of the gate pre-activation covers both input and recurrent weights
    fan = n_in + hidden
    params[f"{prefix}.w_ih"] = nx.init_weight(rng, fan, (n_in, 4 * hidden))
    params[f"{prefix}.w_hh"] = nx.init_weight(rng, fan, (hidden, 4 * hidden))
    params[f"{prefix}.b"] = nx.init_bias((4 * hidden,))


def init_generator_params(cfg, rng):
    p = {}
    e, h = cfg.embed_dim, cfg.hidden_dim
    _linear(p, rng, "generator.embed_obs", 2, e)
    _lstm(p, rng, "generator.encoder", e, h)
    _linear(p, rng, "generator.gvat", 4, cfg.rel_embed_dim, "w_r", "b_r")
    _linear(p, rng, "generator.gvat", cfg.rel_embed_dim + 2 * h, 1, "w_u", "b_u")
    _linear(p, rng, "generator.gvat", h, h, "w_gat", "b_gat")
    _linear(p, rng, "generator.embed_dec", 2, e)
    _linear(p, rng, "generator.mlp_dec", 2 * h, cfg.mlp_dim, "w1", "b1")
    _linear(p, rng, "generator.mlp_dec", cfg.mlp_dim, h, "w2", "b2")
    _lstm(p, rng, "generator.decoder", e, h)
    _linear(p, rng, "generator.mdn", h, 6 * cfg.k)
    for name, t in p.items():
        t.name = name
    return p


def init_discriminator_params(cfg, rng):
    p = {}
    _linear(p, rng, "discriminator.embed", 2, cfg.embed_dim)
    _lstm(p, rng, "discriminator.encoder", cfg.embed_dim, cfg.disc_hidden_dim)
    _linear(p, rng, "discriminator.classifier", cfg.disc_hidden_dim, cfg.mlp_dim, "w1", "b1")
    _linear(p, rng, "discriminator.classifier", cfg.mlp_dim, 1, "w2", "b2")
    for name, t in p.items():
        t.name = name
    return p


def _dense(x, params, prefix, w="w", b="b"):
    return nx.add(nx.matmul(x, params[f"{prefix}.{w}"]), params[f"{prefix}.{b}"])


def _run_lstm_step(x, h, c, params, prefix):
    hc = nx.lstm_cell(x, h, c, params[f"{prefix}.w_ih"], params[f"{prefix}.w_hh"], params[f"{prefix}.b"])
    hsz = c.shape[-1]
    return nx.slice(hc, 0, hsz), nx.slice(hc, hsz, 2 * hsz)


# -- batching -----------------------------------------------------------------

@dataclass
class SceneBatch:
    """Agents of several scenes stacked together, in scene-normalised coordinates.

    ``offset[s]`` is the centroid subtracted from scene ``s``; add it back to
    return to world coordinates.
    """
    obs: np.ndarray             # (A, obs_len, 2)
    future: np.ndarray | None   # (A, pred_len, 2)
    scene_index: np.ndarray     # (A,)
    vehicle: np.ndarray         # (A, 2) vehicle position at the last observed frame
    has_vehicle: np.ndarray     # (A,) bool
    offset: np.ndarray          # (n_scenes, 2)
    pair_i: np.ndarray          # (P,) receiving agent
    pair_j: np.ndarray          # (P,) neighbour agent

    @property
    def n_agents(self):
        return self.obs.shape[0]

    @property
    def n_scenes(self):
        return self.offset.shape[0]

    @property
    def last_pos(self):
        return self.obs[:, -1, :]

    def to_world(self, xy, agent_index=None):
        """Shift normalised coordinates (A, ..., 2) back to world frame."""
        idx = np.arange(self.n_agents) if agent_index is None else agent_index
        off = self.offset[self.scene_index[idx]]
        return xy + off.reshape(off.shape[:1] + (1,) * (xy.ndim - 2) + (2,))


def neighbour_pairs(scene_index):
    """All ordered pairs (i, j), i != j, of agents sharing a scene."""
    scene_index = np.asarray(scene_index)
    pi, pj = [], []
    for s in np.unique(scene_index):
        members = np.flatnonzero(scene_index == s)
        for i in members:
            for j in members:
                if i != j:
                    pi.append(i)
                    pj.append(j)
    return np.asarray(pi, dtype=np.intp), np.asarray(pj, dtype=np.intp)


def make_batch(scenes, obs_len, pred_len=None):
    """Stack scenes into a :class:`SceneBatch`.

    Each scene is shifted so the centroid of its pedestrians at the last
    observed frame is the origin. ``pred_len=None`` omits the future.
    """
    obs, fut, sidx, veh, hasv, offs = [], [], [], [], [], []
    for s, scene in enumerate(scenes):
        peds = np.asarray(scene.peds, dtype=np.float64)
        need = obs_len + (pred_len or 0)
        if peds.shape[1] < need:
            raise nx.DimensionError(f"scene has {peds.shape[1]} frames, need {need}")
        off = peds[:, obs_len - 1, :].mean(axis=0)
        offs.append(off)
        obs.append(peds[:, :obs_len, :] - off)
        if pred_len:
            fut.append(peds[:, obs_len:obs_len + pred_len, :] - off)
        n = peds.shape[0]
        sidx.append(np.full(n, s, dtype=np.intp))
        if scene.vehicle is not None:
            v = np.asarray(scene.vehicle, dtype=np.float64)[obs_len - 1] - off
            veh.append(np.repeat(v[None, :], n, axis=0))
            hasv.append(np.ones(n, dtype=bool))
        else:
            veh.append(np.zeros((n, 2)))
            hasv.append(np.zeros(n, dtype=bool))
    scene_index = np.concatenate(sidx)
    pair_i, pair_j = neighbour_pairs(scene_index)
    return SceneBatch(
        obs=np.concatenate(obs),
        future=np.concatenate(fut) if pred_len else None,
        scene_index=scene_index,
        vehicle=np.concatenate(veh),
        has_vehicle=np.concatenate(hasv),
        offset=np.asarray(offs).reshape(-1, 2),
        pair_i=pair_i,
        pair_j=pair_j,
    )


# -- generator ----------------------------------------------------------------

class GvatOutput(NamedTuple):
    g: nx.Tensor          # (A, H) pooled neighbour summary
    h_g: nx.Tensor        # (A, 2H) concat(h_i, g_i)
    attention: np.ndarray  # (P,) softmax weights, aligned with the pair arrays


class Generator:
    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg, rng):
        return cls(cfg, init_generator_params(cfg, rng))

    def encode(self, obs):
        """Run the encoder over (A, T, 2) observations; returns final (h, c)."""
        obs = np.asarray(obs, dtype=np.float64)
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations contain missing or non-finite positions")
        p = self.params
        n = obs.shape[0]
        hsz = self.cfg.hidden_dim
        emb = _dense(nx.Tensor(obs), p, "generator.embed_obs")
        h = nx.Tensor(np.zeros((n, hsz)))
        c = nx.Tensor(np.zeros((n, hsz)))
        for t in range(obs.shape[1]):
            h, c = _run_lstm_step(nx.take(emb, (slice(None), t)), h, c, p, "generator.encoder")
        return h, c

    def gvat_pool(self, positions, h_e, pair_i, pair_j, vehicle=None, has_vehicle=None, z=None):
        """Attention pooling over neighbours.

        ``positions`` (A, 2) are the last observed positions. The vehicle term
        ``z_i`` is ``x_i - v`` where a vehicle is present and (0, 0) otherwise;
        pass ``z`` directly to override it.
        """
        p = self.params
        pos = np.asarray(positions, dtype=np.float64)
        n = pos.shape[0]
        if z is None:
            z = np.zeros((n, 2))
            if vehicle is not None:
                mask = np.ones(n, dtype=bool) if has_vehicle is None else np.asarray(has_vehicle, bool)
                veh = np.asarray(vehicle, dtype=np.float64)
                z[mask] = pos[mask] - veh[mask]
        z = np.asarray(z, dtype=np.float64)
        rel = np.concatenate([pos[pair_i] - pos[pair_j], z[pair_i]], axis=1).reshape(-1, 4)
        # Both embeddings need a nonlinearity: with two stacked affine maps the
        # z_i and h_i terms add the same constant to every logit of row i and
        # the softmax cancels them.
        r = nx.relu(_dense(nx.Tensor(rel), p, "generator.gvat", "w_r", "b_r"))
        u_in = nx.concat([r, nx.take(h_e, pair_j), nx.take(h_e, pair_i)], axis=-1)
        u = nx.leaky_relu(nx.reshape(_dense(u_in, p, "generator.gvat", "w_u", "b_u"), (-1,)), GVAT_SLOPE)
        a = nx.segment_softmax(u, pair_i, n)
        scaled = nx.mul(nx.reshape(a, (-1, 1)), nx.take(h_e, pair_j))
        per_pair = _dense(scaled, p, "generator.gvat", "w_gat", "b_gat")
        g = nx.segment_sum(per_pair, pair_i, n)
        return GvatOutput(g, nx.concat([h_e, g], axis=-1), a.data.copy())

    def decode(self, h_e, c_e, g, last_pos, horizon):
        """Zero-feed decoding to an (A, horizon, K) mixture."""
        if horizon < 1:
            raise nx.UsageError("prediction horizon must be at least 1")
        p = self.params
        n = h_e.shape[0]
        zero_in = nx.Tensor(np.zeros((n, self.cfg.embed_dim)))
        h, c = h_e, c_e
        raws = []
        for step in range(horizon):
            hidden = nx.relu(_dense(nx.concat([h, g], axis=-1), p, "generator.mlp_dec", "w1", "b1"))
            h_in = _dense(hidden, p, "generator.mlp_dec", "w2", "b2")
            if step == 0:
                d = _dense(nx.Tensor(np.asarray(last_pos, dtype=np.float64)), p, "generator.embed_dec")
            else:
                d = zero_in
            h, c = _run_lstm_step(d, h_in, c, p, "generator.decoder")
            raws.append(_dense(h, p, "generator.mdn"))
        mix = gmm.mdn_activate(nx.stack(raws, axis=1), self.cfg.k)
        if self.cfg.relative_means:
            last = np.asarray(last_pos, dtype=np.float64).reshape(n, 1, 1, 2)
            mix.mux = nx.add(mix.mux, nx.Tensor(last[..., 0]))
            mix.muy = nx.add(mix.muy, nx.Tensor(last[..., 1]))
        return mix

    def generate(self, batch, horizon=None, return_attention=False):
        horizon = self.cfg.pred_len if horizon is None else horizon
        h_e, c_e = self.encode(batch.obs)
        pooled = self.gvat_pool(batch.last_pos, h_e, batch.pair_i, batch.pair_j,
                                batch.vehicle, batch.has_vehicle)
        mix = self.decode(h_e, c_e, pooled.g, batch.last_pos, horizon)
        if return_attention:
            return mix, pooled.attention
        return mix


# -- discriminator ------------------------------------------------------------

class Discriminator:
    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg, rng):
        return cls(cfg, init_discriminator_params(cfg, rng))

    def score_tracks(self, tracks):
        """Probability that each full (B, T, 2) track is real."""
        tracks = nx.as_tensor(tracks)
        p = self.params
        n = tracks.shape[0]
        hsz = self.cfg.disc_hidden_dim
        emb = _dense(tracks, p, "discriminator.embed")
        h = nx.Tensor(np.zeros((n, hsz)))
        c = nx.Tensor(np.zeros((n, hsz)))
        for t in range(tracks.shape[1]):
            h, c = _run_lstm_step(nx.take(emb, (slice(None), t)), h, c, p, "discriminator.encoder")
        hidden = nx.relu(_dense(h, p, "discriminator.classifier", "w1", "b1"))
        logit = _dense(hidden, p, "discriminator.classifier", "w2", "b2")
        return nx.sigmoid(nx.reshape(logit, (-1,)))

    def discriminate(self, observed, future):
        """Score observed (B, obs_len, 2) tracks continued by candidate futures (B, pred_len, 2)."""
        future = nx.as_tensor(future)
        observed = nx.as_tensor(observed)
        if future.shape[1] != self.cfg.pred_len or observed.shape[1] != self.cfg.obs_len:
            raise nx.DimensionError(
                f"expected {self.cfg.obs_len} observed and {self.cfg.pred_len} future steps, "
                f"got {observed.shape[1]} and {future.shape[1]}"
            )
        return self.score_tracks(nx.concat([observed, future], axis=1))
