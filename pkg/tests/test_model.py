from dataclasses import replace

import numpy as np
import pytest

from trajgan import gmm
from trajgan import numerics as nx
from trajgan.data import Scene
from trajgan.model import Discriminator, Generator, ModelConfig, make_batch, neighbour_pairs

from .conftest import check_grads

SMALL = ModelConfig(obs_len=4, pred_len=2, k=3, embed_dim=3, hidden_dim=4, disc_hidden_dim=5, mlp_dim=5,
                    rel_embed_dim=3)


def scene(peds, vehicle=None):
    peds = np.asarray(peds, dtype=np.float64)
    return Scene(peds=peds, vehicle=vehicle, frames=np.arange(peds.shape[1]) * 10,
                 agent_ids=np.arange(peds.shape[0]))


def walkers(rng, n, t, speed=1.0):
    start = rng.uniform(-3, 3, size=(n, 1, 2))
    vel = rng.normal(scale=speed * 0.4, size=(n, 1, 2))
    return start + vel * np.arange(t)[None, :, None] + rng.normal(scale=0.02, size=(n, t, 2))


def randomise(params, rng, scale=0.5):
    for t in params.values():
        t.data = rng.uniform(-scale, scale, size=t.shape)


# -- scripted numpy reference -------------------------------------------------

def sig(x):
    return 1 / (1 + np.exp(-x))


def ref_lstm(x, h, c, wi, wh, b):
    pre = x @ wi + h @ wh + b
    n = h.shape[-1]
    i, f, g, o = sig(pre[..., :n]), sig(pre[..., n:2 * n]), np.tanh(pre[..., 2 * n:3 * n]), sig(pre[..., 3 * n:])
    c = f * c + i * g
    return o * np.tanh(c), c


def ref_generator(p, obs, horizon, k):
    """Single-agent generator written out step by step (no neighbours, so g = 0)."""
    P = {name: t.data for name, t in p.items()}
    hsz = P["generator.encoder.w_hh"].shape[0]
    h, c = np.zeros(hsz), np.zeros(hsz)
    for x in obs:
        e = x @ P["generator.embed_obs.w"] + P["generator.embed_obs.b"]
        h, c = ref_lstm(e, h, c, P["generator.encoder.w_ih"], P["generator.encoder.w_hh"], P["generator.encoder.b"])
    g = np.zeros(hsz)
    steps = []
    for t in range(horizon):
        hid = np.maximum(np.concatenate([h, g]) @ P["generator.mlp_dec.w1"] + P["generator.mlp_dec.b1"], 0)
        h_in = hid @ P["generator.mlp_dec.w2"] + P["generator.mlp_dec.b2"]
        if t == 0:
            d = obs[-1] @ P["generator.embed_dec.w"] + P["generator.embed_dec.b"]
        else:
            d = np.zeros(P["generator.embed_dec.w"].shape[1])
        h, c = ref_lstm(d, h_in, c, P["generator.decoder.w_ih"], P["generator.decoder.w_hh"], P["generator.decoder.b"])
        raw = h @ P["generator.mdn.w"] + P["generator.mdn.b"]
        logits = raw[:k]
        pi = np.exp(logits - logits.max())
        steps.append({
            "pi": pi / pi.sum(), "mux": raw[k:2 * k], "muy": raw[2 * k:3 * k],
            "sx": np.maximum(np.exp(raw[3 * k:4 * k]), 1e-3), "sy": np.maximum(np.exp(raw[4 * k:5 * k]), 1e-3),
            "rho": 0.999 * np.tanh(raw[5 * k:]),
        })
    return h, steps


class TestConfig:
    def test_published_defaults(self):
        cfg = ModelConfig()
        assert (cfg.hidden_dim, cfg.disc_hidden_dim, cfg.embed_dim, cfg.k) == (32, 64, 16, 6)

    def test_roundtrip_and_unknown(self):
        assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"hidden": 3})

    def test_parameter_shapes(self):
        gen = Generator.create(ModelConfig(), np.random.default_rng(0))
        assert gen.params["generator.embed_obs.w"].shape == (2, 16)
        assert gen.params["generator.encoder.w_hh"].shape == (32, 128)
        assert gen.params["generator.mdn.w"].shape == (32, 36)
        assert gen.params["generator.gvat.w_u"].shape[1] == 1
        disc = Discriminator.create(ModelConfig(), np.random.default_rng(0))
        assert disc.params["discriminator.encoder.w_hh"].shape == (64, 256)


class TestEncode:
    def test_zero_weights_give_equal_states(self):
        gen = Generator.create(SMALL, np.random.default_rng(0))
        for t in gen.params.values():
            t.data = np.zeros(t.shape)
        h, _ = gen.encode(np.random.default_rng(1).normal(size=(3, 4, 2)))
        assert np.all(h.data == h.data[0])

    def test_identical_tracks_identical_states(self):
        gen = Generator.create(ModelConfig(), np.random.default_rng(0))
        track = walkers(np.random.default_rng(2), 1, 8)
        h, _ = gen.encode(np.concatenate([track, track]))
        assert h.data[0].tobytes() == h.data[1].tobytes()

    def test_matches_scripted_recurrence(self, backend):
        gen = Generator.create(ModelConfig(), np.random.default_rng(3))
        obs = walkers(np.random.default_rng(4), 1, 8)
        h, _ = gen.encode(obs)
        ref_h, _ = ref_generator(gen.params, obs[0], 0, 6)
        np.testing.assert_allclose(h.data[0], ref_h, rtol=1e-12, atol=1e-14)

    def test_missing_positions(self):
        gen = Generator.create(SMALL, np.random.default_rng(0))
        obs = np.zeros((1, 4, 2))
        obs[0, 2, 0] = np.nan
        with pytest.raises(ValueError):
            gen.encode(obs)


class TestGvat:
    def setup_method(self):
        self.gen = Generator.create(ModelConfig(), np.random.default_rng(5))
        randomise(self.gen.params, np.random.default_rng(6))

    def _pool(self, pos, h, **kw):
        pi, pj = neighbour_pairs(np.zeros(len(pos), dtype=int))
        return self.gen.gvat_pool(pos, nx.Tensor(h), pi, pj, **kw)

    def test_single_agent_pools_to_zero(self):
        out = self._pool(np.zeros((1, 2)), np.ones((1, 32)))
        np.testing.assert_array_equal(out.g.data, 0.0)
        np.testing.assert_array_equal(out.h_g.data, np.concatenate([np.ones((1, 32)), np.zeros((1, 32))], axis=1))

    def test_symmetric_neighbours_share_attention(self):
        rng = np.random.default_rng(7)
        h = rng.normal(size=(3, 32))
        h[2] = h[1]
        pos = np.array([[0.0, 0.0], [1.0, 2.0], [1.0, 2.0]])
        out = self._pool(pos, h)
        pi, _ = neighbour_pairs(np.zeros(3, dtype=int))
        np.testing.assert_allclose(out.attention[pi == 0], [0.5, 0.5], atol=1e-12)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        out = self._pool(rng.normal(size=(5, 2)), rng.normal(size=(5, 32)))
        pi, _ = neighbour_pairs(np.zeros(5, dtype=int))
        np.testing.assert_allclose(np.bincount(pi, weights=out.attention), 1.0, atol=1e-9)

    def test_vehicle_absent_equals_zero_offset(self):
        rng = np.random.default_rng(9)
        pos, h = rng.normal(size=(4, 2)), rng.normal(size=(4, 32))
        a = self._pool(pos, h)
        b = self._pool(pos, h, z=np.zeros((4, 2)))
        assert a.g.data.tobytes() == b.g.data.tobytes()
        assert a.attention.tobytes() == b.attention.tobytes()

    def test_vehicle_at_own_position(self):
        rng = np.random.default_rng(10)
        pos, h = rng.normal(size=(2, 2)), rng.normal(size=(2, 32))
        absent = self._pool(pos, h)
        for i in range(2):
            present = self._pool(pos, h, vehicle=np.repeat(pos[i:i + 1], 2, axis=0))
            assert present.g.data[i].tobytes() == absent.g.data[i].tobytes()

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(12)
        pos, h, veh = rng.normal(size=(3, 2)), rng.normal(size=(3, 32)), rng.normal(size=2) * 3
        out = self._pool(pos, h, vehicle=np.repeat(veh[None], 3, axis=0))
        P = {k: t.data for k, t in self.gen.params.items()}
        for i in range(3):
            z = pos[i] - veh
            logits = {}
            for j in range(3):
                if j == i:
                    continue
                r = np.maximum(np.concatenate([pos[i] - pos[j], z]) @ P["generator.gvat.w_r"]
                               + P["generator.gvat.b_r"], 0)
                u = (np.concatenate([r, h[j], h[i]]) @ P["generator.gvat.w_u"] + P["generator.gvat.b_u"])[0]
                logits[j] = u if u > 0 else 0.2 * u
            tot = sum(np.exp(v) for v in logits.values())
            g = sum((np.exp(logits[j]) / tot * h[j]) @ P["generator.gvat.w_gat"] + P["generator.gvat.b_gat"]
                    for j in logits)
            np.testing.assert_allclose(out.g.data[i], g, rtol=1e-12, atol=1e-13)

    def test_vehicle_changes_output(self):
        rng = np.random.default_rng(11)
        pos, h = rng.normal(size=(3, 2)), rng.normal(size=(3, 32))
        absent = self._pool(pos, h)
        present = self._pool(pos, h, vehicle=np.full((3, 2), 4.0))
        assert not np.allclose(absent.g.data, present.g.data)


class TestDecodeGenerate:
    def test_matches_scripted_trace(self, backend):
        gen = Generator.create(ModelConfig(), np.random.default_rng(12))
        obs = walkers(np.random.default_rng(13), 1, 8)
        batch = make_batch([scene(obs)], 8)
        mix = gen.generate(batch, horizon=2)
        _, steps = ref_generator(gen.params, batch.obs[0], 2, 6)
        for t, ref in enumerate(steps):
            for f in gmm.FIELDS:
                np.testing.assert_allclose(getattr(mix, f).data[0, t], ref[f], rtol=1e-11, atol=1e-13)

    def test_shape_and_determinism(self):
        gen = Generator.create(ModelConfig(), np.random.default_rng(0))
        batch = make_batch([scene(walkers(np.random.default_rng(1), 3, 20))], 8, 12)
        a, b = gen.generate(batch), gen.generate(batch)
        assert a.shape == (3, 12, 6)
        for f in gmm.FIELDS:
            assert getattr(a, f).data.tobytes() == getattr(b, f).data.tobytes()

    def test_identical_agents_in_separate_scenes(self):
        gen = Generator.create(ModelConfig(), np.random.default_rng(0))
        track = walkers(np.random.default_rng(2), 1, 8)
        mix = gen.generate(make_batch([scene(track), scene(track)], 8))
        assert mix.mux.data[0].tobytes() == mix.mux.data[1].tobytes()

    def test_relative_means_shift_by_last_position(self):
        abs_gen = Generator.create(SMALL, np.random.default_rng(5))
        rel_gen = Generator(replace(SMALL, relative_means=True), abs_gen.params)
        batch = make_batch([scene(walkers(np.random.default_rng(6), 3, 4))], 4)
        a, r = abs_gen.generate(batch), rel_gen.generate(batch)
        np.testing.assert_allclose(r.mux.data - a.mux.data, np.broadcast_to(batch.last_pos[:, None, None, 0],
                                                                           a.shape), atol=1e-15)
        np.testing.assert_allclose(r.muy.data - a.muy.data, np.broadcast_to(batch.last_pos[:, None, None, 1],
                                                                           a.shape), atol=1e-15)
        np.testing.assert_array_equal(r.pi.data, a.pi.data)

    def test_horizon_zero(self):
        gen = Generator.create(SMALL, np.random.default_rng(0))
        with pytest.raises(nx.UsageError):
            gen.generate(make_batch([scene(np.zeros((1, 4, 2)))], 4), horizon=0)

    def test_agent_permutation(self):
        gen = Generator.create(ModelConfig(), np.random.default_rng(0))
        randomise(gen.params, np.random.default_rng(1), 0.3)
        peds = walkers(np.random.default_rng(3), 4, 8)
        perm = np.array([2, 0, 3, 1])
        a = gen.generate(make_batch([scene(peds)], 8), horizon=3)
        b = gen.generate(make_batch([scene(peds[perm])], 8), horizon=3)
        for f in gmm.FIELDS:
            np.testing.assert_allclose(getattr(b, f).data, getattr(a, f).data[perm], rtol=1e-12, atol=1e-13)

    def test_every_parameter_group_gets_gradient(self):
        gen = Generator.create(ModelConfig(), np.random.default_rng(0))
        peds = walkers(np.random.default_rng(4), 3, 20)
        batch = make_batch([scene(peds, vehicle=peds[0] + 2.0)], 8, 12)
        tape = nx.Tape()
        with tape:
            loss = gmm.nll_loss(gen.generate(batch), batch.future)
        grads = nx.backward(tape, loss, gen.params)
        for name, g in grads.items():
            assert np.any(g != 0), name

    def test_nll_gradient_check(self, backend):
        rng = np.random.default_rng(14)
        gen = Generator.create(SMALL, rng)
        randomise(gen.params, rng)
        peds = walkers(rng, 2, 6)
        batch = make_batch([scene(peds, vehicle=peds[1] + 1.5)], 4, 2)
        names = sorted(gen.params)
        check_grads(lambda: gmm.nll_loss(gen.generate(batch), batch.future), [gen.params[n] for n in names])


class TestDiscriminator:
    def setup_method(self):
        self.disc = Discriminator.create(ModelConfig(), np.random.default_rng(0))
        randomise(self.disc.params, np.random.default_rng(1), 0.3)
        rng = np.random.default_rng(2)
        self.obs, self.fut = walkers(rng, 3, 8), walkers(rng, 3, 12)

    def test_range_and_determinism(self):
        a = self.disc.discriminate(self.obs, self.fut).data
        assert np.all((a > 0) & (a < 1))
        assert a.tobytes() == self.disc.discriminate(self.obs, self.fut).data.tobytes()

    def test_length_mismatch(self):
        with pytest.raises(nx.DimensionError):
            self.disc.discriminate(self.obs, self.fut[:, :11])

    def test_sensitive_to_every_coordinate(self):
        base = self.disc.discriminate(self.obs[:1], self.fut[:1]).data[0]
        for t in range(12):
            for d in range(2):
                fut = self.fut[:1].copy()
                fut[0, t, d] += 1.0
                assert self.disc.discriminate(self.obs[:1], fut).data[0] != base


class TestBatch:
    def test_centroid_normalisation(self):
        peds = walkers(np.random.default_rng(0), 3, 20) + 100.0
        b = make_batch([scene(peds)], 8, 12)
        np.testing.assert_allclose(b.obs[:, -1].mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(b.to_world(b.future), peds[:, 8:], atol=1e-12)

    def test_pairs_stay_within_scenes(self):
        pi, pj = neighbour_pairs(np.array([0, 0, 1, 1, 1]))
        assert len(pi) == 2 + 6
        assert all((a < 2) == (b < 2) for a, b in zip(pi, pj))
        assert not np.any(pi == pj)

    def test_vehicle_offsets(self):
        peds = walkers(np.random.default_rng(0), 2, 20)
        veh = np.cumsum(np.ones((20, 2)), axis=0)
        b = make_batch([scene(peds, veh), scene(peds)], 8, 12)
        assert b.has_vehicle.tolist() == [True, True, False, False]
        np.testing.assert_allclose(b.vehicle[0], veh[7] - b.offset[0])
