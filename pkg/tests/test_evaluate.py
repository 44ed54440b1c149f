import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajgan import data, evaluate, multipac
from trajgan.data import Scene
from trajgan.model import Generator, ModelConfig, make_batch

SMALL = ModelConfig(obs_len=4, pred_len=3, k=3, embed_dim=3, hidden_dim=4, disc_hidden_dim=5, mlp_dim=5,
                    rel_embed_dim=3)


def loop_ade(p, t):
    total = 0.0
    for i in range(len(p)):
        total += math.sqrt((p[i][0] - t[i][0]) ** 2 + (p[i][1] - t[i][1]) ** 2)
    return total / len(p)


def loop_mhd(p, t):
    worst = 0.0
    for a in p:
        nearest = math.inf
        for b in t:
            nearest = min(nearest, math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2))
        worst = max(worst, nearest)
    return worst


def rigid(traj, theta, shift):
    c, s = math.cos(theta), math.sin(theta)
    return traj @ np.array([[c, s], [-s, c]]) + shift


def cv_scene(rng, n=3, t=20):
    start = rng.uniform(-5, 5, (n, 1, 2))
    vel = rng.uniform(-1, 1, (n, 1, 2))
    peds = start + vel * np.arange(t)[None, :, None]
    return Scene(peds, None, np.arange(t) * 10, np.arange(n))


class TestMetrics:
    def test_identity_and_offsets(self):
        t = np.random.default_rng(0).normal(size=(6, 2))
        assert evaluate.ade(t, t) == evaluate.fde(t, t) == evaluate.mhd(t, t) == 0.0
        assert evaluate.ade(t + [1.0, 0.0], t) == pytest.approx(1.0, abs=1e-15)
        bumped = t.copy()
        bumped[-1] += [0.0, 2.0]
        assert evaluate.fde(bumped, t) == pytest.approx(2.0, abs=1e-15)

    def test_mhd_examples(self):
        truth = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        assert evaluate.mhd(truth[[0, 2]], truth) == 0.0
        assert evaluate.mhd(np.array([[3.0, 0.0]]), np.array([[0.0, 0.0]])) == 3.0

    def test_loop_oracles(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 15))
            p, t = rng.normal(scale=3, size=(n, 2)), rng.normal(scale=3, size=(n, 2))
            assert abs(evaluate.ade(p, t) - loop_ade(p, t)) < 1e-12
            assert abs(evaluate.fde(p, t) - math.dist(p[-1], t[-1])) < 1e-12
            assert abs(evaluate.mhd(p, t) - loop_mhd(p, t)) < 1e-12

    def test_standard_mhd_variant(self):
        p = np.array([[0.0, 0.0], [4.0, 0.0]])
        t = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert evaluate.mhd(p, t) == 3.0
        assert evaluate.mhd_standard(p, t) == 1.5

    def test_errors(self):
        with pytest.raises(ValueError):
            evaluate.ade(np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(ValueError):
            evaluate.mhd(np.zeros((0, 2)), np.zeros((3, 2)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50))
    def test_rigid_invariance(self, seed, theta, dx, dy):
        rng = np.random.default_rng(seed)
        p, t = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        P, T = rigid(p, theta, [dx, dy]), rigid(t, theta, [dx, dy])
        for f in (evaluate.ade, evaluate.fde, evaluate.mhd):
            assert f(P, T) == pytest.approx(f(p, t), abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_bounded_by_largest_step_distance(self, seed):
        rng = np.random.default_rng(seed)
        p, t = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
        worst = float(np.linalg.norm(p - t, axis=1).max())
        assert evaluate.ade(p, t) <= worst + 1e-12
        assert evaluate.fde(p, t) <= worst + 1e-12
        assert evaluate.mhd(p, t) <= worst + 1e-12


class TestBaselines:
    def test_cvm(self):
        pred = evaluate.cvm_predict([[0, 0], [1, 0], [2, 0]], 3)
        np.testing.assert_array_equal(pred, [[3, 0], [4, 0], [5, 0]])
        np.testing.assert_array_equal(evaluate.cvm_predict([[1, 1], [1, 1]], 2), [[1, 1], [1, 1]])

    def test_linear_exact_on_lines(self):
        obs = np.array([[0.5, 1.0]]) + np.arange(8)[:, None] * [0.3, -0.2]
        truth = np.array([[0.5, 1.0]]) + np.arange(8, 20)[:, None] * [0.3, -0.2]
        np.testing.assert_allclose(evaluate.linear_predict(obs, 12), truth, atol=1e-12)

    def test_linear_symmetric_slope(self):
        x = np.array([0.0, 1.0, 5.0, 9.0, 10.0])
        obs = np.stack([x, np.zeros(5)], axis=1)
        pred = evaluate.linear_predict(obs, 1)
        # point-symmetric about (t=2, x=5): the line passes through it with
        # slope sum((t - 2) * x) / sum((t - 2)^2) = 28 / 10
        assert pred[0, 0] == pytest.approx(5.0 + 2.8 * 3, abs=1e-12)

    def test_linear_normal_equations(self):
        rng = np.random.default_rng(2)
        obs = np.arange(8)[:, None] * [0.4, 0.1] + rng.normal(scale=0.05, size=(8, 2))
        A = np.stack([np.ones(8), np.arange(8.0)], axis=1)
        coef = np.linalg.solve(A.T @ A, A.T @ obs)
        At = np.stack([np.ones(12), np.arange(8.0, 20.0)], axis=1)
        np.testing.assert_allclose(evaluate.linear_predict(obs, 12), At @ coef, atol=1e-12)

    @pytest.mark.parametrize("f", [evaluate.cvm_predict, evaluate.linear_predict])
    def test_needs_two_points(self, f):
        with pytest.raises(ValueError):
            f([[0.0, 0.0]], 3)

    def test_cvm_zero_error_on_constant_velocity(self):
        rng = np.random.default_rng(3)
        scenes = [cv_scene(rng) for _ in range(10)]
        row = evaluate.evaluate_baseline("cvm", scenes, 12)
        assert row.ade == pytest.approx(0.0, abs=1e-12) and row.fde == pytest.approx(0.0, abs=1e-12)
        assert row.mhd == pytest.approx(0.0, abs=1e-12)
        assert (row.scenes, row.agents) == (10, 30)

    def test_aggregate_is_mean_over_agents(self):
        rng = np.random.default_rng(4)
        scenes = [Scene(rng.normal(size=(n, 20, 2)).cumsum(1), None, np.arange(20), np.arange(n)) for n in (1, 4)]
        per_agent = [evaluate.ade(evaluate.linear_predict(s.peds[i, :8], 12), s.peds[i, 8:])
                     for s in scenes for i in range(s.n_agents)]
        row = evaluate.evaluate("lin", scenes, 12)
        assert row.ade == pytest.approx(np.mean(per_agent), abs=1e-12)

    def test_short_scene(self):
        with pytest.raises(ValueError):
            evaluate.evaluate_baseline("cvm", [cv_scene(np.random.default_rng(0), t=10)], 12)


def test_metrics_files(tmp_path):
    row = evaluate.MetricsRow("zara1", 12, 0.5, 1.0, 0.4, 3, 7)
    evaluate.write_metrics([row], tmp_path / "m.csv", tmp_path / "m.json")
    assert (tmp_path / "m.csv").read_text() == "dataset,horizon,ade,fde,mhd,scenes,agents\nzara1,12,0.5,1.0,0.4,3,7\n"
    assert json.loads((tmp_path / "m.json").read_text())[0]["agents"] == 7


class TestModelEvaluation:
    def setup_method(self):
        self.gen = Generator.create(SMALL, np.random.default_rng(0))
        self.scenes = data.generate_sfm(data.SfmConfig(seed=0, n_frames=7), 5, with_vehicle=True)

    def test_matches_per_agent_recomputation(self):
        row = evaluate.evaluate_model(self.gen, self.scenes)
        ades = []
        for s in self.scenes:
            batch = make_batch([s], 4)
            trees = multipac.agent_trees(self.gen.generate(batch))
            for i, tree in enumerate(trees):
                best = multipac.most_likely_path(multipac.extract_modal_paths(tree))
                world = best.positions + batch.offset[0]
                ades.append(evaluate.ade(world, s.peds[i, 4:7]))
        assert row.ade == pytest.approx(np.mean(ades), abs=1e-12)
        assert row.agents == len(ades)

    def test_horizon_mismatch(self):
        with pytest.raises(ValueError):
            evaluate.evaluate_model(self.gen, self.scenes, horizon=5)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate.evaluate(self.gen, [], 3)

    def test_dumps_validate(self):
        dumps = evaluate.prediction_dumps(self.gen, self.scenes)
        assert len(dumps) == len(self.scenes)
        for doc in dumps:
            evaluate.validate_dump(json.loads(json.dumps(doc)), k=3)
            for ag in doc["agents"]:
                assert sum(p["weight"] for p in ag["modal_paths"]) == pytest.approx(1.0, abs=1e-9)
                assert len(ag["observed"]) == 4 and len(ag["truth"]) == 3

    def test_dump_paths_in_world_frame(self):
        doc = evaluate.prediction_dumps(self.gen, self.scenes[:1])[0]
        ag = doc["agents"][0]
        best = np.array(ag["modal_paths"][ag["best_path"]]["positions"])
        row = evaluate.evaluate_model(self.gen, self.scenes[:1])
        if len(doc["agents"]) == 1:
            assert evaluate.ade(best, np.array(ag["truth"])) == pytest.approx(row.ade, abs=1e-12)
        assert np.linalg.norm(best[0] - np.array(ag["observed"][-1])) < 20.0

    def test_validate_rejects_bad_weights(self):
        doc = evaluate.prediction_dumps(self.gen, self.scenes[:1])[0]
        doc["agents"][0]["modal_paths"][0]["weight"] += 0.5
        with pytest.raises(ValueError):
            evaluate.validate_dump(doc)
