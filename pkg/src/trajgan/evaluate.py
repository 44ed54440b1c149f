"""Displacement metrics, trainingless baselines and dataset evaluation."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import gmm, multipac
from .model import make_batch


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    if pred.ndim != 2 or pred.shape[0] < 1:
        raise ValueError("trajectories must be non-empty (T, 2) arrays")
    return pred, truth


def ade(pred, truth):
    """Mean Euclidean distance over time steps."""
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.linalg.norm(pred - truth, axis=1)))


def fde(pred, truth):
    """Euclidean distance at the final step."""
    pred, truth = _pair(pred, truth)
    return float(np.linalg.norm(pred[-1] - truth[-1]))


def _dist_matrix(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("trajectories must be non-empty")
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)


def mhd(pred, truth):
    """Largest distance from any predicted point to its nearest ground-truth point.

    This is the directed max-of-min form. :func:`mhd_standard` gives the
    Dubuisson-Jain mean-of-min variant for comparison.
    """
    return float(_dist_matrix(pred, truth).min(axis=1).max())


def mhd_standard(pred, truth):
    """max(mean_a min_b d, mean_b min_a d)."""
    d = _dist_matrix(pred, truth)
    return float(max(d.min(axis=1).mean(), d.min(axis=0).mean()))


def cvm_predict(observed, horizon):
    """Repeat the last observed displacement ``horizon`` times."""
    obs = np.asarray(observed, dtype=np.float64)
    if obs.shape[0] < 2:
        raise ValueError("constant-velocity prediction needs at least 2 observed points")
    step = obs[-1] - obs[-2]
    return obs[-1] + step * np.arange(1, horizon + 1)[:, None]


def linear_predict(observed, horizon):
    """Least-squares line per coordinate over observed frame indices, extrapolated."""
    obs = np.asarray(observed, dtype=np.float64)
    n = obs.shape[0]
    if n < 2:
        raise ValueError("linear prediction needs at least 2 observed points")
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    slope = (tc[:, None] * (obs - obs.mean(axis=0))).sum(axis=0) / (tc * tc).sum()
    icpt = obs.mean(axis=0) - slope * t.mean()
    tf = np.arange(n, n + horizon, dtype=np.float64)
    return icpt + tf[:, None] * slope


BASELINES = {"cvm": cvm_predict, "lin": linear_predict}


@dataclass
class MetricsRow:
    dataset: str
    horizon: int
    ade: float
    fde: float
    mhd: float
    scenes: int
    agents: int

    FIELDS = ("dataset", "horizon", "ade", "fde", "mhd", "scenes", "agents")

    def to_dict(self):
        return asdict(self)


def write_metrics(rows, csv_path=None, json_path=None):
    rows = list(rows)
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MetricsRow.FIELDS)
            for r in rows:
                w.writerow([getattr(r, f) for f in MetricsRow.FIELDS])
    if json_path:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump([r.to_dict() for r in rows], fh, indent=1, sort_keys=True)
            fh.write("\n")


def _aggregate(preds, truths, name, horizon, n_scenes):
    if not preds:
        raise ValueError("nothing to evaluate")
    a = [ade(p, t) for p, t in zip(preds, truths)]
    f = [fde(p, t) for p, t in zip(preds, truths)]
    m = [mhd(p, t) for p, t in zip(preds, truths)]
    return MetricsRow(name, horizon, float(np.mean(a)), float(np.mean(f)), float(np.mean(m)),
                      n_scenes, len(preds))


def _split(scene, obs_len, horizon):
    peds = np.asarray(scene.peds, dtype=np.float64)
    if peds.shape[1] < obs_len + horizon:
        raise ValueError(f"scene has {peds.shape[1]} frames, need {obs_len + horizon}")
    return peds[:, :obs_len], peds[:, obs_len:obs_len + horizon]


def evaluate_baseline(name, scenes, horizon, obs_len=8, dataset=""):
    predict = BASELINES[name]
    preds, truths = [], []
    for scene in scenes:
        obs, fut = _split(scene, obs_len, horizon)
        for i in range(obs.shape[0]):
            preds.append(predict(obs[i], horizon))
            truths.append(fut[i])
    return _aggregate(preds, truths, dataset or name, horizon, len(scenes))


def predict_scenes(gen, scenes, eps=multipac.DEFAULT_EPS, min_weight=multipac.DEFAULT_MIN_WEIGHT,
                   chunk=64):
    """Run the generator and MultiPAC on scenes.

    Returns one entry per scene: ``(batch, mix, trees, paths)`` where batch
    and mix cover just that scene (normalised coordinates).
    """
    out = []
    obs_len = gen.cfg.obs_len
    for start in range(0, len(scenes), chunk):
        part = scenes[start:start + chunk]
        batch = make_batch(part, obs_len)
        mix = gen.generate(batch)
        trees = multipac.agent_trees(mix, eps, min_weight)
        paths = [multipac.extract_modal_paths(t) for t in trees]
        for s in range(len(part)):
            idx = np.flatnonzero(batch.scene_index == s)
            out.append((batch, idx, mix, trees, paths))
    return out


def evaluate_model(gen, scenes, horizon=None, eps=multipac.DEFAULT_EPS,
                   min_weight=multipac.DEFAULT_MIN_WEIGHT, dataset="model"):
    """ADE/FDE/MHD of the highest-weight modal path of every agent."""
    horizon = gen.cfg.pred_len if horizon is None else horizon
    if horizon != gen.cfg.pred_len:
        raise ValueError(f"model predicts {gen.cfg.pred_len} steps, asked to evaluate {horizon}")
    if not scenes:
        raise ValueError("nothing to evaluate")
    preds, truths = [], []
    for scene, (batch, idx, _mix, _trees, paths) in zip(scenes, predict_scenes(gen, scenes, eps, min_weight)):
        _, fut = _split(scene, gen.cfg.obs_len, horizon)
        for row, a in enumerate(idx):
            best = multipac.most_likely_path(paths[a])
            preds.append(batch.to_world(best.positions[None], np.array([a]))[0])
            truths.append(fut[row])
    return _aggregate(preds, truths, dataset, horizon, len(scenes))


def evaluate(predictor, scenes, horizon, obs_len=8, dataset="", **kw):
    """Evaluate a Generator or a baseline name ("cvm", "lin")."""
    if isinstance(predictor, str):
        return evaluate_baseline(predictor, scenes, horizon, obs_len, dataset)
    return evaluate_model(predictor, scenes, horizon, dataset=dataset or "model", **kw)


# -- prediction dumps ---------------------------------------------------------
#
# {"format": "trajgan-prediction", "version": 1, "scene": i, "source": str,
#  "frames": [...], "vehicle": [[x, y], ...] | null,
#  "agents": [{"id": int, "observed": [[x, y]...], "truth": [[x, y]...],
#              "gmm": [[{"pi", "mu", "sigma", "rho"} x K] x T],
#              "tree": {"layers": [[{"centroid", "weight", "members", "parent"}]]},
#              "modal_paths": [{"positions": [[x, y]...], "weight": w}],
#              "best_path": int}]}
# All coordinates are world-frame metres.

def _world_mixture(mix, batch, idx):
    arrs = mix.arrays()
    off = batch.offset[batch.scene_index[idx]]
    arrs = {k: v[idx] for k, v in arrs.items()}
    arrs["mux"] = arrs["mux"] + off[:, 0, None, None]
    arrs["muy"] = arrs["muy"] + off[:, 1, None, None]
    return arrs


def prediction_dumps(gen, scenes, eps=multipac.DEFAULT_EPS, min_weight=multipac.DEFAULT_MIN_WEIGHT):
    dumps = []
    obs_len, horizon = gen.cfg.obs_len, gen.cfg.pred_len
    for si, (scene, (batch, idx, mix, trees, paths)) in enumerate(
            zip(scenes, predict_scenes(gen, scenes, eps, min_weight))):
        peds = np.asarray(scene.peds, dtype=np.float64)
        wm = gmm.to_json_obj(_world_mixture(mix, batch, idx))["agents"]
        agents = []
        for row, a in enumerate(idx):
            off = batch.offset[batch.scene_index[a]]
            tree = trees[a].to_json_obj()
            for layer in tree["layers"]:
                for node in layer:
                    node["centroid"] = [node["centroid"][0] + float(off[0]), node["centroid"][1] + float(off[1])]
            mp = [{"positions": (p.positions + off).tolist(), "weight": float(p.weight)} for p in paths[a]]
            best = max(range(len(paths[a])), key=lambda j: (paths[a][j].weight, -j))
            truth = peds[row, obs_len:obs_len + horizon]
            agents.append({
                "id": int(scene.agent_ids[row]),
                "observed": peds[row, :obs_len].tolist(),
                "truth": truth.tolist() if truth.shape[0] else [],
                "gmm": wm[row],
                "tree": {"layers": tree["layers"]},
                "modal_paths": mp,
                "best_path": best,
            })
        dumps.append({
            "format": "trajgan-prediction",
            "version": 1,
            "scene": si,
            "source": scene.source,
            "frames": [int(f) for f in scene.frames],
            "vehicle": None if scene.vehicle is None else np.asarray(scene.vehicle).tolist(),
            "agents": agents,
        })
    return dumps


DUMP_REQUIRED = {"format", "version", "scene", "source", "frames", "vehicle", "agents"}
AGENT_REQUIRED = {"id", "observed", "truth", "gmm", "tree", "modal_paths", "best_path"}


def validate_dump(doc, k=None):
    """Structural check of a prediction dump; raises ValueError on violations."""
    missing = DUMP_REQUIRED - set(doc)
    if missing or doc["format"] != "trajgan-prediction":
        raise ValueError(f"bad prediction dump header (missing {sorted(missing)})")
    for ag in doc["agents"]:
        missing = AGENT_REQUIRED - set(ag)
        if missing:
            raise ValueError(f"agent entry missing {sorted(missing)}")
        horizon = len(ag["gmm"])
        for step in ag["gmm"]:
            if k is not None and len(step) != k:
                raise ValueError("wrong number of mixture components")
            for comp in step:
                if set(comp) != {"pi", "mu", "sigma", "rho"}:
                    raise ValueError("bad mixture component entry")
        if len(ag["tree"]["layers"]) != horizon:
            raise ValueError("tree depth differs from the GMM horizon")
        total = sum(p["weight"] for p in ag["modal_paths"])
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"modal path weights sum to {total}")
        for p in ag["modal_paths"]:
            if len(p["positions"]) != horizon:
                raise ValueError("modal path length differs from horizon")
        if not 0 <= ag["best_path"] < len(ag["modal_paths"]):
            raise ValueError("best_path index out of range")
    return doc
