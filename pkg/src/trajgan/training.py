"""Likelihood warmup followed by alternating adversarial training.

Per batch in the adversarial phase: one generator forward pass (recorded on
a tape), modal paths extracted from its mixtures, one discriminator Adam step
on detached paths, then one generator Adam step on the adversarial fake term
plus ``alpha`` times the likelihood loss, scored by the updated discriminator.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import gmm, multipac
from . import numerics as nx
from .model import Discriminator, Generator, ModelConfig, make_batch

log = logging.getLogger(__name__)

SCORE_EPS = 1e-7


class ScoreRangeError(nx.NumericsError, ValueError):
    pass


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    warmup_epochs: int = 10
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    alpha: float = 0.1
    k: int = 6
    obs_len: int = 8
    pred_len: int = 12
    embed_dim: int = 16
    hidden_dim: int = 32
    disc_hidden_dim: int = 64
    mlp_dim: int = 64
    rel_embed_dim: int = 16
    relative_means: bool = False
    eps: float = multipac.DEFAULT_EPS
    min_weight: float = multipac.DEFAULT_MIN_WEIGHT
    clip_norm: float = 10.0
    checkpoint_every: int = 0
    seed: int = 0

    def validate(self):
        for name in ("epochs", "batch_size", "k", "obs_len", "pred_len", "embed_dim", "hidden_dim",
                     "disc_hidden_dim", "mlp_dim", "rel_embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        if self.lr <= 0 or self.eps <= 0 or self.clip_norm <= 0:
            raise ValueError("lr, eps and clip_norm must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.alpha == 0 and self.warmup_epochs > 0:
            raise ValueError("alpha = 0 leaves nothing to train during warmup; set warmup_epochs = 0")
        return self

    def model_config(self):
        return ModelConfig(obs_len=self.obs_len, pred_len=self.pred_len, k=self.k,
                           embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
                           disc_hidden_dim=self.disc_hidden_dim, mlp_dim=self.mlp_dim,
                           rel_embed_dim=self.rel_embed_dim, relative_means=self.relative_means)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    l_lh: float
    g_adv: float | None
    d_loss: float | None
    val_ade: float | None = None
    val_fde: float | None = None
    val_mhd: float | None = None


@dataclass
class TrainReport:
    records: list = field(default_factory=list)

    CSV_FIELDS = ("epoch", "l_lh", "g_adv", "d_loss", "val_ade", "val_fde", "val_mhd")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_FIELDS)
            for r in self.records:
                w.writerow(["" if getattr(r, f) is None else repr(getattr(r, f)) for f in self.CSV_FIELDS])

    @classmethod
    def read_csv(cls, path):
        rep = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                vals = {k: (None if v == "" else float(v)) for k, v in row.items()}
                vals["epoch"] = int(vals["epoch"])
                rep.records.append(EpochRecord(**vals))
        return rep


# -- losses -------------------------------------------------------------------

def _guard(scores):
    d = scores.data
    if not np.all(np.isfinite(d)) or np.any(d < 0.0) or np.any(d > 1.0):
        raise ScoreRangeError("discriminator scores must lie in [0, 1]")


def _fake_terms(fake, weights):
    _guard(fake)
    w = nx.as_tensor(weights)
    if np.any(w.data < 0.0) or np.any(w.data > 1.0 + 1e-9):
        raise ScoreRangeError("modal path weights must lie in [0, 1]")
    wd = nx.clip(nx.mul(w, nx.clip(fake, SCORE_EPS, 1.0 - SCORE_EPS)), 0.0, 1.0 - SCORE_EPS)
    return nx.log(nx.sub(1.0, wd))


def loss_adversarial_discriminator(real, fake, weights):
    """-(log D(real) + sum_m log(1 - w_m D(fake_m))), averaged over agents.

    ``real`` holds one score per agent; ``fake``/``weights`` one per modal path.
    """
    real = nx.as_tensor(real)
    fake = nx.as_tensor(fake)
    _guard(real)
    n_agents = real.shape[0]
    real_term = nx.sum(nx.log(nx.clip(real, SCORE_EPS, 1.0 - SCORE_EPS)))
    total = nx.add(real_term, nx.sum(_fake_terms(fake, weights)))
    return nx.mul(total, -1.0 / n_agents)


def loss_adversarial_generator(fake, weights, n_agents):
    """sum_m log(1 - w_m D(fake_m)) averaged over agents; minimised by the generator."""
    fake = nx.as_tensor(fake)
    return nx.mul(nx.sum(_fake_terms(fake, weights)), 1.0 / n_agents)


# -- helpers ------------------------------------------------------------------

def fake_tracks(batch, paths):
    """Observed segment of each path's agent followed by the (differentiable) path."""
    obs = nx.Tensor(batch.obs[paths.agent])
    return nx.concat([obs, paths.positions], axis=1)


def real_tracks(batch):
    return np.concatenate([batch.obs, batch.future], axis=1)


def combined_generator_loss(gen, disc, batch, cfg, trees=None):
    """Generator objective ``L_adv_fake + alpha * L_lh`` on an active tape.

    Returns ``(loss, l_lh, g_adv, mix, trees, paths)``. ``L_lh`` is the
    summed NLL divided by the number of scenes in the batch.
    """
    mix = gen.generate(batch)
    l_lh = nx.mul(gmm.nll_loss(mix, batch.future), 1.0 / batch.n_scenes)
    if trees is None:
        trees = multipac.agent_trees(mix, cfg.eps, cfg.min_weight)
    paths = multipac.path_tensors(mix, trees)
    fake = disc.score_tracks(fake_tracks(batch, paths))
    g_adv = loss_adversarial_generator(fake, paths.weights, batch.n_agents)
    return nx.add(g_adv, nx.mul(l_lh, cfg.alpha)), l_lh, g_adv, mix, trees, paths


def _clip(grads, cfg):
    grads, _ = nx.clip_by_global_norm(grads, cfg.clip_norm)
    return grads


def _batches(n, size, rng):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    opt_g: nx.AdamState
    opt_d: nx.AdamState
    rng: np.random.Generator
    report: TrainReport
    epoch: int = 0


def init_state(cfg):
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    mcfg = cfg.model_config()
    gen = Generator.create(mcfg, rng)
    disc = Discriminator.create(mcfg, rng)
    return TrainState(gen, disc, nx.AdamState(lr=cfg.lr), nx.AdamState(lr=cfg.lr), rng, TrainReport())


def train_epoch(state, scenes, cfg):
    """One pass over ``scenes``; appends and returns the epoch record."""
    gen, disc = state.generator, state.discriminator
    epoch = state.epoch + 1
    adversarial = epoch > cfg.warmup_epochs
    lh_sum, g_sum, d_sum, n_scenes, n_batches = 0.0, 0.0, 0.0, 0, 0
    for bi, idx in enumerate(_batches(len(scenes), cfg.batch_size, state.rng)):
        batch = make_batch([scenes[i] for i in idx], cfg.obs_len, cfg.pred_len)
        try:
            tape_g = nx.Tape()
            if not adversarial:
                with tape_g:
                    mix = gen.generate(batch)
                    l_lh = nx.mul(gmm.nll_loss(mix, batch.future), 1.0 / batch.n_scenes)
                grads = nx.backward(tape_g, l_lh, gen.params)
                nx.adam_step(gen.params, _clip(grads, cfg), state.opt_g)
            else:
                with tape_g:
                    mix = gen.generate(batch)
                    l_lh = nx.mul(gmm.nll_loss(mix, batch.future), 1.0 / batch.n_scenes)
                    trees = multipac.agent_trees(mix, cfg.eps, cfg.min_weight)
                    paths = multipac.path_tensors(mix, trees)
                    fakes = fake_tracks(batch, paths)

                tape_d = nx.Tape()
                with tape_d:
                    d_real = disc.score_tracks(real_tracks(batch))
                    d_fake = disc.score_tracks(nx.Tensor(fakes.data))
                    d_loss = loss_adversarial_discriminator(d_real, d_fake, paths.weights.data)
                grads_d = nx.backward(tape_d, d_loss, disc.params)
                nx.adam_step(disc.params, _clip(grads_d, cfg), state.opt_d)

                with tape_g:
                    g_adv = loss_adversarial_generator(disc.score_tracks(fakes), paths.weights, batch.n_agents)
                    total = nx.add(g_adv, nx.mul(l_lh, cfg.alpha))
                grads = nx.backward(tape_g, total, gen.params)
                nx.adam_step(gen.params, _clip(grads, cfg), state.opt_g)
                g_sum += float(g_adv.data) * len(idx)
                d_sum += float(d_loss.data) * len(idx)
        except nx.NumericsError as exc:
            raise TrainingAborted(f"epoch {epoch} batch {bi}: {exc}") from exc
        lh_sum += float(l_lh.data) * len(idx)
        n_scenes += len(idx)
        n_batches += 1
    rec = EpochRecord(
        epoch=epoch,
        l_lh=lh_sum / n_scenes,
        g_adv=g_sum / n_scenes if adversarial else None,
        d_loss=d_sum / n_scenes if adversarial else None,
    )
    for v in (rec.l_lh, rec.g_adv, rec.d_loss):
        if v is not None and not math.isfinite(v):
            raise TrainingAborted(f"epoch {epoch}: non-finite loss")
    state.epoch = epoch
    state.report.records.append(rec)
    return rec


def save_checkpoint(path, state, cfg):
    params = {**state.generator.params, **state.discriminator.params}
    meta = {
        "epoch": state.epoch,
        "train_config": cfg.to_dict(),
        "model_config": state.generator.cfg.to_dict(),
        "rng_state": state.rng.bit_generator.state,
    }
    nx.checkpoint.save(path, params, meta, {"generator": state.opt_g, "discriminator": state.opt_d})


def load_checkpoint(path, cfg=None):
    """Restore a TrainState (report left empty) from a checkpoint file."""
    params, meta, opts = nx.checkpoint.load(path)
    mcfg = ModelConfig.from_dict(meta["model_config"])
    if cfg is not None and cfg.model_config() != mcfg:
        raise ValueError("checkpoint model configuration does not match the training configuration")
    gen_p = {k: nx.Tensor(v, name=k) for k, v in params.items() if k.startswith("generator.")}
    disc_p = {k: nx.Tensor(v, name=k) for k, v in params.items() if k.startswith("discriminator.")}
    rng = np.random.default_rng()
    if "rng_state" in meta:
        rng.bit_generator.state = meta["rng_state"]
    lr = cfg.lr if cfg is not None else 1e-3
    state = TrainState(
        Generator(mcfg, gen_p), Discriminator(mcfg, disc_p),
        opts.get("generator", nx.AdamState(lr=lr)), opts.get("discriminator", nx.AdamState(lr=lr)),
        rng, TrainReport(), epoch=int(meta.get("epoch", 0)),
    )
    return state


def train(scenes, cfg, val_scenes=None, state=None, checkpoint_dir=None, on_epoch=None):
    """Train to ``cfg.epochs`` total epochs; returns the final TrainState.

    Pass ``state`` (e.g. from :func:`load_checkpoint`) to resume; epoch
    numbering continues from it.
    """
    cfg.validate()
    if not scenes:
        raise ValueError("training set is empty")
    if state is None:
        state = init_state(cfg)
    from .evaluate import evaluate_model

    while state.epoch < cfg.epochs:
        rec = train_epoch(state, scenes, cfg)
        if val_scenes:
            row = evaluate_model(state.generator, val_scenes, cfg.pred_len, cfg.eps, cfg.min_weight)
            rec.val_ade, rec.val_fde, rec.val_mhd = row.ade, row.fde, row.mhd
        log.info("epoch %d l_lh=%.4f g_adv=%s d_loss=%s val_ade=%s", rec.epoch, rec.l_lh,
                 rec.g_adv, rec.d_loss, rec.val_ade)
        if checkpoint_dir and cfg.checkpoint_every and rec.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(checkpoint_dir, f"checkpoint_{rec.epoch:04d}.json"), state, cfg)
        if on_epoch is not None:
            on_epoch(state, rec)
    return state
