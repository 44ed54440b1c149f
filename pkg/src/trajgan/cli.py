"""Command-line entry point: ``trajgan {gen-data,train,eval,predict,multipac}``.

Every command reads an optional JSON run configuration (``--config``),
applies command-line overrides on top and writes the fully resolved
configuration to ``<out>/config.json``. Feeding that file back with
``--config`` reproduces the run.

Exit codes: 0 success, 2 usage or configuration error, 3 file I/O or
format error, 4 training aborted on a numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields

from . import data, evaluate, multipac
from .numerics.checkpoint import CheckpointError
from .training import TrainConfig, TrainingAborted, TrainReport, load_checkpoint, save_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

log = logging.getLogger("trajgan")


class UsageError(Exception):
    """Bad configuration or arguments; maps to exit code 2."""


class InputOutputError(Exception):
    """Unreadable or unwritable files; maps to exit code 3."""


def _sfm_defaults():
    d = asdict(data.SfmConfig())
    d.pop("seed")
    return d


def _train_defaults():
    d = TrainConfig().to_dict()
    d.pop("seed")
    return d


@dataclass
class RunConfig:
    """All knobs of a run.

    ``sfm`` and ``train`` mirror :class:`trajgan.data.SfmConfig` and
    :class:`trajgan.training.TrainConfig` (without their ``seed``, which is
    the single top-level ``seed``). Defaults:

    * ``n_scenes`` 100 synthetic scenes, ``with_vehicle`` false,
      ``dataset_file`` "scenes.txt" (name of the gen-data output)
    * ``data`` / ``val_data``: trajectory text files (train, eval, predict
      read ``data``); ``val_fraction`` 0 holds out nothing
    * ``stride``: window stride in frames; null uses the prediction horizon
      for training and 1 for eval/predict. ``downsample`` 1 (no frame
      skipping), ``flip_augment`` false
    * ``checkpoint``: model for eval/predict; ``resume``: checkpoint to
      continue training from
    * ``baseline``: "cvm" or "lin" to evaluate without a model;
      ``horizon``: evaluation horizon (defaults to the model's)
    * ``dataset_name``: label written into metric rows; ``max_scenes``:
      cap on predicted scenes (null = all)
    * ``gmm_file``: mixture JSON for the multipac file mode
    """
    seed: int = 0
    n_scenes: int = 100
    with_vehicle: bool = False
    dataset_file: str = "scenes.txt"
    data: str | None = None
    val_data: str | None = None
    val_fraction: float = 0.0
    stride: int | None = None
    downsample: int = 1
    flip_augment: bool = False
    checkpoint: str | None = None
    resume: str | None = None
    baseline: str | None = None
    horizon: int | None = None
    dataset_name: str = ""
    max_scenes: int | None = None
    gmm_file: str | None = None
    sfm: dict = field(default_factory=_sfm_defaults)
    train: dict = field(default_factory=_train_defaults)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for k, v in d.items():
            if k in ("sfm", "train"):
                base = getattr(cfg, k)
                extra = set(v) - set(base)
                if extra:
                    raise UsageError(f"unknown {k} config keys: {sorted(extra)}")
                base.update(v)
            else:
                setattr(cfg, k, v)
        return cfg

    def to_dict(self):
        return asdict(self)

    def sfm_config(self):
        return data.SfmConfig(**{**self.sfm, "seed": self.seed})

    def train_config(self):
        return TrainConfig(**{**self.train, "seed": self.seed})


def load_run_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputOutputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    return RunConfig.from_dict(doc)


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _prepare_out(out):
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise InputOutputError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise InputOutputError(f"output directory {out} is not writable")


def _echo(cfg, out):
    _dump_json(cfg.to_dict(), os.path.join(out, "config.json"))


def _read_scenes(path, obs_len, pred_len, cfg, training=False):
    if not path:
        raise UsageError("no dataset given (set 'data' or pass --data)")
    if not os.path.isfile(path):
        raise UsageError(f"dataset {path} does not exist")
    tracks = data.load_ethucy(path)
    if cfg.downsample > 1:
        tracks = data.downsample(tracks, cfg.downsample)
    stride = cfg.stride or (pred_len if training else 1)
    return data.window_scenes(tracks, obs_len, pred_len, stride=stride,
                              source=os.path.basename(path))


# -- commands -----------------------------------------------------------------

def cmd_gen_data(cfg, out):
    sfm = cfg.sfm_config()
    scenes = data.generate_sfm(sfm, cfg.n_scenes, with_vehicle=cfg.with_vehicle)
    tracks = data.scenes_to_tracks(scenes, frame_step=sfm.frame_step)
    path = os.path.join(out, cfg.dataset_file)
    data.write_tracks(tracks, path)
    counts = {name: 0 for name in sfm.mix}
    for s in scenes:
        counts[s.source] = counts.get(s.source, 0) + 1
    n_agents = sum(s.n_agents for s in scenes)
    _dump_json({"scenes": len(scenes), "agents": n_agents, "templates": counts,
                "scene_templates": [s.source for s in scenes]},
               os.path.join(out, "manifest.json"))
    print(f"wrote {len(scenes)} scenes, {n_agents} agents to {path}")
    return {"scenes": len(scenes), "agents": n_agents, "templates": counts}


def cmd_train(cfg, out):
    tcfg = cfg.train_config()
    try:
        tcfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    scenes = _read_scenes(cfg.data, tcfg.obs_len, tcfg.pred_len, cfg, training=True)
    if cfg.val_data:
        val = _read_scenes(cfg.val_data, tcfg.obs_len, tcfg.pred_len, cfg)
    elif cfg.val_fraction > 0:
        cut = len(scenes) - int(round(cfg.val_fraction * len(scenes)))
        scenes, val = scenes[:cut], scenes[cut:]
    else:
        val = []
    if cfg.flip_augment:
        scenes = data.augment_flip(scenes, cfg.seed)
    if not scenes:
        raise UsageError("dataset has no complete scene windows")

    state, report = None, TrainReport()
    if cfg.resume:
        if not os.path.isfile(cfg.resume):
            raise UsageError(f"resume checkpoint {cfg.resume} does not exist")
        try:
            state = load_checkpoint(cfg.resume, tcfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        prev = os.path.join(os.path.dirname(cfg.resume), "report.csv")
        if os.path.isfile(prev):
            report = TrainReport.read_csv(prev)
            report.records = [r for r in report.records if r.epoch <= state.epoch]
        state.report = report
        print(f"resuming at epoch {state.epoch}")

    ckpt_dir = os.path.join(out, "checkpoints")
    if tcfg.checkpoint_every:
        os.makedirs(ckpt_dir, exist_ok=True)
    report_path = os.path.join(out, "report.csv")

    def on_epoch(st, rec):
        st.report.write_csv(report_path)
        print(f"epoch {rec.epoch:4d}  l_lh {rec.l_lh:.4f}"
              + (f"  g_adv {rec.g_adv:.4f}  d_loss {rec.d_loss:.4f}" if rec.g_adv is not None else "")
              + (f"  val_ade {rec.val_ade:.4f}" if rec.val_ade is not None else ""))

    try:
        state = train(scenes, tcfg, val_scenes=val, state=state, checkpoint_dir=ckpt_dir, on_epoch=on_epoch)
    except TrainingAborted:
        if state is not None:
            state.report.write_csv(report_path)
        raise
    save_checkpoint(os.path.join(out, "checkpoint.json"), state, tcfg)
    state.report.write_csv(report_path)
    return state


def _load_model(path):
    if not path:
        raise UsageError("a checkpoint is required (set 'checkpoint' or pass --checkpoint)")
    if not os.path.isfile(path):
        raise UsageError(f"checkpoint {path} does not exist")
    return load_checkpoint(path).generator


def cmd_eval(cfg, out):
    tcfg = cfg.train_config()
    if cfg.baseline:
        if cfg.baseline not in evaluate.BASELINES:
            raise UsageError(f"unknown baseline {cfg.baseline!r}; choose from {sorted(evaluate.BASELINES)}")
        horizon = cfg.horizon or tcfg.pred_len
        scenes = _read_scenes(cfg.data, tcfg.obs_len, horizon, cfg)
        if not scenes:
            raise UsageError("dataset has no complete scene windows")
        row = evaluate.evaluate_baseline(cfg.baseline, scenes, horizon, tcfg.obs_len,
                                         cfg.dataset_name or cfg.baseline)
    else:
        gen = _load_model(cfg.checkpoint)
        horizon = cfg.horizon or gen.cfg.pred_len
        if horizon != gen.cfg.pred_len:
            raise UsageError(f"checkpoint predicts {gen.cfg.pred_len} steps but horizon {horizon} was requested")
        scenes = _read_scenes(cfg.data, gen.cfg.obs_len, horizon, cfg)
        if not scenes:
            raise UsageError("dataset has no complete scene windows")
        row = evaluate.evaluate_model(gen, scenes, horizon, tcfg.eps, tcfg.min_weight,
                                      dataset=cfg.dataset_name or "model")
    evaluate.write_metrics([row], os.path.join(out, "metrics.csv"), os.path.join(out, "metrics.json"))
    print(f"{row.dataset} h={row.horizon}: ADE {row.ade:.4f}  FDE {row.fde:.4f}  MHD {row.mhd:.4f}"
          f"  ({row.scenes} scenes, {row.agents} agents)")
    return row


def cmd_predict(cfg, out):
    tcfg = cfg.train_config()
    gen = _load_model(cfg.checkpoint)
    if cfg.horizon and cfg.horizon != gen.cfg.pred_len:
        raise UsageError(f"checkpoint predicts {gen.cfg.pred_len} steps but horizon {cfg.horizon} was requested")
    scenes = _read_scenes(cfg.data, gen.cfg.obs_len, gen.cfg.pred_len, cfg)
    if cfg.max_scenes is not None:
        scenes = scenes[:cfg.max_scenes]
    pred_dir = os.path.join(out, "predictions")
    os.makedirs(pred_dir, exist_ok=True)
    dumps = evaluate.prediction_dumps(gen, scenes, tcfg.eps, tcfg.min_weight)
    for doc in dumps:
        _dump_json(doc, os.path.join(pred_dir, f"scene_{doc['scene']:05d}.json"))
    print(f"wrote {len(dumps)} prediction dumps to {pred_dir}")
    return dumps


def cmd_multipac(cfg, out):
    tcfg = cfg.train_config()
    if not cfg.gmm_file or not os.path.isfile(cfg.gmm_file):
        raise UsageError("multipac needs an existing mixture file (set 'gmm_file' or pass --gmm)")
    path = os.path.join(out, "modal_trees.json")
    trees = multipac.trees_from_gmm_file(cfg.gmm_file, path, tcfg.eps, tcfg.min_weight)
    print(f"wrote modal-path trees for {len(trees)} agents to {path}")
    return trees


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "multipac": cmd_multipac,
}


# -- argument parsing ---------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="trajgan", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic social-force dataset")
    p.add_argument("--n-scenes", type=int, dest="n_scenes")
    p.add_argument("--with-vehicle", action="store_true", default=None, dest="with_vehicle")
    p.add_argument("--n-frames", type=int, dest="sfm.n_frames")
    p.add_argument("--dataset-file", dest="dataset_file")

    p = sub.add_parser("train", parents=[common], help="train a generator/discriminator pair")
    p.add_argument("--data")
    p.add_argument("--val-data", dest="val_data")
    p.add_argument("--epochs", type=int, dest="train.epochs")
    p.add_argument("--warmup-epochs", type=int, dest="train.warmup_epochs")
    p.add_argument("--batch-size", type=int, dest="train.batch_size")
    p.add_argument("--lr", type=float, dest="train.lr")
    p.add_argument("--alpha", type=float, dest="train.alpha")
    p.add_argument("--checkpoint-every", type=int, dest="train.checkpoint_every")
    p.add_argument("--resume")
    p.add_argument("--stride", type=int)

    p = sub.add_parser("eval", parents=[common], help="ADE/FDE/MHD of a model or baseline")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=sorted(evaluate.BASELINES))
    p.add_argument("--horizon", type=int)
    p.add_argument("--dataset-name", dest="dataset_name")
    p.add_argument("--stride", type=int)

    p = sub.add_parser("predict", parents=[common], help="per-scene JSON dumps of mixtures and modal paths")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--max-scenes", type=int, dest="max_scenes")

    p = sub.add_parser("multipac", parents=[common], help="modal-path trees from a mixture JSON file")
    p.add_argument("--gmm", dest="gmm_file")
    p.add_argument("--eps", type=float, dest="train.eps")
    p.add_argument("--min-weight", type=float, dest="train.min_weight")
    return parser


_GLOBAL = {"config", "out", "command", "verbose"}


def resolve_config(args):
    cfg = load_run_config(args.config)
    for key, val in vars(args).items():
        if key in _GLOBAL or val is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            getattr(cfg, section)[name] = val
        else:
            setattr(cfg, key, val)
    # normalise through the typed configs so bad values fail before any work
    try:
        cfg.sfm_config().validate()
        TrainConfig(**{**cfg.train, "seed": cfg.seed}).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        _prepare_out(args.out)
        _echo(cfg, args.out)
        COMMANDS[args.command](cfg, args.out)
    except (InputOutputError, OSError, CheckpointError, data.TrajectoryParseError,
            json.JSONDecodeError) as exc:
        print(f"trajgan: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except UsageError as exc:
        print(f"trajgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"trajgan: training aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"trajgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
