"""Command-line pipeline: synth, prep, split, pretrain, train, eval, rank.

Settings come from an optional INI file (``--config``) whose keys may sit in
any section; a flag of the same name overrides the file.  Every command that
writes an output directory also writes ``config.ini`` there with the fully
resolved settings, so ``oncf <command> --config <out>/config.ini`` replays it.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 non-finite training loss.
"""

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from typing import Optional

from . import checkpoint
from .data import (core_filter, leave_latest_out, load_triples, merge_repeats, read_split,
                   synthesize, write_split, write_triples)
from .errors import ConfigError, DatasetError, NumericError, ProtocolError, SamplingError
from .evaluation import MetricsHistory, evaluate, top_k_items, write_metrics
from .models import KINDS, ModelConfig, init_model
from .training import TrainConfig, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

TRIPLES_FILE = "triples.txt"
USER_MAP_FILE = "user_ids.txt"
ITEM_MAP_FILE = "item_ids.txt"
CONFIG_FILE = "config.ini"
PRETRAIN_CKPT = "pretrain.ckpt"
FINAL_CKPT = "final.ckpt"
TRAIN_LOG = "train_log.tsv"


@dataclass
class RunConfig:
    # model
    kind: str = "convncf"
    K: int = 64
    C: int = 32
    mlp_layers: int = 3
    # optimisation
    learning_rate: float = 0.05
    batch_size: int = 256
    epochs: int = 20
    lambda_embedding: float = 0.0
    lambda_hidden: float = 0.0
    lambda_output: float = 0.0
    no_reg_epochs: int = 1
    adagrad_epsilon: float = 1e-8
    adagrad_initial_accumulator: float = 0.0
    max_norm_w: Optional[float] = None
    # data
    input: Optional[str] = None
    split_dir: Optional[str] = None
    min_user: int = 2
    min_item: int = 1
    num_neg: int = 999
    # synthetic generator
    n_users: int = 200
    n_items: int = 300
    min_len: int = 10
    max_len: int = 30
    strength: float = 4.0
    popularity_skew: float = 1.0
    # run
    out_dir: Optional[str] = None
    pretrained: Optional[str] = None
    checkpoint: Optional[str] = None
    user: Optional[int] = None
    k: int = 10
    seed: int = 0
    threads: int = 1

    def model_config(self):
        return ModelConfig(self.kind, self.K, self.C, self.mlp_layers, self.seed).validate()

    def train_config(self):
        keys = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in keys}).validate()

    def digest_source(self):
        """The settings that determine numbers (paths excluded)."""
        return {"model": self.model_config().to_dict(), "train": self.train_config().to_dict()}


SECTIONS = {
    "model": ("kind", "K", "C", "mlp_layers"),
    "train": ("learning_rate", "batch_size", "epochs", "lambda_embedding", "lambda_hidden",
              "lambda_output", "no_reg_epochs", "adagrad_epsilon", "adagrad_initial_accumulator",
              "max_norm_w"),
    "data": ("input", "split_dir", "min_user", "min_item", "num_neg"),
    "synth": ("n_users", "n_items", "min_len", "max_len", "strength", "popularity_skew"),
    "run": ("out_dir", "pretrained", "checkpoint", "user", "k", "seed", "threads"),
}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw):
    if key not in _TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
        return None
    t = str(_TYPES[key])
    base = float if "float" in t else int if "int" in t else str
    try:
        return base(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {base.__name__}") from None


def read_config_file(path):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    out = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            out[key] = _convert(key, raw)
    return out


def write_config_file(path, cfg):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    values = asdict(cfg)
    for section, keys in SECTIONS.items():
        parser[section] = {k: "none" if values[k] is None else repr(values[k]) if isinstance(values[k], float)
                           else str(values[k]) for k in keys}
    with open(path, "w") as fh:
        parser.write(fh)


def resolve(args):
    """Defaults, then the config file, then explicitly passed flags."""
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _TYPES:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return RunConfig(**values)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_FLAGS = {
    "model": [("kind", str, "model kind: " + ", ".join(KINDS)), ("K", int, "embedding size"),
              ("C", int, "feature maps per conv layer"), ("mlp_layers", int, "tower depth for MLP kinds")],
    "train": [("learning_rate", float, None), ("batch_size", int, None), ("epochs", int, None),
              ("lambda_embedding", float, None), ("lambda_hidden", float, None),
              ("lambda_output", float, None), ("no_reg_epochs", int, "epochs before L2 switches on"),
              ("adagrad_epsilon", float, None), ("adagrad_initial_accumulator", float, None),
              ("max_norm_w", float, "clip ||w|| after each step")],
}


def _add(p, name, typ, help=None):
    spellings = [f"--{name}"]
    if "_" in name:
        spellings.append(f"--{name.replace('_', '-')}")
    p.add_argument(*spellings, dest=name, type=typ, default=None, help=help)


def build_parser():
    parser = _Parser(prog="oncf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="INI file of key = value settings")
        _add(p, "seed", int)
        return p

    p = command("synth", "write a planted rank-1 synthetic triples file")
    _add(p, "out_dir", str, "output directory (writes triples.txt)")
    for name, typ in (("n_users", int), ("n_items", int), ("min_len", int), ("max_len", int),
                      ("strength", float), ("popularity_skew", float)):
        _add(p, name, typ)

    p = command("prep", "merge repeats, core-filter and re-index a triples file")
    _add(p, "input", str, "raw 'user item timestamp' file")
    _add(p, "out_dir", str, "output directory")
    _add(p, "min_user", int)
    _add(p, "min_item", int)

    p = command("split", "hold out each user's latest item with sampled negatives")
    _add(p, "input", str, "prepared triples file")
    _add(p, "split_dir", str, "output directory for train.tsv / test.tsv")
    _add(p, "num_neg", int)

    for name, help in (("pretrain", "train MF-BPR embeddings"), ("train", "train a model")):
        p = command(name, help)
        _add(p, "split_dir", str)
        _add(p, "out_dir", str)
        _add(p, "threads", int, "evaluation threads")
        for flags in _FLAGS.values():
            for spec in flags:
                if name == "pretrain" and spec[0] in ("kind", "C", "mlp_layers"):
                    continue
                _add(p, *spec)
        if name == "train":
            _add(p, "pretrained", str, "checkpoint whose embeddings initialise the model")

    p = command("eval", "evaluate a checkpoint on a split")
    _add(p, "checkpoint", str)
    _add(p, "split_dir", str)
    _add(p, "out_dir", str)
    _add(p, "threads", int)

    p = command("rank", "top-k unseen items for one user")
    _add(p, "checkpoint", str)
    _add(p, "split_dir", str)
    _add(p, "user", int)
    _add(p, "k", int)
    return parser


def _need(cfg, *keys):
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join(f"--{k}" for k in missing))


def _echo(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_config_file(os.path.join(cfg.out_dir, CONFIG_FILE), cfg)


def cmd_synth(cfg):
    _need(cfg, "out_dir")
    data = synthesize(cfg.n_users, cfg.n_items, cfg.min_len, cfg.max_len, cfg.strength,
                      cfg.popularity_skew, cfg.seed)
    _echo(cfg)
    path = os.path.join(cfg.out_dir, TRIPLES_FILE)
    write_triples(path, data)
    print(path)


def cmd_prep(cfg):
    _need(cfg, "input", "out_dir")
    if not os.path.exists(cfg.input):
        raise DatasetError(f"input file {cfg.input} does not exist")
    log = load_triples(cfg.input)
    merged = merge_repeats(log.interactions)
    data, users, items = core_filter(merged, cfg.min_user, cfg.min_item, return_maps=True)
    _echo(cfg)
    write_triples(os.path.join(cfg.out_dir, TRIPLES_FILE), data)
    for name, raw_ids, kept in ((USER_MAP_FILE, log.user_ids, users), (ITEM_MAP_FILE, log.item_ids, items)):
        with open(os.path.join(cfg.out_dir, name), "w") as fh:
            for new, old in enumerate(kept):
                fh.write(f"{new}\t{raw_ids[int(old)]}\n")
    print(f"{len(users)} users, {len(items)} items, {len(data)} interactions")


def cmd_split(cfg):
    _need(cfg, "input", "split_dir")
    if not os.path.exists(cfg.input):
        raise DatasetError(f"input file {cfg.input} does not exist; run prep first")
    log = load_triples(cfg.input)
    ds = leave_latest_out(log.interactions, cfg.num_neg, cfg.seed)
    write_split(cfg.split_dir, ds)
    write_config_file(os.path.join(cfg.split_dir, CONFIG_FILE), cfg)
    print(f"{ds.n_users} users, {ds.n_items} items, {ds.n_train} training positives")


def _train_run(cfg, kind, pretrained=None):
    _need(cfg, "split_dir", "out_dir")
    ds = read_split(cfg.split_dir)
    cfg.kind = kind
    mc, tc = cfg.model_config(), cfg.train_config()
    table = None
    if pretrained:
        if not os.path.exists(pretrained):
            raise DatasetError(f"pretrained checkpoint {pretrained} does not exist; run pretrain first")
        table = checkpoint.load(pretrained, expect_K=mc.K).embeddings
    _echo(cfg)
    model = init_model(mc, ds.n_users, ds.n_items, pretrained=table, popularity=ds.popularity)
    log_path = os.path.join(cfg.out_dir, TRAIN_LOG)
    digest = cfg.digest_source()

    if kind == "itempop":
        history = MetricsHistory()
        history.append(evaluate(model, ds, history.ks, threads=cfg.threads))
    else:
        with open(log_path, "w") as fh:
            fh.write("epoch\tloss\tseconds\tHR@10\tNDCG@10\n")

            def log(line):
                fh.write(line + "\n")
                fh.flush()

            def on_epoch(epoch, m):
                checkpoint.save(os.path.join(cfg.out_dir, f"epoch_{epoch:03d}.ckpt"), m)

            _, history = fit(model, ds, tc, log=log, on_epoch=on_epoch, threads=cfg.threads)
    checkpoint.save(os.path.join(cfg.out_dir, FINAL_CKPT), model)
    if history.epochs:
        write_metrics(cfg.out_dir, history, kind, digest)
        print(json.dumps(history.tail_average(), sort_keys=True))
    return model


def cmd_pretrain(cfg):
    model = _train_run(cfg, "mf_bpr")
    checkpoint.save(os.path.join(cfg.out_dir, PRETRAIN_CKPT), model)


def cmd_train(cfg):
    _train_run(cfg, cfg.kind, cfg.pretrained)


def _load_for_eval(cfg):
    _need(cfg, "checkpoint", "split_dir")
    if not os.path.exists(cfg.checkpoint):
        raise DatasetError(f"checkpoint {cfg.checkpoint} does not exist")
    ds = read_split(cfg.split_dir)
    model = checkpoint.load(cfg.checkpoint)
    if (model.n_users, model.n_items) != (ds.n_users, ds.n_items):
        raise ConfigError(f"checkpoint is for {model.n_users} users x {model.n_items} items, "
                          f"split has {ds.n_users} x {ds.n_items}")
    return model, ds


def cmd_eval(cfg):
    _need(cfg, "out_dir")
    model, ds = _load_for_eval(cfg)
    cfg.kind, cfg.K, cfg.C = model.config.kind, model.config.K, model.config.C
    _echo(cfg)
    history = MetricsHistory()
    history.append(evaluate(model, ds, history.ks, threads=cfg.threads))
    write_metrics(cfg.out_dir, history, model.kind, model.config.to_dict(), stem="eval")
    print(json.dumps({"model": model.kind, **history.epochs[0]}, sort_keys=True))


def cmd_rank(cfg):
    _need(cfg, "user")
    model, ds = _load_for_eval(cfg)
    if cfg.k < 1:
        raise ConfigError("k must be >= 1")
    if not 0 <= cfg.user < ds.n_users:
        raise ConfigError(f"unknown user {cfg.user}; ids run 0..{ds.n_users - 1}")
    for item, score in top_k_items(model, ds, cfg.user, cfg.k):
        print(f"{item}\t{score!r}")


COMMANDS = {"synth": cmd_synth, "prep": cmd_prep, "split": cmd_split, "pretrain": cmd_pretrain,
            "train": cmd_train, "eval": cmd_eval, "rank": cmd_rank}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
    except NumericError as exc:
        print(f"oncf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"oncf: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ProtocolError, SamplingError, OSError) as exc:
        print(f"oncf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
