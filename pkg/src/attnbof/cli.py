"""Command-line entry points: train, eval, gradcheck, gen, inspect-attention.

Runs are declarative: a flat ``key = value`` config file describes the model,
the training protocol, or a generator (schema in the README).  Machine output
(JSON) goes to stdout, human-readable tables to stderr.  Exit codes: 0 ok,
1 a check or training failure, 2 usage or I/O errors.  Commands are
deterministic given their flags and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import model as model_mod
from . import numerics
from . import train as train_mod
from .errors import ConfigError, DataFormatError, TrainingDiverged

GRAD_TOLERANCE = 1e-4

_SCHEMA: dict[str, type] = {
    # model
    "feature_dim": int, "classes": int, "codewords": int, "attention": str,
    "mode": str, "latent_dim": int, "heads": int, "dropout_rate": float,
    "frontend": str, "conv_width": int, "conv_channels": int, "seq_len": int,
    # training
    "epochs": int, "batch_size": int, "learning_rate": float,
    "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
    "folds": int, "holdout_fraction": float,
    # generators
    "generator": str, "length": int, "count": int,
    "signal_fraction": float, "snr": float,
    # shared
    "seed": int,
}


def parse_config(path: str) -> dict:
    conf: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                conf[key] = _SCHEMA[key](value)
            except ValueError as exc:
                raise ConfigError(
                    f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return conf


def _uniform_length(dataset: data_mod.LabeledSequenceSet) -> int | None:
    lengths = {x.shape[1] for x, _ in dataset.items}
    return lengths.pop() if len(lengths) == 1 else None


def _model_config(conf: dict, dataset: data_mod.LabeledSequenceSet | None,
                  seed: int) -> model_mod.ModelConfig:
    fields = {k: conf[k] for k in
              ("codewords", "attention", "mode", "latent_dim", "heads",
               "dropout_rate", "frontend", "conv_width", "conv_channels",
               "seq_len") if k in conf}
    if dataset is not None:
        fields.setdefault("feature_dim", dataset.feature_dim)
        fields.setdefault("classes", dataset.classes)
    for key in ("feature_dim", "classes"):
        if key in conf:
            fields[key] = conf[key]
        elif key not in fields:
            raise ConfigError(f"config needs {key!r} (no dataset to derive it from)")
    cfg = model_mod.ModelConfig(seed=seed, **fields)
    if cfg.needs_seq_len and cfg.seq_len is None and dataset is not None:
        n = _uniform_length(dataset)
        if n is None:
            raise ConfigError(
                "sequences have mixed lengths; set seq_len and pad_or_clip the data")
        cfg.seq_len = n
    cfg.validate()
    return cfg


def _train_config(conf: dict, seed: int) -> train_mod.TrainConfig:
    fields = {k: conf[k] for k in
              ("epochs", "batch_size", "learning_rate", "adam_beta1",
               "adam_beta2", "adam_eps", "folds", "holdout_fraction") if k in conf}
    cfg = train_mod.TrainConfig(seed=seed, **fields)
    cfg.validate()
    return cfg


def _seed(args, conf: dict) -> int:
    if args.seed is not None:
        return args.seed
    return conf.get("seed", 0)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    conf = parse_config(args.config)
    dataset = data_mod.load_features(args.data)
    seed = _seed(args, conf)
    model_cfg = _model_config(conf, dataset, seed)
    train_cfg = _train_config(conf, seed)
    net = model_mod.Model.build(model_cfg)
    net, report = train_mod.train(net, dataset, train_cfg)
    model_mod.save_checkpoint(net, args.out)
    print(report.to_markdown(), file=sys.stderr)
    out = report.to_dict()
    out["checkpoint"] = args.out
    print(json.dumps(out, indent=2))
    return 0


def cmd_eval(args) -> int:
    net = model_mod.load_checkpoint(args.checkpoint)
    dataset = data_mod.load_features(args.data)
    acc, f1 = train_mod.evaluate(net, dataset)
    print(json.dumps({"items": len(dataset), "accuracy": acc, "macro_f1": f1},
                     indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    conf = parse_config(args.config)
    seed = _seed(args, conf)
    model_cfg = _model_config(conf, None, seed)
    rng = np.random.default_rng(seed)
    n = model_cfg.seq_len if model_cfg.seq_len is not None else 8
    x = rng.standard_normal((model_cfg.feature_dim, n))
    label = int(rng.integers(model_cfg.classes))
    net = model_mod.Model.build(model_cfg)
    op = model_mod.loss_op(net, x, label)
    report = numerics.grad_check(op, list(net.params.values()))
    groups = dict(zip(net.params, report.per_input))
    passed = report.finite and report.max_rel_err <= GRAD_TOLERANCE
    print(json.dumps({
        "attention": model_cfg.attention,
        "max_rel_err": report.max_rel_err,
        "tolerance": GRAD_TOLERANCE,
        "pass": passed,
        "groups": groups,
    }, indent=2))
    for name, err in groups.items():
        status = "ok" if err <= GRAD_TOLERANCE else "FAIL"
        print(f"{status:4s} {name:24s} {err:.3e}", file=sys.stderr)
    return 0 if passed else 1


def cmd_gen(args) -> int:
    conf = parse_config(args.config)
    seed = _seed(args, conf)
    name = conf.get("generator")
    if name == "noisy":
        dataset = data_mod.gen_noisy_timestamps(
            classes=conf.get("classes", 3),
            feature_dim=conf.get("feature_dim", 8),
            length=conf.get("length", 30),
            signal_fraction=conf.get("signal_fraction", 0.1),
            snr=conf.get("snr", 2.0),
            count=conf.get("count", 600),
            seed=seed)
    elif name == "order":
        dataset = data_mod.gen_order_task(
            feature_dim=conf.get("feature_dim", 4),
            length=conf.get("length", 20),
            count=conf.get("count", 400),
            seed=seed)
    else:
        raise ConfigError(
            f"unknown generator {name!r}; expected one of {data_mod.GENERATORS}")
    data_mod.save_features(dataset, args.out)
    print(json.dumps({"path": args.out, "items": len(dataset),
                      "classes": dataset.classes, "checksum": dataset.checksum()},
                     indent=2))
    return 0


def _write_csv(path: Path, m: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in m:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _write_pgm(path: Path, m: np.ndarray) -> None:
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        scaled = np.round((m - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(m)
    pixels = scaled.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def cmd_inspect_attention(args) -> int:
    net = model_mod.load_checkpoint(args.checkpoint)
    dataset = data_mod.load_features(args.data)
    if not 0 <= args.item < len(dataset):
        raise ConfigError(f"item {args.item} out of range [0, {len(dataset)})")
    x, _ = dataset.items[args.item]
    matrices = net.attention_matrices(x)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, m in enumerate(matrices):
        csv_path = out_dir / f"head{i}.csv"
        pgm_path = out_dir / f"head{i}.pgm"
        _write_csv(csv_path, m)
        _write_pgm(pgm_path, m)
        written += [str(csv_path), str(pgm_path)]
    print(json.dumps({"attention": net.config.attention, "heads": len(matrices),
                      "files": written}, indent=2))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnbof",
        description="Bag-of-features sequence classification with learned attention")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a feature file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the full loss gradient")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen", help="generate a synthetic feature file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("inspect-attention",
                       help="export per-head attention matrices as CSV and PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--item", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_inspect_attention)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DataFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
