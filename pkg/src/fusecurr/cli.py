"""Command-line entry point: ``fusecurr <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from . import trainer
from .config import TrainConfig, load_config, parse_bool
from .degrade import DegradationParams, degrade
from .errors import ConfigError, FusecurrError
from .imgio import load_pgm, save_pgm

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    for f in fields(TrainConfig):
        kind = {"int": int, "float": float, "bool": parse_bool}.get(f.type, str)
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None)


def _config_from(args) -> TrainConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(TrainConfig)}
    return load_config(args.config, **overrides)


def _unit(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is outside [0, 1]")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fusecurr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic IR/VI dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pretrain", help="teacher-guidance-only pre-training")
    _add_config_flags(p)

    p = sub.add_parser("train", help="pre-training followed by reinforced episodes")
    _add_config_flags(p)
    p.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")

    p = sub.add_parser("eval", help="fuse a dataset with a student checkpoint")
    p.add_argument("--ckpt", required=True, help="student checkpoint, or 'rule' for the rule teacher")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("metrics", help="per-image metric table")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sources", help="directory holding <stem>_ir.pgm/<stem>_vi.pgm (default: --data)")

    p = sub.add_parser("degrade", help="apply the degradation pipeline to one image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    for name, default in (("blur", 0.0), ("compress", 0.0), ("brightness", 0.5), ("contrast", 0.5), ("noise", 0.0)):
        p.add_argument(f"--{name}", type=_unit, default=default)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _run(args) -> None:
    if args.command == "synth":
        paths = trainer.make_synthetic_dataset(args.out, args.pairs, args.size, args.seed)
        print(f"wrote {len(paths)} images to {args.out}")
    elif args.command == "pretrain":
        cfg = _config_from(args)
        _, history, path = trainer.pretrain(cfg)
        for epoch, loss in enumerate(history):
            print(f"epoch {epoch} mean_l_t {loss:.6f}")
        print(f"checkpoint {path}")
    elif args.command == "train":
        cfg = _config_from(args)
        if args.dump_config:
            sys.stdout.write(cfg.dump())
            return
        result = trainer.train(cfg)
        print(f"student {result.student_path}")
        print(f"agent {result.agent_path}")
        print(f"log {result.log_path}")
    elif args.command == "eval":
        records = trainer.evaluate(args.ckpt, args.data, args.out)
        mean = records[-1]
        print(" ".join(f"{k}={mean[k]:.5f}" for k in trainer.EVAL_COLUMNS[1:]))
    elif args.command == "metrics":
        rows = trainer.metrics_table(args.data, args.out, args.sources)
        print(f"wrote {len(rows)} rows to {args.out}")
    elif args.command == "degrade":
        params = DegradationParams(args.blur, args.compress, args.brightness, args.contrast, args.noise)
        save_pgm(degrade(load_pgm(args.input), params, args.seed), args.out)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _run(args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FusecurrError, OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
