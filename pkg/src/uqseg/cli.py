"""Command-line entry points.

Subcommands: generate, train, eval, sweep-d0, ablate. Exit code 0 on success,
1 on validation problems (bad config, malformed files, missing inputs), 2 when
training hits non-finite numbers.
"""

import argparse
import logging
import os
import sys

from . import pipeline
from .config import ConfigError, parse_config, write_effective
from .grids import GridFormatError
from .phantom import generate_split
from .pipeline import DivergenceError


def build_parser():
    parser = argparse.ArgumentParser(prog="uqseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a phantom dataset and its manifests")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train on the configured manifests")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--d0", required=True, type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep-d0", help="train+eval across boundary thresholds")
    p.add_argument("--config", required=True)
    p.add_argument("--values", required=True, help="comma-separated d0 list, e.g. 2,4,8,16")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="train+eval all supervision toggle combinations")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    return parser


def _require_manifests(config, *names):
    for name in names:
        path = getattr(config, f"{name}_manifest")
        if not path:
            raise ConfigError(f"{name}_manifest must be set in the config")
        if not os.path.exists(path):
            raise ConfigError(f"{name}_manifest points to a missing file: {path}")


def cmd_generate(args):
    config = parse_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    manifests = generate_split(
        config.phantom_spec(), config.n_train, config.n_val, config.n_test, args.out
    )
    write_effective(config, os.path.join(args.out, "effective_config.txt"))
    for name, path in manifests.items():
        print(f"{name}: {path}")
    return 0


def cmd_train(args):
    config = parse_config(args.config)
    _require_manifests(config, "train", "val")
    os.makedirs(args.out, exist_ok=True)
    pipeline.train(config, args.out)
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint.prnw')}")
    return 0


def cmd_eval(args):
    net, base_rate = pipeline.load_trained(args.checkpoint)
    samples = pipeline.load_dataset(args.manifest, net.config.num_classes)
    os.makedirs(args.out, exist_ok=True)
    pipeline.evaluate(net, base_rate, samples, args.d0, args.out)
    print(f"report: {os.path.join(args.out, 'report.csv')}")
    return 0


def cmd_sweep(args):
    config = parse_config(args.config)
    _require_manifests(config, "train", "val", "test")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --values list: {exc}") from exc
    if not values:
        raise ConfigError("--values must list at least one d0")
    path, _ = pipeline.sweep_d0(config, values, args.out)
    print(f"sweep table: {path}")
    return 0


def cmd_ablate(args):
    config = parse_config(args.config)
    _require_manifests(config, "train", "val", "test")
    path, _ = pipeline.ablate(config, args.out)
    print(f"ablation table: {path}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-d0": cmd_sweep,
    "ablate": cmd_ablate,
}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, GridFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
