"""Command line entry points: run, matrix, gen-benchmark.

Examples:
  opal run --config configs/toy.txt --out results/
  opal run --config configs/toy.txt --seed 7 --override acquisition.scorer=entropy
  opal matrix --config configs/toy.txt --axis filtering=on,off --axis scorer=vr,random
  opal gen-benchmark --spec configs/toy.txt --out data/toy.csv
"""

from __future__ import annotations

import argparse
import logging
import sys

from .configio import load_kv_file, parse_value
from .experiment import (
    benchmark_from_mapping,
    load_experiment_config,
    run_experiment,
    run_variant_matrix,
)
from .pool import generate_benchmark, save_dataset


def _add_run(sub):
    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="replace the config's seed list")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")


def _add_matrix(sub):
    p = sub.add_parser("matrix", help="run a variant matrix over a shared-seed base config")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", action="append", required=True, metavar="NAME=V1,V2",
                   help="repeatable, e.g. --axis filtering=on,off")
    p.add_argument("--out", default=None)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")


def _add_gen(sub):
    p = sub.add_parser("gen-benchmark", help="generate a synthetic benchmark dataset file")
    p.add_argument("--spec", required=True, help="config file holding benchmark.* keys")
    p.add_argument("--out", required=True, help="output dataset path (csv)")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="opal")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_matrix(sub)
    _add_gen(sub)
    args = parser.parse_args(argv)

    if args.command == "run":
        overrides = list(args.override)
        if args.seed is not None:
            overrides.append(f"seeds={args.seed}")
        config = load_experiment_config(args.config, overrides)
        run_experiment(config, out_dir=args.out)
        return 0

    if args.command == "matrix":
        config = load_experiment_config(args.config, list(args.override))
        axes = {}
        for item in args.axis:
            name, _, values = item.partition("=")
            parsed = parse_value(values)
            axes[name.strip()] = parsed if isinstance(parsed, list) else [parsed]
        run_variant_matrix(config, axes, out_dir=args.out)
        return 0

    if args.command == "gen-benchmark":
        spec = benchmark_from_mapping(load_kv_file(args.spec))
        if spec is None:
            print("spec file must configure benchmark.*", file=sys.stderr)
            return 2
        dataset, pool, test_set = generate_benchmark(spec)
        save_dataset(args.out, dataset, pool, test_set)
        print(f"wrote {len(dataset)} pool + {len(test_set)} test examples to {args.out}")
        return 0

    return 2  # pragma: no cover


if __name__ == "__main__":
    raise SystemExit(main())
