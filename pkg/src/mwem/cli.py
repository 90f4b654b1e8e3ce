"""Command line interface: ``mwem run | sweep | export | bench``.

Exit codes: 0 success, 2 bad configuration or data, 3 budget or resource limit.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import BudgetExhausted, ConfigError, DomainError, ResourceError

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE = 0, 2, 3

# Flags that map one to one onto ExperimentConfig fields.
_FIELDS = {
    "input": str, "schema": str, "mode": str, "workload": str, "epsilon": float,
    "delta": float, "T": int, "seed": int, "reps": int, "out": str, "jobs": int,
    "algorithm": str, "output_mode": str, "replay_passes": int, "binarize": str,
    "histogram_init_fraction": float,
}


def _experiment_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--input", help="CSV file with a header row")
    p.add_argument("--schema", help="JSON schema file (inferred from the data if omitted)")
    p.add_argument("--mode", choices=["explicit", "factored"])
    p.add_argument("--algorithm", choices=["mwem", "baseline"])
    p.add_argument("--workload", help="range:N, parity:K, cuboid:K, cells:K or a JSON file")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float, help="report the (eps, delta) bound for this delta")
    p.add_argument("--T", type=int, help="number of rounds")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="parallel repetitions")
    p.add_argument("--output-mode", dest="output_mode", choices=["last", "average"])
    p.add_argument("--replay-passes", dest="replay_passes", type=int)
    p.add_argument("--init-fraction", dest="histogram_init_fraction", type=float)
    p.add_argument("--binarize", choices=["bitwise-log", "one-hot"])
    p.add_argument("--adaptive-T", dest="adaptive_T", action="store_true", default=None)
    p.add_argument("--no-clamp", dest="measurement_clamp", action="store_false", default=None)
    p.add_argument("--diagnostics", action="store_true", default=None,
                   help="also record non-private values (true scores, potential)")


def _config(args):
    from .experiment import ExperimentConfig

    base = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    for key in list(_FIELDS) + ["adaptive_T", "measurement_clamp", "diagnostics"]:
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    return ExperimentConfig.from_dict(base)


def _parse_grid(items: list[str]) -> dict:
    grid = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigError(f"grid entry {item!r} must look like name=v1,v2")
        cast = _FIELDS.get(key, json.loads)
        try:
            grid[key] = [cast(v) for v in values.split(",")]
        except ValueError:
            raise ConfigError(f"grid entry {item!r} has a malformed value") from None
    return grid


def cmd_run(args) -> int:
    from .experiment import run_experiment

    config = _config(args)
    if args.export:
        config = replace(config, export=args.export)
    result = run_experiment(config)
    for name, (mean, std) in result["aggregate"].items():
        print(f"{name:>20s}  {mean:.6g} +/- {std:.3g}")
    print(f"results in {result['out']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiment import sweep

    config = _config(args)
    grid = _parse_grid(args.grid)
    rows = sweep(config, grid)
    for r in rows:
        err = r["aggregate"].get("max_error", (float("nan"),))[0]
        print(f"{json.dumps(r['params'])}  max_error {err:.6g}")
    print(f"results in {Path(config.out) / 'aggregate.csv'}")
    return EXIT_OK


def cmd_export(args) -> int:
    from .experiment import run_experiment

    config = replace(_config(args), reps=1, export=args.format)
    result = run_experiment(config)
    print(f"synthetic data in {Path(result['out']) / 'synthetic.csv'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .experiment import BenchConfig, bench

    rows = bench(BenchConfig(attributes=args.attributes, records=args.records, p=args.p,
                             T=args.T, epsilon=args.epsilon, seed=args.seed, out=args.out))
    for r in rows:
        print(f"d={r['attributes']:>5d}  T={r['T']:>5d}  total {r['seconds_total']:.3f}s  "
              f"mw {r['seconds_mw']:.3f}s  peak {r['peak_entries']}")
    print(f"results in {Path(args.out) / 'bench.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mwem", description="Private synthetic data with MWEM.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run repetitions and write reports")
    _experiment_args(p)
    p.add_argument("--export", choices=["weighted", "sampled"], help="also write synthetic.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid")
    _experiment_args(p)
    p.add_argument("--grid", action="append", default=[], metavar="NAME=V1,V2",
                   help="parameter values to sweep; repeatable")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", help="run once and write the synthetic dataset")
    _experiment_args(p)
    p.add_argument("--format", choices=["weighted", "sampled"], default="sampled")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("bench", help="factored scaling bench on synthetic binary data")
    p.add_argument("--attributes", type=int, nargs="+", default=[100, 200, 400, 800, 1000])
    p.add_argument("--records", type=int, default=100_000)
    p.add_argument("--p", type=float, default=0.1, help="probability each attribute is 1")
    p.add_argument("--T", type=int, default=None, help="rounds (default: attribute count)")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BudgetExhausted, ResourceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
