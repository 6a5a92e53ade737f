"""``multipenalty`` command line.

    multipenalty param-sweep --trials 20 --out sweep.csv
    multipenalty phase-transition --config grid.cfg --jobs 4

Exit codes: 0 on success, 2 on a configuration error, 3 when a solver
aborts on a non-finite iterate.
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..model import InitializationError
from ..solvers import NumericalError
from .config import ConfigError, load_config
from .experiments import run_experiment, write_tables

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

SUBCOMMANDS = {
    "param-sweep": "param_sweep",
    "ensemble-compare": "ensemble_compare",
    "phase-transition": "phase_transition",
    "injectivity": "injectivity",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multipenalty", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--solver", choices=("am", "palm", "baseline"))
        p.add_argument("--tuning", choices=("oracle", "discrepancy"))
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in ("seed", "trials", "out", "solver", "tuning")}
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(SUBCOMMANDS[args.command], args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        tables = run_experiment(cfg, args.jobs)
    except (NumericalError, InitializationError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in write_tables(tables, cfg.out):
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
