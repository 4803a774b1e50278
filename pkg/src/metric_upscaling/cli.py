"""Command-line entry point.

Exit status is 0 on success, 1 for configuration or I/O problems and 2 for
numerical failures.
"""

import argparse
import logging
import sys

from . import experiments
from .errors import ConfigError, GridIncompatible, IOFailure, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

COMMANDS = {
    "solve": experiments.run_solve,
    "compare": experiments.run_compare,
    "sweep": experiments.run_sweep,
    "oned": experiments.run_oned,
    "export-coarse-model": experiments.run_export,
}

HELP = {
    "solve": "fine reference solution and harmonic coordinates",
    "compare": "all coarse schemes at one coarse level with error tables",
    "sweep": "errors, rates and condition numbers over several coarse levels",
    "oned": "one-dimensional cascade, spectrum and convergence tables",
    "export-coarse-model": "write the compressed coarse operators",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="metric-upscaling",
        description="Numerical upscaling with a-harmonic coordinates.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--seed", type=int, help="override the medium seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--tol", type=float, help="override the solver tolerance")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = experiments.load_config(args.config, seed=args.seed, tol=args.tol,
                                         out=args.out)
        result = COMMANDS[args.command](config)
    except (ConfigError, GridIncompatible, IOFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out = result[-1]
    for name in sorted(out.files):
        print(f"wrote {out.directory}/{name}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
