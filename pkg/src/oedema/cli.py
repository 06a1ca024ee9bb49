"""Command-line entry point.

    oedema <subcommand> [--config FILE] [--out DIR] [--threads N] [--log LEVEL]

Subcommands: sensitivity1d, compression2d, benchmark2d, mms, oedema2d,
precond.  Configs are JSON files merged over the built-in defaults
(``--dump-config`` prints the effective config and exits).  The output
directory defaults to $OEDEMA_OUT or ./out.  Exit codes: 0 success,
2 config error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .experiments import config as config_mod
from .experiments import drivers
from .linalg import LinearSolverError
from .solver import NoConvergence

SUBCOMMANDS = {
    "sensitivity1d": drivers.run_sensitivity_1d,
    "compression2d": drivers.run_compression_2d,
    "benchmark2d": drivers.run_benchmark_2d,
    "mms": drivers.run_mms,
    "oedema2d": drivers.run_oedema_2d,
    "precond": drivers.run_precond_study,
}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="oedema",
        description="Finite element experiments for the coupled "
                    "poroelasticity/chemotaxis oedema model")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="BLAS thread cap (assembly is single-process)")
        p.add_argument("--log", default="info",
                       choices=["debug", "info", "warning", "error"])
        p.add_argument("--dump-config", action="store_true",
                       help="print the effective config and exit")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log.upper()),
                        format="%(message)s")
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    try:
        cfg = config_mod.load_config(args.command, args.config)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.dump_config:
        print(json.dumps(cfg, indent=2))
        return 0
    outdir = args.out or cfg["output"].get("dir") \
        or os.path.join(os.environ.get("OEDEMA_OUT", "out"), args.command)
    try:
        SUBCOMMANDS[args.command](cfg, outdir)
    except (NoConvergence, LinearSolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
