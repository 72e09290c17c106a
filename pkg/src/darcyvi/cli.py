"""Command-line entry point.

    darcyvi run <preset> [--formulation rt0|vms] [--eps E] [--beta B]
                         [--mesh-level L] [--threads N] [--out DIR] [--config FILE]

Presets: hconv, square, circular, box3d. A TOML config file supplies defaults
(flat keys or nested tables, same names as the flags with underscores);
flags override it. A JSON run summary is printed to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .benchmarks import (PRESETS, RunConfig, run_box3d, run_circular_reservoir, run_hconv,
                         run_square_reservoir)
from .errors import ConfigurationError

log = logging.getLogger("darcyvi")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darcyvi", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a benchmark preset")
    run.add_argument("preset", choices=PRESETS)
    run.add_argument("--formulation", type=str.upper, choices=("RT0", "VMS"))
    run.add_argument("--eps", type=float, help="anisotropy parameter (square)")
    run.add_argument("--beta", type=float, help="Barus coefficient [1/Pa]")
    run.add_argument("--theta", type=float, help="permeability rotation [rad] (circular)")
    run.add_argument("--mesh-level", type=int, help="annulus level (circular)")
    run.add_argument("--h", type=float, help="mesh size [m] (square)")
    run.add_argument("--law", choices=("linearized", "exponential"))
    run.add_argument("--rtol", type=float)
    run.add_argument("--threads", type=int)
    run.add_argument("--out", help="output directory for VTU / CSV / JSON")
    run.add_argument("--config", help="TOML config file")
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {
        "preset": args.preset, "formulation": args.formulation, "eps": args.eps, "beta": args.beta,
        "theta": args.theta, "mesh_level": args.mesh_level, "h": args.h, "law": args.law,
        "rtol": args.rtol, "threads": args.threads, "out": args.out,
    }
    if args.config:
        cfg = RunConfig.from_toml(args.config, **overrides)
    else:
        cfg = RunConfig().updated(**overrides)
    if cfg.formulation is not None:
        cfg = cfg.updated(formulation=cfg.formulation.upper())
    return cfg.validate()


def _summary(preset, result):
    if preset == "hconv":
        return {str(k): v for k, v in result.items()}
    summary = result[0]
    return {"table": summary["table"], "scaling": summary.get("scaling"),
            "bounds": summary["report"]["bounds_note"]}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    log.info("running %s (%s)", cfg.preset, cfg.formulation)
    runner = {"hconv": run_hconv, "square": run_square_reservoir,
              "circular": run_circular_reservoir, "box3d": run_box3d}[cfg.preset]
    try:
        result = runner(cfg)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    json.dump(_summary(cfg.preset, result), sys.stdout, indent=2, default=str)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
