"""
Command-line entry point.

    wmra-sim --experiment fig2 --out results/ [--config cfg.yaml] [--seed N]
             [--slots T] [--v-mult F] [--seeds K] [--stride S] [--threads N]

Exit codes: 0 success, 1 configuration or I/O error, 2 usage error,
3 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import EXPERIMENTS, run_experiment
from .model import InvariantViolation

log = logging.getLogger("wmra_sim")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wmra-sim",
                                description="Run regulation-allocation experiments and write CSV.")
    p.add_argument("--config", metavar="PATH", help="YAML experiment config (default: built-in)")
    p.add_argument("--experiment", choices=EXPERIMENTS, default="fig2")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory")
    p.add_argument("--seed", type=int, help="base seed (replicas use seed, seed+1, ...)")
    p.add_argument("--slots", type=int, help="horizon T in slots")
    p.add_argument("--v-mult", type=float, help="V as a multiple of V_max")
    p.add_argument("--seeds", type=int, help="number of seed replicas")
    p.add_argument("--stride", type=int, help="time-series sampling stride (1 = every slot)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for replicas")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    run = {k: v for k, v in (("slots", args.slots), ("v_mult", args.v_mult),
                             ("seeds", args.seeds), ("stride", args.stride)) if v is not None}
    for k, v in run.items():
        if v <= 0:
            raise ConfigError(f"--{k.replace('_', '-')} must be > 0")
    cfg = replace(cfg, run=replace(cfg.run, **run))
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg = cfg.with_scenario(seed=args.seed)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = apply_overrides(cfg, args)
        paths = run_experiment(args.experiment, cfg, args.out, threads=args.threads)
    except InvariantViolation as exc:
        print(f"wmra-sim: invariant violation: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, OSError, ValueError) as exc:
        print(f"wmra-sim: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
