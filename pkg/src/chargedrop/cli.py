"""Command-line entry point: ``chargedrop <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import verify as verify_mod
from .experiments import (
    RUNNERS,
    ConfigError,
    ExperimentConfig,
    default_theta_grid,
    log_grid,
)

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3

# flag -> config key
_FLAGS = {
    "alpha": "alpha",
    "dimension": "dimension",
    "eps": "eps",
    "samples": "sample_count",
    "kmax": "kmax",
    "amplitude": "amplitude",
    "amplitude_max": "amplitude_max",
    "resolution": "resolution",
    "n_cells": "n_cells",
    "steps": "steps",
    "seed": "seed",
    "out": "output_path",
    "workers": "workers",
}

_DEFAULTS = {
    "equilibrium": {},
    "stability-scan": {"Q_grid": log_grid(0.1, 10.0, 20), "sample_count": 100, "amplitude": 0.01,
                       "amplitude_max": 0.05},
    "nonexistence-scan": {"Q_grid": log_grid(0.1, 1000.0, 81)},
    "ftheta": {"theta_grid": default_theta_grid()},
    "descent": {"Q_grid": [0.1], "sample_count": 10},
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file; flags override its keys")
    p.add_argument("--alpha", type=float)
    p.add_argument("--dimension", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--q-min", type=float)
    p.add_argument("--q-max", type=float)
    p.add_argument("--q-count", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--kmax", type=int)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--amplitude-max", type=float)
    p.add_argument("--resolution", type=float, help="grid spacing h")
    p.add_argument("--n-cells", type=int, help="ball reference cells for shape solves")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chargedrop", description="Charged liquid drop numerical experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        _common(sub.add_parser(name))
    v = sub.add_parser("verify", help="run the invariant suite; exit 1 on any violation")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--quick", action="store_true", help="smaller samples for a fast pass")
    return parser


def make_config(name: str, args: argparse.Namespace) -> ExperimentConfig:
    d = {"experiment": name, **_DEFAULTS[name]}
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        if loaded.get("experiment", name) != name:
            raise ConfigError(f"config is for {loaded['experiment']!r}, not {name!r}")
        d.update(loaded)
    for flag, key in _FLAGS.items():
        val = getattr(args, flag)
        if val is not None:
            d[key] = val
    if any(getattr(args, f) is not None for f in ("q_min", "q_max", "q_count")):
        grid = d.get("Q_grid") or [0.1, 1.0]
        d["Q_grid"] = log_grid(args.q_min if args.q_min is not None else min(grid),
                               args.q_max if args.q_max is not None else max(grid),
                               args.q_count if args.q_count is not None else max(len(grid), 2))
    return ExperimentConfig.from_dict(d)


def _print_summary(obj) -> None:
    if hasattr(obj, "to_dict"):
        obj = {k: v for k, v in obj.to_dict().items() if k != "table"}
    obj = {k: v for k, v in obj.items() if k not in ("rows", "traces")}
    print(json.dumps(obj, indent=2, sort_keys=True, default=lambda o: o.item() if isinstance(o, np.generic) else str(o)))


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command == "verify":
        failures = verify_mod.run_all(workers=args.workers, quick=args.quick)
        return EXIT_VIOLATION if failures else EXIT_OK
    try:
        cfg = make_config(args.command, args)
    except ConfigError as exc:
        print(f"chargedrop: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = RUNNERS[args.command](cfg)
    except ConfigError as exc:
        print(f"chargedrop: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _print_summary(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
