"""Command line entry point: ``imlab <scenario> [--config FILE] [--section.key VALUE ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .exceptions import ConfigError, ImlabError
from .harness import SCENARIOS, apply_overrides, run_scenario, validate_config

# short flags for the most common keys
ALIASES = {
    "grid": "grid.max_mode",
    "tol": "tolerances.phi",
    "N": "projector.n_modes",
    "out": "output_dir",
    "dim": "model.dim",
    "nu": "model.nu",
    "theta": "model.theta",
    "seed": "model.forcing.seed",
    "L": "gaps.L",
    "b": "annulus.b",
    "record-every": "record.every",
}

# flags whose meaning depends on the subcommand
COMMAND_ALIASES = {
    "gaps": {"d": "gaps.dim", "lmax": "gaps.lam_max"},
    "annulus": {"budget": "annulus.search_budget"},
    "evolve": {"model": "evolve.equation", "tend": "evolve.t_end", "dt": "evolve.dt",
               "seed": "seeds.ensemble"},
    "cone-check": {"model": "cone.model", "tend": "cone.t_end", "dt": "cone.dt", "pairs": "cone.pairs"},
    "manifold": {"dt": "manifold.dt"},
    "inertial-form": {"dt": "inertial_form.dt", "tend": "inertial_form.t_end"},
    "tracking": {"dt": "tracking.dt", "horizon": "tracking.horizon"},
    "radius": {"dt": "radius.dt", "horizon": "radius.horizon"},
}


def _parse_overrides(extra: list[str], command: str = "") -> dict:
    aliases = {**ALIASES, **COMMAND_ALIASES.get(command, {})}
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or tok == "--":
            raise ConfigError([f"{tok}: expected --key value"])
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError([f"{key}: missing value"])
            value = extra[i + 1]
            i += 2
        out[aliases.get(key, key.replace("-", "_"))] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="imlab",
        description="Inertial-manifold laboratory for forced Navier-Stokes on the torus.",
        epilog="Any config key can be overridden with --section.key VALUE; "
               f"shortcuts: {', '.join(f'--{k} ({v})' for k, v in ALIASES.items())}.")
    p.add_argument("command", choices=SCENARIOS + ("run", "validate"),
                   help="scenario to run; 'run' executes the config's scenario list, "
                        "'validate' only checks the config")
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--threads", type=int, help="worker cap (sets IMLAB_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None:
        os.environ["IMLAB_THREADS"] = str(max(1, args.threads))
    try:
        data = json.loads(args.config.read_text()) if args.config else {}
        if not isinstance(data, dict):
            raise ConfigError(["<root>: config must be a JSON object"])
        overrides = _parse_overrides(extra, args.command)
        if args.command == "full3d" and "model.dim" not in overrides:
            data.setdefault("model", {}).setdefault("dim", 3)
        config = validate_config(apply_overrides(data, overrides))
        if args.command == "validate":
            print(config.dumps(), end="")
            return 0
        names = None if args.command == "run" else [args.command]
        status = run_scenario(config, names)
        for name in (config.scenarios if names is None else names):
            print(Path(config.output_dir) / f"{name}.ndjson")
        return status
    except json.JSONDecodeError as e:
        print(f"config error: <root>: not valid JSON ({e.msg})", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        for msg in e.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return e.exit_code
    except ImlabError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
