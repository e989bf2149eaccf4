"""Command-line entry point: ``hasim run|preset|metrics``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .adaptation import ConfigError, StabilityWarning
from .fluid_link import LinkError
from .scenario import PRESETS, apply_overrides, load_config, metrics_from_dir, preset, run, serialize

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2

log = logging.getLogger("hasim")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hasim", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario from a config file")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, help="output directory (overrides the config)")

    p_pre = sub.add_parser("preset", help="run a built-in experiment")
    p_pre.add_argument("name", choices=PRESETS)
    p_pre.add_argument("--seed", type=int, default=1)
    p_pre.add_argument("--out", type=Path)
    p_pre.add_argument("--clients", type=int, help="population size for sweep presets")
    p_pre.add_argument("--algorithm", choices=("panda", "conventional"))
    p_pre.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config key")
    p_pre.add_argument("--print", dest="print_only", action="store_true",
                       help="print the preset's config and exit")

    p_met = sub.add_parser("metrics", help="recompute metrics for a finished run")
    p_met.add_argument("trace_dir", type=Path)
    return ap


def _dispatch(args) -> int:
    if args.command == "run":
        config = load_config(args.config.read_text())
        return run(config, args.out)
    if args.command == "preset":
        config = preset(args.name, seed=args.seed, clients=args.clients, algorithm=args.algorithm)
        if args.overrides:
            config = load_config(apply_overrides(serialize(config), args.overrides))
        if args.print_only:
            sys.stdout.write(serialize(config))
            return EXIT_OK
        return run(config, args.out)
    summary = metrics_from_dir(args.trace_dir)
    for key in ("mean_instability", "mean_inefficiency", "mean_unfairness", "mean_undershoot"):
        print(f"{key}: {summary[key]}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    logging.captureWarnings(True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", StabilityWarning)
            return _dispatch(args)
    except (ConfigError, LinkError) as exc:
        print(f"hasim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"hasim: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"hasim: internal error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
