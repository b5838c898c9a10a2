"""Command-line experiment runner.

    byzsim --config sweep.toml --out results/ --rule ubar,dkrum --attack bitflip

Every config key can be overridden with ``--<key> VALUE`` (underscores or
dashes).  Sweep keys accept comma-separated lists.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import CONFIG_KEYS, parse_config
from .errors import ConfigError
from .runner import execute


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="byzsim",
        description="Byzantine-resilient decentralized SGD simulator",
    )
    parser.add_argument("--config", help="TOML experiment file")
    parser.add_argument("--save-topology", action="store_true",
                        help="also write topology_<id>.txt edge lists")
    parser.add_argument("-v", "--verbose", action="store_true")
    overrides = parser.add_argument_group("config overrides")
    for key in CONFIG_KEYS:
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        overrides.add_argument(*flags, dest=f"set_{key}", metavar="VALUE", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {key: getattr(args, f"set_{key}") for key in CONFIG_KEYS
                 if getattr(args, f"set_{key}") is not None}
    try:
        plan = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"byzsim: config error: {exc}", file=sys.stderr)
        return 2

    results = execute(plan, save_topology=args.save_topology)
    failed = [r for r in results if r.error]
    for r in results:
        if r.record is not None:
            print(f"run {r.spec.run_id}: rule={r.spec.config.rule} attack={r.spec.config.attack} "
                  f"final_worst_acc={r.record.final.worst:.4f}")
    for r in failed:
        print(f"run {r.spec.run_id} failed: {r.error}", file=sys.stderr)
    print(f"{len(results) - len(failed)}/{len(results)} runs completed; results in {plan.out}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
