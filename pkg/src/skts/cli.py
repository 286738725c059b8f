"""Command-line entry point: ``skts run|validate|list-algorithms``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import ALGORITHMS, ConfigError, format_summary, load_config, run_experiment

EXIT_CONFIG = 2


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skts", description="Sparse Kalman tree search experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo sweep and write a CSV")
    run.add_argument("config", help="INI experiment config")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--output", help="override the CSV output path")
    run.add_argument("--trials", type=int, help="override the trial count")
    run.add_argument("--workers", type=int, help="override the number of worker processes")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")

    sub.add_parser("list-algorithms", help="print the available algorithm names")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "list-algorithms":
        width = max(map(len, ALGORITHMS))
        for name, desc in ALGORITHMS.items():
            print(f"{name.ljust(width)}  {desc}")
        return 0

    try:
        cfg = load_config(args.config)
        if args.command == "run":
            overrides = {k: getattr(args, k) for k in ("seed", "output", "trials", "workers")}
            cfg = cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.scenario}, {len(cfg.algorithms)} algorithms, "
              f"{len(cfg.snr_db)} SNR points, {cfg.trials} trials)")
        return 0

    rows = run_experiment(cfg)
    print(format_summary(rows))
    print(f"wrote {cfg.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
