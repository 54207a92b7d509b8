"""Command-line entry point: ``csbo run|grid <config>`` and ``csbo verify``."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .experiment import GridSearchError, emit_results, run_experiment, run_grid_search


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csbo", description="Contextual bilevel optimization by basis reduction.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides output_path)")
    common.add_argument("--jobs", type=int, help="worker processes for trials or grid cells")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", parents=[common], help="run seeded trials and write CSVs")
    p_run.add_argument("config")
    p_grid = sub.add_parser("grid", parents=[common], help="grid-search step sizes, then run with the best cell")
    p_grid.add_argument("config")
    sub.add_parser("verify", parents=[common], help="run the built-in oracle checks")
    return parser


def _resolve(args):
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_path"] = args.out
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    return config.with_(**overrides)


def _print_summary(report) -> None:
    for row in report.summary():
        print(f"{row['metric']:>15s}  mean={row['mean']:.6g}  "
              f"ci95=[{row['ci95_low']:.6g}, {row['ci95_high']:.6g}]  n={row['n_trials']}")
    for t in report.trials:
        if t.failed:
            print(f"trial {t.trial} failed: {t.message}", file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "verify":
        from ..verify import run_checks

        return 0 if run_checks(seed=args.seed or 0) else 1
    try:
        config = _resolve(args)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if args.command == "grid":
        try:
            grid = run_grid_search(config)
        except GridSearchError as err:
            print(f"error: {err}", file=sys.stderr)
            return 1
        emit_results(grid, config.output_path)
        print(f"best cell: alpha={grid.best.alpha} beta={grid.best.beta} t_inner={grid.best.t_inner}")
        config = config.with_(solver=grid.best)
    report = run_experiment(config)
    path = emit_results(report, config.output_path)
    _print_summary(report)
    print(f"results written to {path}")
    return 1 if report.trials and all(t.failed for t in report.trials) else 0


if __name__ == "__main__":
    sys.exit(main())
