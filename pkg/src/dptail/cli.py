"""Command-line entry point for the benchmark harness."""

from __future__ import annotations

import argparse
import sys

from . import bench


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file; flags override it")
    sub.add_argument("--seed", type=int, help="64-bit master seed")
    sub.add_argument("--out", help="output directory for results.csv and manifest.txt")
    sub.add_argument("--reps", type=int, help="replications per grid cell")
    sub.add_argument("--jobs", type=int, help="parallel workers for replications")
    sub.add_argument("--n", help="comma-separated sample sizes")
    sub.add_argument("--d", help="comma-separated dimensions")
    sub.add_argument("--p", help="comma-separated moment orders")
    sub.add_argument("--eps", help="comma-separated epsilon values")
    sub.add_argument("--delta", help="comma-separated delta values")
    sub.add_argument("--estimator", help="comma-separated: simple,iterative")
    sub.add_argument("--family", help="comma-separated data families")
    sub.add_argument("--k", type=int, help="group count for the iterative estimator")
    sub.add_argument("--tc", type=int, help="iteration count of the iterative estimator")
    sub.add_argument("--radius-mult", dest="radius_mult", type=float, help="clip radius multiplier")
    sub.add_argument(
        "--rho",
        type=float,
        help="direct whole-budget CDP override for the simple estimator (mean-bench)",
    )
    sub.add_argument("--steps", type=int, help="step count T used by calibrate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dptail",
        description="Benchmarks for private mean estimation and optimization "
        "with heavy-tailed data.",
    )
    subs = parser.add_subparsers(dest="mode", required=True)
    for mode in bench.MODES:
        _add_common_flags(subs.add_parser(mode))
    return parser


def _collect_values(args: argparse.Namespace) -> dict:
    values: dict = {}
    if args.config:
        values.update(bench.parse_config_file(args.config))
    values["mode"] = args.mode
    for key in ("seed", "out", "reps", "jobs", "k", "tc", "radius_mult", "rho", "steps"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    for key in ("n", "d", "p", "eps", "delta", "estimator", "family"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = bench._coerce_config_value(key, flag)
    return values


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = bench.config_from_values(_collect_values(args))
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if config.mode == "calibrate":
        for line in bench.calibrate_lines(config):
            print(line)
        return 0

    try:
        result = bench.run(config)
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.csv_path} ({len(result.records)} rows, {result.n_failed} not ok)")
    return 2 if result.n_failed else 0


if __name__ == "__main__":
    sys.exit(main())
