"""Command-line entry point: render one figure from a results CSV."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dptail-plot", description="Render benchmark CSVs (schema v1) into figures."
    )
    parser.add_argument("--csv", required=True, help="input results.csv")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--out", required=True, help="output image path (.png)")
    parser.add_argument(
        "--group", help="comma-separated grouping columns (defaults depend on kind)"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    groups = tuple(c.strip() for c in args.group.split(",")) if args.group else ()
    try:
        spec = FigureSpec(csv_path=args.csv, kind=args.kind, out_path=args.out, group_columns=groups)
        figure, sidecar = render(spec)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {figure} and {sidecar}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
