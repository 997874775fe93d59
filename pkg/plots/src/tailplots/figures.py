"""Figures and slope sidecars from benchmark result CSVs (schema v1).

This package consumes the results files blind: it never imports the
benchmark code, only the documented CSV schema.  Rendering is deterministic
and every figure ships with a plain-text sidecar holding the fitted log-log
slopes (or tail ratios), so downstream checks never have to parse an image.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

# Frozen column list of results schema v1.
SCHEMA_COLUMNS = [
    "run_id",
    "mode",
    "estimator",
    "family",
    "n",
    "d",
    "p",
    "eps",
    "delta",
    "k",
    "tc",
    "T",
    "eta",
    "R",
    "rho_step",
    "eps0",
    "delta0",
    "seed",
    "rep",
    "outcome",
    "status",
    "wall_ms",
]

KINDS = ("error-vs-n", "risk-vs-eps", "tail-quantiles")

X_COLUMN = {"error-vs-n": "n", "risk-vs-eps": "eps"}

DEFAULT_GROUPS = {
    "error-vs-n": ("estimator", "family", "d", "p", "eps", "delta"),
    "risk-vs-eps": ("estimator", "family", "d", "p", "n"),
    "tail-quantiles": ("estimator", "family", "n", "d", "p", "eps", "delta"),
}

# Reference rates drawn on the log-log plots: error and risk fall like
# n^(-1/2), and the privacy-noise component of the risk falls like
# eps^(-(1 - 1/p)).
REFERENCE_SLOPE_N = -0.5

TAIL_LEVELS = (0.5, 0.75, 0.9, 0.95, 0.99)

FIGURE_DPI = 120
PNG_METADATA = {"Software": "tailplots"}


class SchemaError(ValueError):
    """The CSV does not conform to results schema v1."""


@dataclass(frozen=True)
class FigureSpec:
    """What to render: input CSV, figure kind, grouping, output path."""

    csv_path: str | Path
    kind: str
    out_path: str | Path
    group_columns: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        groups = self.group_columns or DEFAULT_GROUPS[self.kind]
        missing = [c for c in groups if c not in SCHEMA_COLUMNS]
        if missing:
            raise SchemaError(f"grouping column(s) {missing} not in schema v1")
        object.__setattr__(self, "group_columns", tuple(groups))

    def sidecar_path(self) -> Path:
        out = Path(self.out_path)
        return out.with_name(out.stem + ".slopes.txt")


def read_results(csv_path: str | Path) -> list[dict]:
    """Load a schema-v1 CSV; any missing column is a schema error."""
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in SCHEMA_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{csv_path}: missing schema column(s): {', '.join(missing)}")
        return list(reader)


def least_squares_slope(xs: np.ndarray, ys: np.ndarray) -> float:
    """Closed-form least-squares slope of log(y) on log(x)."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    lx_c = lx - lx.mean()
    return float((lx_c * (ly - ly.mean())).sum() / (lx_c * lx_c).sum())


def _group_key(row: dict, columns: tuple[str, ...]) -> tuple:
    return tuple(row[c] for c in columns)


def _key_label(key: tuple, columns: tuple[str, ...]) -> str:
    return " ".join(f"{c}={v}" for c, v in zip(columns, key))


def _ok_outcomes(rows: list[dict]) -> list[float]:
    return [float(r["outcome"]) for r in rows if r["status"] == "ok" and r["outcome"]]


def _reference_slope(kind: str, key: tuple, columns: tuple[str, ...]) -> float | None:
    if kind == "error-vs-n":
        return REFERENCE_SLOPE_N
    try:
        p = float(dict(zip(columns, key))["p"])
    except (KeyError, ValueError):
        return None
    return -(1.0 - 1.0 / p)


def render(spec: FigureSpec) -> tuple[Path, Path]:
    """Write the figure and its sidecar; returns (figure path, sidecar path).

    Per-cell medians drive both the curves and the slope fits; heavy tails
    make means unstable at small replication counts.  The sidecar is fully
    deterministic: same CSV in, same bytes out.
    """
    rows = read_results(spec.csv_path)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(_group_key(row, spec.group_columns), []).append(row)

    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    sidecar_lines = [f"kind={spec.kind}", f"groups={','.join(spec.group_columns)}"]

    for key in sorted(groups):
        label = _key_label(key, spec.group_columns)
        group_rows = groups[key]
        if spec.kind in X_COLUMN:
            line = _render_scaling_group(ax, spec.kind, key, spec.group_columns, group_rows)
        else:
            line = _render_tail_group(ax, label, group_rows)
        sidecar_lines.append(f"group {label}: {line}")

    if spec.kind in X_COLUMN:
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(X_COLUMN[spec.kind])
        ax.set_ylabel("median outcome")
    else:
        ax.set_xlabel("quantile level")
        ax.set_ylabel("outcome quantile")
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    if ax.has_data():
        ax.legend(fontsize=7)
    ax.set_title(spec.kind)
    fig.tight_layout()
    out_path = Path(spec.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=FIGURE_DPI, metadata=PNG_METADATA)
    plt.close(fig)

    sidecar = spec.sidecar_path()
    sidecar.write_text("\n".join(sidecar_lines) + "\n")
    return out_path, sidecar


def _render_scaling_group(ax, kind, key, columns, group_rows) -> str:
    x_col = X_COLUMN[kind]
    cells: dict[float, list[dict]] = {}
    for row in group_rows:
        try:
            x = float(row[x_col])
        except ValueError:
            continue
        cells.setdefault(x, []).append(row)

    xs, medians = [], []
    for x in sorted(cells):
        outcomes = _ok_outcomes(cells[x])
        if outcomes:
            xs.append(x)
            medians.append(float(np.median(outcomes)))
    if not xs:
        return "empty"

    label = _key_label(key, columns)
    ax.plot(xs, medians, marker="o", label=label)
    if len(xs) < 2:
        return f"points=1 median={medians[0]!r}"

    slope = least_squares_slope(np.array(xs), np.array(medians))
    ref = _reference_slope(kind, key, columns)
    if ref is not None:
        anchor = medians[0] * (np.array(xs) / xs[0]) ** ref
        ax.plot(xs, anchor, linestyle="--", color="black", alpha=0.6,
                label=f"reference slope {ref:g}")
    return f"slope={slope!r} points={len(xs)}"


def _render_tail_group(ax, label, group_rows) -> str:
    outcomes = _ok_outcomes(group_rows)
    if not outcomes:
        return "empty"
    quantiles = [float(np.quantile(outcomes, q)) for q in TAIL_LEVELS]
    ax.plot(TAIL_LEVELS, quantiles, marker="o", label=label)
    median = float(np.quantile(outcomes, 0.5))
    p99 = float(np.quantile(outcomes, 0.99))
    ratio = p99 / median if median > 0 else math.inf
    return f"p99_over_median={ratio!r} points={len(outcomes)}"
