"""Benchmark harness: parameter grids, seeded replication, CSV + manifest output.

Every run is determined by (config, master seed).  Per-run seeds are a
stable 64-bit hash of the master seed, the grid-cell coordinates, and the
replication index, so replication parallelism cannot change results.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import math
import time
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import ClipConfig, iterative_update_mean, simple_clip_mean
from .optimizer import (
    iterative_gradient_estimator,
    schedule_iterative,
    schedule_simple_clipping,
    sgd_loop,
    simple_clipping_gradient_estimator,
)
from .privacy import (
    ApproxDpBudget,
    CdpBudget,
    OutOfRegimeError,
    optimization_cdp_budget,
    per_step_cdp_budget,
    per_step_dp_budget,
    shuffle_amplified_group_budget,
)
from .synthetic import FAMILIES, RNG_ID, HeavyTailSpec, make_quadratic_problem, make_rng, sample

SCHEMA_VERSION = "v1"

CSV_COLUMNS = [
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

MODES = ("mean-bench", "opt-bench", "calibrate")
ESTIMATORS = ("simple", "iterative")

# Mean-estimation experiments estimate this target: norm 0.5, equal coordinates.
MEAN_NORM = 0.5

# Quadratic problem constants used by opt-bench.
OPT_DIAMETER = 2.0
OPT_CURVATURE = 1.0

SEED_DERIVATION = 'sha256("{master}|{cell_key}|{rep}") -> first 8 bytes, big-endian'
QUANTILE_CONVENTION = "linear interpolation between order statistics"


def derive_seed(master: int, cell_key: str, rep: int | str) -> int:
    """Stable 64-bit per-run seed; order-independent under parallel execution."""
    digest = hashlib.sha256(f"{master}|{cell_key}|{rep}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def default_group_count(n: int) -> int:
    """Default k: 800 ln(1/beta) at beta = 1/n^2, capped so groups have >= 2 samples."""
    return max(1, min(math.ceil(1600.0 * math.log(n)), n // 2))


def target_mean(d: int) -> np.ndarray:
    return np.full(d, MEAN_NORM / math.sqrt(d))


def mean_bench_radius(n: int, d: int, p: float, radius_mult: float) -> float:
    """Clip radius for standalone mean estimation: sqrt(d) (n/d)^(1/p) * mult.

    Epsilon-free on purpose, so sweeps over the privacy budget or over the
    estimator hold R fixed.
    """
    return radius_mult * math.sqrt(d) * (n / d) ** (1.0 / p)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a grid of cells, replications, and overrides."""

    mode: str
    n: tuple[int, ...] = (1000,)
    d: tuple[int, ...] = (5,)
    p: tuple[float, ...] = (2.0,)
    eps: tuple[float, ...] = (0.5,)
    delta: tuple[float, ...] = (1e-5,)
    estimator: tuple[str, ...] = ("simple",)
    family: tuple[str, ...] = ("student-like",)
    reps: int = 1
    seed: int = 0
    out: str = "out"
    jobs: int = 1
    k: int | None = None
    tc: int = 40
    radius_mult: float = 1.0
    rho: float | None = None
    steps: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("n", "d", "p", "eps", "delta", "estimator", "family"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"grid key {name!r} is empty")
        if self.reps < 1:
            raise ValueError("replications must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if any(not 0 < dl < 1 for dl in self.delta):
            raise ValueError("every delta must lie in (0, 1)")
        bad = [e for e in self.estimator if e not in ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimator(s) {bad}; pick from {ESTIMATORS}")
        bad = [f for f in self.family if f not in FAMILIES]
        if bad:
            raise ValueError(f"unknown family(s) {bad}; pick from {FAMILIES}")

    def cells(self) -> list[dict]:
        coords = []
        for n, d, p, eps, delta, est, fam in product(
            self.n, self.d, self.p, self.eps, self.delta, self.estimator, self.family
        ):
            coords.append(
                dict(n=n, d=d, p=p, eps=eps, delta=delta, estimator=est, family=fam)
            )
        return coords


def cell_key(cell: dict) -> str:
    return (
        f"n={cell['n']},d={cell['d']},p={cell['p']!r},eps={cell['eps']!r},"
        f"delta={cell['delta']!r},estimator={cell['estimator']},family={cell['family']}"
    )


# -- config file ---------------------------------------------------------

_INT_KEYS = {"reps", "seed", "jobs", "tc", "steps"}
_FLOAT_KEYS = {"radius_mult", "rho"}
_INT_GRID_KEYS = {"n", "d", "k"}
_FLOAT_GRID_KEYS = {"p", "eps", "delta"}
_STR_GRID_KEYS = {"estimator", "family"}
_STR_KEYS = {"mode", "out"}


def parse_config_file(path: str | Path) -> dict:
    """Flat key = value format; grid keys take comma-separated lists."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            values[key] = _coerce_config_value(key, value)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return values


def _coerce_config_value(key: str, value: str):
    if key in _STR_KEYS:
        return value
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    parts = [v.strip() for v in value.split(",") if v.strip()]
    if key in _INT_GRID_KEYS:
        # k is a scalar override but accepts the same syntax
        items = tuple(int(v) for v in parts)
        return items[0] if key == "k" else items
    if key in _FLOAT_GRID_KEYS:
        return tuple(float(v) for v in parts)
    if key in _STR_GRID_KEYS:
        return tuple(parts)
    raise ValueError(f"unknown config key {key!r}")


def config_from_values(values: dict) -> ExperimentConfig:
    if "mode" not in values:
        raise ValueError("config must set a mode (mean-bench | opt-bench | calibrate)")
    return ExperimentConfig(**values)


# -- single runs ---------------------------------------------------------


@dataclass
class RunRecord:
    """One CSV row: a grid cell x replication with its derived schedule."""

    run_id: str
    cell: dict
    seed: int
    rep: int
    outcome: float | None = None
    status: str = "ok"
    wall_ms: int = 0
    k: int | None = None
    tc: int | None = None
    T: int | None = None
    eta: float | None = None
    R: float | None = None
    rho_step: float | None = None
    eps0: float | None = None
    delta0: float | None = None
    eps_used: float | None = None
    delta_used: float | None = None

    def to_row(self, mode: str) -> list:
        def fmt(v):
            return "" if v is None else (repr(v) if isinstance(v, float) else v)

        return [
            self.run_id,
            mode,
            self.cell["estimator"],
            self.cell["family"],
            self.cell["n"],
            self.cell["d"],
            fmt(float(self.cell["p"])),
            fmt(self.eps_used),
            fmt(self.delta_used),
            fmt(self.k),
            fmt(self.tc),
            fmt(self.T),
            fmt(self.eta),
            fmt(self.R),
            fmt(self.rho_step),
            fmt(self.eps0),
            fmt(self.delta0),
            self.seed,
            self.rep,
            fmt(self.outcome),
            self.status,
            self.wall_ms,
        ]


def _run_mean_cell(cfg: ExperimentConfig, record: RunRecord) -> None:
    cell = record.cell
    n, d, p = cell["n"], cell["d"], float(cell["p"])
    rng = make_rng(record.seed)
    spec = HeavyTailSpec(d, p, 1.0, cell["family"], target_mean(d))
    data = sample(spec, n, rng)
    radius = mean_bench_radius(n, d, p, cfg.radius_mult)
    record.R = radius

    if cell["estimator"] == "simple":
        if cfg.rho is not None:
            rho = cfg.rho
        else:
            rho = optimization_cdp_budget(cell["eps"], cell["delta"]).rho
            record.eps_used, record.delta_used = cell["eps"], cell["delta"]
        record.rho_step = rho
        estimate = simple_clip_mean(data, ClipConfig(radius), CdpBudget(rho), rng)
    else:
        total = ApproxDpBudget(cell["eps"], cell["delta"])
        record.eps_used, record.delta_used = cell["eps"], cell["delta"]
        k = cfg.k if cfg.k is not None else default_group_count(n)
        record.k, record.tc = k, cfg.tc
        record.rho_step = shuffle_amplified_group_budget(total, k).rho
        usable = (n // k) * k
        estimate = iterative_update_mean(
            data[:usable], ClipConfig(radius), total, k, cfg.tc, rng
        )
    record.outcome = float(np.linalg.norm(estimate.value - spec.mean))


def _run_opt_cell(cfg: ExperimentConfig, record: RunRecord) -> None:
    cell = record.cell
    n, d, p = cell["n"], cell["d"], float(cell["p"])
    problem_seed = derive_seed(cfg.seed, cell_key(cell), "problem")
    spec = HeavyTailSpec(d, p, 1.0, cell["family"], np.zeros(d))
    problem = make_quadratic_problem(spec, OPT_DIAMETER, OPT_CURVATURE, make_rng(problem_seed))
    total = ApproxDpBudget(cell["eps"], cell["delta"])
    record.eps_used, record.delta_used = cell["eps"], cell["delta"]

    if cell["estimator"] == "simple":
        sched = schedule_simple_clipping(n, problem, total, radius_multiplier=cfg.radius_mult)
        rho_step = per_step_cdp_budget(cell["eps"], cell["delta"], sched.steps).rho
        record.rho_step = rho_step
        grad_est = simple_clipping_gradient_estimator(sched.clip_radius, rho_step)
    else:
        sched = schedule_iterative(n, problem, total, radius_multiplier=cfg.radius_mult)
        step_budget = per_step_dp_budget(total, sched.steps)
        record.eps0, record.delta0 = step_budget.epsilon, step_budget.delta
        k = cfg.k if cfg.k is not None else default_group_count(n)
        record.k, record.tc = k, cfg.tc
        shuffle_amplified_group_budget(step_budget, k)  # fail fast on regime violations
        grad_est = iterative_gradient_estimator(sched.clip_radius, step_budget, k, cfg.tc)

    record.T, record.eta, record.R = sched.steps, sched.learning_rate, sched.clip_radius
    rng = make_rng(record.seed)
    data = problem.data_sampler(n, rng)
    trace = sgd_loop(problem, data, sched, grad_est, np.zeros(d), rng)
    record.outcome = trace.excess_risk


def _execute(cfg: ExperimentConfig, record: RunRecord) -> RunRecord:
    start = time.perf_counter()
    try:
        if cfg.mode == "mean-bench":
            _run_mean_cell(cfg, record)
        else:
            _run_opt_cell(cfg, record)
    except OutOfRegimeError as exc:
        record.status = f"skipped:out-of-regime: {exc}"
        record.outcome = None
    except Exception as exc:  # recorded, not fatal
        record.status = f"failed:{type(exc).__name__}: {exc}"
        record.outcome = None
    record.wall_ms = int(round((time.perf_counter() - start) * 1000.0))
    return record


@dataclass
class RunResult:
    csv_path: Path
    manifest_path: Path
    records: list[RunRecord]

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.records if r.status != "ok")


def run(config: ExperimentConfig) -> RunResult:
    """Execute every grid cell x replication and write results.csv + manifest.txt.

    Failures and out-of-regime cells become rows with a reason in the status
    column; the row count always equals cells x replications.
    """
    if config.mode == "calibrate":
        raise ValueError("calibrate mode prints budgets; use calibrate_lines()")
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    cells = config.cells()
    records = []
    for ci, cell in enumerate(cells):
        key = cell_key(cell)
        for rep in range(config.reps):
            records.append(
                RunRecord(
                    run_id=f"{ci:05d}-{rep:05d}",
                    cell=cell,
                    seed=derive_seed(config.seed, key, rep),
                    rep=rep,
                )
            )

    if config.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.jobs) as pool:
            records = list(pool.map(lambda r: _execute(config, r), records))
    else:
        records = [_execute(config, r) for r in records]

    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow(record.to_row(config.mode))

    manifest_path = out_dir / "manifest.txt"
    manifest_path.write_text(render_manifest(config))
    return RunResult(csv_path=csv_path, manifest_path=manifest_path, records=records)


def render_manifest(config: ExperimentConfig) -> str:
    lines = [
        f"schema={SCHEMA_VERSION}",
        f"package=dptail {__version__}",
        f"rng={RNG_ID}",
        f"seed_derivation={SEED_DERIVATION}",
        f"quantile_convention={QUANTILE_CONVENTION}",
        f"columns={','.join(CSV_COLUMNS)}",
    ]
    for name in (
        "mode",
        "n",
        "d",
        "p",
        "eps",
        "delta",
        "estimator",
        "family",
        "reps",
        "seed",
        "jobs",
        "k",
        "tc",
        "radius_mult",
        "rho",
        "steps",
    ):
        value = getattr(config, name)
        if isinstance(value, tuple):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        lines.append(f"config.{name}={value}")
    return "\n".join(lines) + "\n"


def calibrate_lines(config: ExperimentConfig) -> list[str]:
    """Budget calibration report for every (eps, delta) in the grid."""
    lines = []
    for eps in config.eps:
        for delta in config.delta:
            whole = optimization_cdp_budget(eps, delta)
            step = per_step_cdp_budget(eps, delta, config.steps)
            lines.append(
                f"eps={eps!r} delta={delta!r} T={config.steps}: "
                f"rho={whole.rho!r} rho_step={step.rho!r}"
            )
            step_dp = per_step_dp_budget(ApproxDpBudget(eps, delta), config.steps)
            lines.append(
                f"eps={eps!r} delta={delta!r} T={config.steps}: "
                f"eps0={step_dp.epsilon!r} delta0={step_dp.delta!r}"
            )
    return lines


# -- summaries -----------------------------------------------------------

_CELL_COLUMNS = ["mode", "estimator", "family", "n", "d", "p", "eps", "delta", "k", "tc"]


def read_rows(csv_path: str | Path) -> list[dict]:
    """Parse a schema-v1 results CSV, reporting the line of any malformed row."""
    rows = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise ValueError(f"{csv_path}:1: header does not match schema {SCHEMA_VERSION}")
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(CSV_COLUMNS):
                raise ValueError(f"{csv_path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
            row = dict(zip(CSV_COLUMNS, raw))
            try:
                row["outcome"] = float(row["outcome"]) if row["outcome"] else None
                row["wall_ms"] = int(row["wall_ms"])
            except ValueError:
                raise ValueError(f"{csv_path}:{lineno}: malformed numeric field") from None
            rows.append(row)
    return rows


def summarize(csv_path: str | Path, quantiles: list[float], out_path: str | Path | None = None):
    """Per-cell outcome quantiles and mean wall time, written as a second CSV."""
    if any(not 0 < q < 1 for q in quantiles):
        raise ValueError("quantiles must lie in (0, 1)")
    rows = read_rows(csv_path)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row[c] for c in _CELL_COLUMNS)
        groups.setdefault(key, []).append(row)

    header = (
        _CELL_COLUMNS
        + [f"q{q!r}" for q in quantiles]
        + ["mean_wall_ms", "rows", "failures"]
    )
    out_rows = [header]
    for key in sorted(groups):
        cell_rows = groups[key]
        outcomes = [r["outcome"] for r in cell_rows if r["status"] == "ok"]
        qvals = (
            [repr(float(np.quantile(outcomes, q))) for q in quantiles]
            if outcomes
            else ["" for _ in quantiles]
        )
        mean_wall = float(np.mean([r["wall_ms"] for r in cell_rows]))
        failures = sum(1 for r in cell_rows if r["status"] != "ok")
        out_rows.append(list(key) + qvals + [repr(mean_wall), len(cell_rows), failures])

    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            csv.writer(fh).writerows(out_rows)
    return out_rows
