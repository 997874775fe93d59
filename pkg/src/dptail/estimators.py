"""Private mean estimators for heavy-tailed vectors.

Two mechanisms share the clipping primitive:

* ``simple_clip_mean`` clips every sample to radius R, averages, and adds
  Gaussian noise calibrated to the 2R/n sensitivity of the clipped mean.
* ``iterative_update_mean`` splits the data into k groups, privatizes each
  group average, then walks an iterate toward the truncated mean using
  trimmed distance/direction estimates.  The walk is a permutation-invariant
  function of the group averages, which is what buys the shuffle
  amplification of its privacy budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .privacy import (
    ApproxDpBudget,
    CdpBudget,
    NoiseScale,
    OutOfRegimeError,
    clipped_mean_sensitivity,
    gaussian_noise_scale,
    shuffle_amplified_group_budget,
)

# Step size of the iterative update; the contraction argument fixes it.
ITERATE_STEP = 0.25

# Alternating-maximization settings for the trimmed direction program.
_EST_ROUNDS = 20
_EST_TOL = 1e-9

# Resource guard for the brute-force direction search.
_BRUTE_FORCE_MAX_GROUPS = 15
_BRUTE_FORCE_MAX_DIM = 3


@dataclass(frozen=True)
class ClipConfig:
    """Clipping radius applied to every sample before aggregation."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class GroupedStats:
    """Noisy group averages Q_1..Q_k of equally sized sample bins."""

    group_means: np.ndarray  # (k, d)
    group_size: int
    noise_scale: NoiseScale | None  # None when noise was explicitly disabled

    @property
    def k(self) -> int:
        return self.group_means.shape[0]

    @property
    def dimension(self) -> int:
        return self.group_means.shape[1]


@dataclass(frozen=True)
class EstOutcome:
    """Solution of the trimmed max-margin program at one iterate.

    ``distance`` is the objective value: the smallest projection
    ``<Q_j - c, direction>`` among the selected groups, maximized over unit
    directions and over masks keeping at least 90% of the groups.  It can be
    negative when the iterate sits inside the cloud of group means.
    """

    distance: float
    direction: np.ndarray  # unit vector, (d,)
    selected: np.ndarray  # bool mask, (k,)


@dataclass(frozen=True)
class MeanEstimate:
    """Estimator output plus diagnostics."""

    value: np.ndarray
    iterate_trace: list[tuple[np.ndarray, float]] = field(default_factory=list)
    budget_spent: CdpBudget | ApproxDpBudget | None = None


def clip(x: np.ndarray, radius: float) -> np.ndarray:
    """Scale x onto the radius-R ball: min(1, R/||x||) * x.

    Rescales until the floating-point norm is actually inside the ball, so
    clipping is exactly idempotent (one extra pass at most).
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    y = np.array(x, dtype=float, copy=True)
    norm = float(np.linalg.norm(y))
    while norm > radius:
        y *= radius / norm
        norm = float(np.linalg.norm(y))
    return y


def _clip_rows(samples: np.ndarray, radius: float) -> np.ndarray:
    """Row-wise clipping of an (n, d) array."""
    norms = np.linalg.norm(samples, axis=1)
    scale = np.minimum(1.0, radius / np.maximum(norms, np.finfo(float).tiny))
    return samples * scale[:, None]


def simple_clip_mean(
    samples: np.ndarray,
    cfg: ClipConfig,
    budget: CdpBudget | None,
    rng: np.random.Generator,
    *,
    noise_disabled: bool = False,
) -> MeanEstimate:
    """Clip every sample to radius R, average, add calibrated Gaussian noise.

    The released value is rho-CDP for ``budget.rho`` because the clipped mean
    has sensitivity 2R/n.  ``noise_disabled`` zeroes the noise for tests and
    is never reachable from the benchmark CLI; it voids the privacy claim.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[0]
    if n < 1 or samples.size == 0:
        raise ValueError("need at least one sample")
    if budget is None and not noise_disabled:
        raise ValueError("a CDP budget is required unless noise is explicitly disabled")

    mean = _clip_rows(samples, cfg.radius).mean(axis=0)
    if noise_disabled:
        return MeanEstimate(value=mean, budget_spent=None)

    scale = gaussian_noise_scale(clipped_mean_sensitivity(cfg.radius, n), budget)
    noise = rng.standard_normal(samples.shape[1]) * math.sqrt(scale.sigma2)
    return MeanEstimate(value=mean + noise, budget_spent=budget)


def clipping_bias_bound(p: float, moment_bound: float, d: int, radius: float) -> float:
    """Upper bound d^(p/2) M^p R^(1-p) / (p-1) on the norm of the clipping bias.

    Valid whenever the directional p-th moments of the unclipped vectors are
    at most M^p with p >= 2.
    """
    if p < 2:
        raise OutOfRegimeError(f"the bias bound requires p >= 2, got p={p}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    return d ** (p / 2.0) * moment_bound ** p * radius ** (1.0 - p) / (p - 1.0)


def group_averages(
    samples: np.ndarray,
    k: int,
    cfg: ClipConfig,
    group_budget: CdpBudget | None,
    rng: np.random.Generator,
    *,
    noise_disabled: bool = False,
) -> GroupedStats:
    """Randomly partition samples into k bins and release noisy clipped bin means.

    Each Q_j is the clipped mean of its bin of size m = n // k plus Gaussian
    noise of per-coordinate variance 2R^2/(rho m^2), making it rho-CDP with
    respect to that bin.  When k does not divide n, n mod k samples are
    dropped uniformly at random so the bins stay equally sized.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[0]
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    if k > n:
        raise ValueError(f"cannot form k={k} groups from n={n} samples")
    if group_budget is None and not noise_disabled:
        raise ValueError("a group CDP budget is required unless noise is explicitly disabled")

    m = n // k
    perm = rng.permutation(n)[: m * k]
    clipped = _clip_rows(samples[perm], cfg.radius)
    means = clipped.reshape(k, m, -1).mean(axis=1)

    if noise_disabled:
        return GroupedStats(group_means=means, group_size=m, noise_scale=None)

    scale = gaussian_noise_scale(clipped_mean_sensitivity(cfg.radius, m), group_budget)
    means = means + rng.standard_normal(means.shape) * math.sqrt(scale.sigma2)
    return GroupedStats(group_means=means, group_size=m, noise_scale=scale)


def _required_selection(k: int) -> int:
    return int(math.ceil(0.9 * k))


def _evaluate_direction(diffs: np.ndarray, u: np.ndarray, need: int):
    """Best mask for a fixed direction: keep the `need` largest projections."""
    proj = diffs @ u
    if need >= proj.shape[0]:
        idx = np.arange(proj.shape[0])
    else:
        idx = np.argpartition(proj, len(proj) - need)[len(proj) - need:]
    mask = np.zeros(proj.shape[0], dtype=bool)
    mask[idx] = True
    return float(proj[idx].min()), mask


def _fallback_direction(d: int) -> np.ndarray:
    u = np.zeros(d)
    u[0] = 1.0
    return u


def est_direction_distance(stats: GroupedStats, c: np.ndarray) -> EstOutcome:
    """Heuristic solver for the trimmed max-margin program.

    Alternating maximization: aim at the coordinate-wise median of the group
    means, evaluating that direction and its antipode (the antipode matters
    when the iterate sits inside the cloud and no trimming is allowed), then
    alternately (a) select the 90% of groups with the largest projections
    and record the smallest selected projection, and (b) re-aim at the mean
    of the selected groups.  The returned triple is always feasible;
    optimality is only heuristic and is checked against ``est_brute_force``
    at small scale.
    """
    diffs = stats.group_means - np.asarray(c, dtype=float)
    k, d = diffs.shape
    if k < 1:
        raise ValueError("need at least one group")
    need = _required_selection(k)

    anchor = np.median(diffs, axis=0)
    norm = float(np.linalg.norm(anchor))
    u = anchor / norm if norm > 0 else _fallback_direction(d)

    s_fwd, mask_fwd = _evaluate_direction(diffs, u, need)
    s_bwd, mask_bwd = _evaluate_direction(diffs, -u, need)
    if s_bwd > s_fwd:
        u, s, mask = -u, s_bwd, mask_bwd
    else:
        s, mask = s_fwd, mask_fwd

    best = (s, u, mask)
    prev_s = s
    for _ in range(_EST_ROUNDS - 1):
        center = diffs[mask].mean(axis=0)
        norm = float(np.linalg.norm(center))
        if norm == 0.0:
            break
        u = center / norm
        s, mask = _evaluate_direction(diffs, u, need)
        if s > best[0]:
            best = (s, u, mask)
        if s <= prev_s + _EST_TOL:
            break
        prev_s = s

    s, u, mask = best
    return EstOutcome(distance=s, direction=u, selected=mask)


def _direction_grid(d: int, resolution: int) -> np.ndarray:
    """Deterministic unit-direction grid: {+-1} in 1-d, angular grids above."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        theta = 2.0 * np.pi * np.arange(resolution) / resolution
        return np.column_stack([np.cos(theta), np.sin(theta)])
    # d == 3: Fibonacci sphere
    i = np.arange(resolution, dtype=float) + 0.5
    z = 1.0 - 2.0 * i / resolution
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def est_brute_force(stats: GroupedStats, c: np.ndarray, direction_grid: int) -> EstOutcome:
    """Exhaustive direction-grid solver for the trimmed max-margin program.

    Testing oracle only: scans a dense grid of unit directions and, for each,
    keeps the 90% of groups with the largest projections.  Exact up to the
    grid resolution, hence the resource guard on k and d.
    """
    diffs = stats.group_means - np.asarray(c, dtype=float)
    k, d = diffs.shape
    if k > _BRUTE_FORCE_MAX_GROUPS:
        raise ValueError(f"brute force is limited to k <= {_BRUTE_FORCE_MAX_GROUPS}, got {k}")
    if d > _BRUTE_FORCE_MAX_DIM:
        raise ValueError(f"brute force is limited to d <= {_BRUTE_FORCE_MAX_DIM}, got {d}")
    if direction_grid < 1:
        raise ValueError("direction_grid must be a positive integer")
    need = _required_selection(k)

    best = None
    for u in _direction_grid(d, direction_grid):
        s, mask = _evaluate_direction(diffs, u, need)
        if best is None or s > best[0]:
            best = (s, u, mask)
    s, u, mask = best
    return EstOutcome(distance=s, direction=u, selected=mask)


def iterate_from_groups(
    stats: GroupedStats, t_c: int, initial_point: np.ndarray | None = None
) -> MeanEstimate:
    """Run the iterative update on already-released group averages.

    Pure post-processing of the group means, bit-identical under any
    permutation of them: the groups are put in a canonical (lexicographic)
    order before any floating-point reduction happens.  Starts from the
    coordinate-wise median unless a point is given, takes steps
    c <- c + (1/4) * d * g, and returns the iterate with the smallest
    recorded distance estimate (earliest wins on ties).
    """
    if t_c < 1:
        raise ValueError(f"t_c must be a positive integer, got {t_c}")
    means = np.asarray(stats.group_means, dtype=float)
    order = np.lexsort(means.T[::-1])
    canonical = GroupedStats(
        group_means=means[order], group_size=stats.group_size, noise_scale=stats.noise_scale
    )

    if initial_point is None:
        c = np.median(canonical.group_means, axis=0)
    else:
        c = np.asarray(initial_point, dtype=float)
    trace: list[tuple[np.ndarray, float]] = []
    for _ in range(t_c):
        outcome = est_direction_distance(canonical, c)
        trace.append((c, outcome.distance))
        c = c + ITERATE_STEP * outcome.distance * outcome.direction

    best = min(range(len(trace)), key=lambda l: trace[l][1])
    return MeanEstimate(value=trace[best][0], iterate_trace=trace)


def iterative_update_mean(
    samples: np.ndarray,
    cfg: ClipConfig,
    total: ApproxDpBudget,
    k: int,
    t_c: int,
    rng: np.random.Generator,
    *,
    noise_disabled: bool = False,
    initial_point: np.ndarray | None = None,
) -> MeanEstimate:
    """Group-and-update mean estimator under a total (eps, delta)-DP budget.

    The per-group CDP budget comes from the shuffle amplification closed
    form, so the whole map from samples to output is (eps, delta)-DP as long
    as eps stays inside the amplification regime for the given k.  Requires
    k to divide n exactly.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[0]
    if n % k != 0:
        raise ValueError(f"k={k} must divide n={n} exactly")
    group_budget = None if noise_disabled else shuffle_amplified_group_budget(total, k)
    stats = group_averages(samples, k, cfg, group_budget, rng, noise_disabled=noise_disabled)
    estimate = iterate_from_groups(stats, t_c, initial_point=initial_point)
    return MeanEstimate(
        value=estimate.value,
        iterate_trace=estimate.iterate_trace,
        budget_spent=total if not noise_disabled else None,
    )
