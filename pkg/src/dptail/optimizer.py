"""Projected stochastic gradient descent with private gradient estimates.

The loop is the textbook averaged-iterate projected SGD; all the privacy
lives in the gradient estimator plugged into it.  Schedules translate a
total (eps, delta) budget and problem constants into (T, eta, R).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimators import ClipConfig, iterative_update_mean, simple_clip_mean
from .privacy import (
    ApproxDpBudget,
    CdpBudget,
    CdpLedger,
    OutOfRegimeError,
    optimization_cdp_budget,
)

GradientEstimator = Callable[[np.ndarray, np.random.Generator], np.ndarray]


class NonFiniteGradientError(RuntimeError):
    """A gradient estimate came back NaN or infinite."""

    def __init__(self, step: int):
        super().__init__(f"non-finite gradient estimate at step {step}")
        self.step = step


class UnsupportedProblemError(ValueError):
    """The operation needs problem structure (known gradients) that is absent."""


@dataclass(frozen=True)
class ProblemInstance:
    """A stochastic convex problem the optimizer can run on.

    ``gradient_oracle(w, samples)`` returns the (n, d) array of per-sample
    loss gradients at w.  ``projection`` maps onto the feasible set and must
    be idempotent.  The ``population_*`` callables and the minimizer are
    available for synthetic problems where the truth is known; they are what
    excess-risk evaluation and bias/variance probes rely on.
    """

    gradient_oracle: Callable[[np.ndarray, np.ndarray], np.ndarray]
    projection: Callable[[np.ndarray], np.ndarray]
    diameter: float
    smoothness: float
    moment_bound: float
    moment_order: float
    dimension: int
    population_gradient: Callable[[np.ndarray], np.ndarray] | None = None
    population_risk: Callable[[np.ndarray], float] | None = None
    minimizer: np.ndarray | None = None
    minimum_value: float | None = None
    data_sampler: Callable[[int, np.random.Generator], np.ndarray] | None = None


@dataclass(frozen=True)
class Schedule:
    """Step count, learning rate, and clipping radius for one run."""

    steps: int
    learning_rate: float
    clip_radius: float

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.learning_rate > 0 or not self.clip_radius > 0:
            raise ValueError("learning rate and clip radius must be positive")


@dataclass(frozen=True)
class RunTrace:
    """Everything one optimization run produced."""

    iterates: list[np.ndarray]
    averaged_output: np.ndarray
    excess_risk: float | None = None
    bias_proxy: float | None = None
    variance_proxy: float | None = None


def ball_projection(center: np.ndarray, radius: float) -> Callable[[np.ndarray], np.ndarray]:
    """Euclidean projection onto the ball of the given center and radius."""
    center = np.asarray(center, dtype=float)

    def project(w: np.ndarray) -> np.ndarray:
        shifted = np.asarray(w, dtype=float) - center
        norm = float(np.linalg.norm(shifted))
        if norm <= radius:
            return center + shifted
        return center + shifted * (radius / norm)

    return project


def simple_clipping_gradient_estimator(
    radius: float,
    rho_step: float,
    *,
    ledger: CdpLedger | None = None,
    noise_disabled: bool = False,
) -> GradientEstimator:
    """Per-step gradient estimator: clipped mean plus rho_step-CDP noise."""
    cfg = ClipConfig(radius)
    budget = None if noise_disabled else CdpBudget(rho_step)

    def estimate(grads: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if ledger is not None and budget is not None:
            ledger.charge(budget)
        return simple_clip_mean(grads, cfg, budget, rng, noise_disabled=noise_disabled).value

    return estimate


def iterative_gradient_estimator(
    radius: float,
    step_budget: ApproxDpBudget,
    k: int,
    t_c: int,
    *,
    noise_disabled: bool = False,
) -> GradientEstimator:
    """Per-step gradient estimator backed by the iterative updating method."""
    cfg = ClipConfig(radius)

    def estimate(grads: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = grads.shape[0]
        usable = (n // k) * k
        return iterative_update_mean(
            grads[:usable], cfg, step_budget, k, t_c, rng, noise_disabled=noise_disabled
        ).value

    return estimate


def exact_mean_gradient_estimator() -> GradientEstimator:
    """Non-private control: the plain sample mean of the per-sample gradients."""

    def estimate(grads: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return grads.mean(axis=0)

    return estimate


def sgd_loop(
    problem: ProblemInstance,
    samples: np.ndarray,
    schedule: Schedule,
    grad_estimator: GradientEstimator,
    w0: np.ndarray,
    rng: np.random.Generator,
) -> RunTrace:
    """Run exactly T projected updates and return the averaged iterate.

    Every step evaluates the per-sample gradients of the full dataset at the
    current iterate (no minibatching; the privacy split assumes the full
    data is touched each step) and feeds them to the estimator.  The output
    is the arithmetic mean of the T recorded iterates, starting from the
    projection of w0.
    """
    w = problem.projection(np.asarray(w0, dtype=float))
    iterates: list[np.ndarray] = []
    for t in range(schedule.steps):
        grads = problem.gradient_oracle(w, samples)
        g = grad_estimator(grads, rng)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(step=t)
        iterates.append(w)
        w = problem.projection(w - schedule.learning_rate * g)

    averaged = np.mean(np.stack(iterates), axis=0)
    excess = None
    if problem.population_risk is not None and problem.minimum_value is not None:
        excess = float(problem.population_risk(averaged) - problem.minimum_value)
    return RunTrace(iterates=iterates, averaged_output=averaged, excess_risk=excess)


def schedule_from_rho(
    n: int, d: int, p: float, rho: float, smoothness: float, radius_scale: float = 1.0
) -> Schedule:
    """Schedule for the clipped-mean estimator given a whole-run CDP budget.

    R = sqrt(d) * min((n*sqrt(rho)/sqrt(d))^(1/p), (n/d)^(1/p)) * radius_scale,
    T = ceil(rho * n^2 / (d R^2)) clamped to >= 1, eta = 1/sqrt(2 T lambda^2).
    ``radius_scale`` carries the moment scale M (and any dimensionless
    multiplier); the dimensionless rate formulas leave it free.
    """
    r_unit = math.sqrt(d) * min(
        (n * math.sqrt(rho) / math.sqrt(d)) ** (1.0 / p), (n / d) ** (1.0 / p)
    )
    radius = r_unit * radius_scale
    steps = max(1, math.ceil(rho * n * n / (d * radius * radius)))
    eta = 1.0 / math.sqrt(2.0 * steps * smoothness ** 2)
    return Schedule(steps=steps, learning_rate=eta, clip_radius=radius)


def schedule_simple_clipping(
    n: int,
    problem: ProblemInstance,
    total: ApproxDpBudget,
    *,
    radius_multiplier: float = 1.0,
    unchecked: bool = False,
) -> Schedule:
    """The clipped-mean schedule for a total (eps, delta) budget."""
    rho = optimization_cdp_budget(total.epsilon, total.delta, unchecked=unchecked).rho
    return schedule_from_rho(
        n,
        problem.dimension,
        problem.moment_order,
        rho,
        problem.smoothness,
        radius_scale=problem.moment_bound * radius_multiplier,
    )


def schedule_iterative(
    n: int,
    problem: ProblemInstance,
    total: ApproxDpBudget,
    *,
    radius_multiplier: float = 1.0,
    unchecked: bool = False,
) -> Schedule:
    """The iterative-updating schedule for a total (eps, delta) budget.

    R = sqrt(d) * (n*eps/sqrt(d))^(1/p) * M, T = ceil(n^2 eps^2 / (d R^2))
    clamped to >= 1, eta = 1/sqrt(2 T lambda^2).  The per-step (eps0, delta0)
    split is a separate accounting step (``per_step_dp_budget``).
    """
    eps = total.epsilon
    if eps > 1.0 and not unchecked:
        raise OutOfRegimeError(
            f"eps={eps} > 1 is outside the proven regime; pass unchecked=True to override"
        )
    d, p = problem.dimension, problem.moment_order
    radius = (
        math.sqrt(d)
        * (n * eps / math.sqrt(d)) ** (1.0 / p)
        * problem.moment_bound
        * radius_multiplier
    )
    steps = max(1, math.ceil(n * n * eps * eps / (d * radius * radius)))
    eta = 1.0 / math.sqrt(2.0 * steps * problem.smoothness ** 2)
    return Schedule(steps=steps, learning_rate=eta, clip_radius=radius)


def empirical_bias_variance(
    problem: ProblemInstance,
    w: np.ndarray,
    n: int,
    estimator: GradientEstimator,
    reps: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte-Carlo stand-ins for the bias and second moment of a gradient estimator.

    Draws ``reps`` fresh datasets of size n at the fixed point w, runs the
    estimator on each, and returns ``||mean(g) - grad F(w)||`` and
    ``mean ||g - grad F(w)||^2``.  Needs a synthetic problem with a known
    population gradient and a data sampler.
    """
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if problem.population_gradient is None or problem.data_sampler is None:
        raise UnsupportedProblemError(
            "bias/variance probes need a known population gradient and a data sampler"
        )
    w = np.asarray(w, dtype=float)
    target = problem.population_gradient(w)
    draws = np.empty((reps, problem.dimension))
    for r in range(reps):
        samples = problem.data_sampler(n, rng)
        draws[r] = estimator(problem.gradient_oracle(w, samples), rng)
    bias = float(np.linalg.norm(draws.mean(axis=0) - target))
    variance = float(np.mean(np.sum((draws - target) ** 2, axis=1)))
    return bias, variance
