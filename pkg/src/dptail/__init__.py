"""Differentially private optimization and mean estimation for heavy-tailed data."""

__version__ = "0.1.0"

from .estimators import (
    ClipConfig,
    EstOutcome,
    GroupedStats,
    MeanEstimate,
    clip,
    clipping_bias_bound,
    est_brute_force,
    est_direction_distance,
    group_averages,
    iterate_from_groups,
    iterative_update_mean,
    simple_clip_mean,
)
from .optimizer import (
    NonFiniteGradientError,
    ProblemInstance,
    RunTrace,
    Schedule,
    UnsupportedProblemError,
    ball_projection,
    empirical_bias_variance,
    exact_mean_gradient_estimator,
    iterative_gradient_estimator,
    schedule_from_rho,
    schedule_iterative,
    schedule_simple_clipping,
    sgd_loop,
    simple_clipping_gradient_estimator,
)
from .privacy import (
    AccountingOverflowError,
    ApproxDpBudget,
    CdpBudget,
    CdpLedger,
    NoiseScale,
    OutOfRegimeError,
    SensitivityBound,
    advanced_composition,
    cdp_compose,
    cdp_to_dp,
    clipped_mean_sensitivity,
    dp_to_cdp,
    gaussian_noise_scale,
    optimization_cdp_budget,
    per_step_cdp_budget,
    per_step_dp_budget,
    shuffle_amplified_group_budget,
    shuffle_regime_epsilon_cap,
)
from .synthetic import (
    FAMILIES,
    RNG_ID,
    HeavyTailSpec,
    MomentReport,
    make_quadratic_problem,
    make_rng,
    sample,
    verify_moment_bound,
)

__all__ = [name for name in dir() if not name.startswith("_")]
