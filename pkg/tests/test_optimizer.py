"""Unit tests for the projected SGD loop and the parameter schedules."""

import math

import numpy as np
import pytest

from dptail.optimizer import (
    NonFiniteGradientError,
    ProblemInstance,
    Schedule,
    UnsupportedProblemError,
    ball_projection,
    empirical_bias_variance,
    exact_mean_gradient_estimator,
    schedule_from_rho,
    schedule_iterative,
    schedule_simple_clipping,
    sgd_loop,
    simple_clipping_gradient_estimator,
)
from dptail.privacy import ApproxDpBudget, OutOfRegimeError
from dptail.synthetic import HeavyTailSpec, make_quadratic_problem, make_rng


def quadratic_problem_1d(eta_cap=1.0):
    """F(w) = w^2/2 on [-1, 1] with exact per-sample gradients."""
    return ProblemInstance(
        gradient_oracle=lambda w, z: np.tile(w, (z.shape[0], 1)),
        projection=ball_projection(np.zeros(1), 1.0),
        diameter=2.0,
        smoothness=1.0,
        moment_bound=1.0,
        moment_order=2.0,
        dimension=1,
        population_risk=lambda w: 0.5 * float(w @ w),
        minimum_value=0.0,
    )


class TestSgdLoop:
    def test_zero_gradient_fixed_point(self):
        problem = ProblemInstance(
            gradient_oracle=lambda w, z: np.zeros((z.shape[0], 3)),
            projection=ball_projection(np.zeros(3), 1.0),
            diameter=2.0,
            smoothness=1.0,
            moment_bound=1.0,
            moment_order=2.0,
            dimension=3,
        )
        w0 = np.array([0.2, -0.3, 0.1])
        sched = Schedule(steps=15, learning_rate=0.7, clip_radius=1.0)
        trace = sgd_loop(problem, np.zeros((5, 1)), sched, exact_mean_gradient_estimator(), w0, make_rng(0))
        np.testing.assert_allclose(trace.averaged_output, w0, rtol=1e-12)

    def test_geometric_decay_closed_form(self):
        problem = quadratic_problem_1d()
        sched = Schedule(steps=20, learning_rate=0.5, clip_radius=1.0)
        trace = sgd_loop(
            problem, np.zeros((10, 1)), sched, exact_mean_gradient_estimator(), np.ones(1), make_rng(0)
        )
        expected = np.mean([0.5**t for t in range(20)])
        assert trace.averaged_output[0] == pytest.approx(expected, abs=1e-12)
        assert trace.excess_risk == pytest.approx(0.5 * expected**2, abs=1e-12)

    def test_iterates_stay_feasible(self):
        spec = HeavyTailSpec(4, 2.0, 1.0, "student-like", np.zeros(4))
        problem = make_quadratic_problem(spec, 1.0, 2.0, make_rng(2))
        data = problem.data_sampler(500, make_rng(3))
        sched = Schedule(steps=30, learning_rate=0.3, clip_radius=5.0)
        est = simple_clipping_gradient_estimator(sched.clip_radius, 0.01)
        trace = sgd_loop(problem, data, sched, est, np.full(4, 3.0), make_rng(4))
        for w in trace.iterates:
            assert np.linalg.norm(w) <= 0.5 + 1e-12
            np.testing.assert_array_equal(problem.projection(w), w)

    def test_averaging_invariant(self):
        spec = HeavyTailSpec(3, 2.0, 1.0, "gaussian", np.zeros(3))
        problem = make_quadratic_problem(spec, 2.0, 1.0, make_rng(5))
        data = problem.data_sampler(200, make_rng(6))
        sched = Schedule(steps=25, learning_rate=0.1, clip_radius=4.0)
        est = simple_clipping_gradient_estimator(sched.clip_radius, 0.1)
        trace = sgd_loop(problem, data, sched, est, np.zeros(3), make_rng(7))
        np.testing.assert_allclose(
            trace.averaged_output, np.mean(np.stack(trace.iterates), axis=0), atol=1e-9
        )

    def test_determinism(self):
        spec = HeavyTailSpec(3, 2.0, 1.0, "pareto-symmetric", np.zeros(3))
        problem = make_quadratic_problem(spec, 2.0, 1.0, make_rng(8))
        sched = Schedule(steps=10, learning_rate=0.2, clip_radius=3.0)
        runs = []
        for _ in range(2):
            data = problem.data_sampler(300, make_rng(9))
            est = simple_clipping_gradient_estimator(sched.clip_radius, 0.05)
            runs.append(sgd_loop(problem, data, sched, est, np.zeros(3), make_rng(10)))
        np.testing.assert_array_equal(runs[0].averaged_output, runs[1].averaged_output)
        assert runs[0].excess_risk == runs[1].excess_risk

    def test_non_finite_estimate_aborts_with_step(self):
        problem = quadratic_problem_1d()
        sched = Schedule(steps=5, learning_rate=0.1, clip_radius=1.0)

        calls = []

        def bad_estimator(grads, rng):
            calls.append(0)
            return np.array([np.nan]) if len(calls) == 3 else grads.mean(axis=0)

        with pytest.raises(NonFiniteGradientError) as err:
            sgd_loop(problem, np.zeros((4, 1)), sched, bad_estimator, np.ones(1), make_rng(0))
        assert err.value.step == 2


class TestSchedules:
    def test_clipped_mean_schedule_reference(self):
        sched = schedule_from_rho(100, 1, 2.0, 1.0, 1.0)
        assert sched.steps == 100
        assert sched.clip_radius == pytest.approx(10.0, rel=1e-12)
        assert sched.learning_rate == pytest.approx(1.0 / math.sqrt(200.0), rel=1e-12)

    def test_radius_grows_with_n(self):
        radii = [schedule_from_rho(n, 3, 2.5, 0.2, 1.0).clip_radius for n in (100, 1000, 10000)]
        assert radii == sorted(radii)
        assert radii[0] < radii[-1]

    def test_step_count_clamped(self):
        sched = schedule_from_rho(2, 1, 2.0, 1e-6, 1.0)
        assert sched.steps >= 1

    def test_simple_schedule_regime(self):
        spec = HeavyTailSpec(2, 2.0, 1.0, "gaussian", np.zeros(2))
        problem = make_quadratic_problem(spec, 2.0, 1.0, make_rng(0))
        with pytest.raises(OutOfRegimeError):
            schedule_simple_clipping(1000, problem, ApproxDpBudget(1.5, 1e-5))
        sched = schedule_simple_clipping(
            1000, problem, ApproxDpBudget(1.5, 1e-5), unchecked=True
        )
        assert sched.steps >= 1

    def test_iterative_schedule_reference(self):
        problem = ProblemInstance(
            gradient_oracle=lambda w, z: z,
            projection=lambda w: w,
            diameter=2.0,
            smoothness=1.0,
            moment_bound=1.0,
            moment_order=2.0,
            dimension=1,
        )
        sched = schedule_iterative(100, problem, ApproxDpBudget(1.0, 1e-5))
        assert sched.clip_radius == pytest.approx(10.0, rel=1e-12)
        assert sched.steps == 100
        assert sched.learning_rate == pytest.approx(1.0 / math.sqrt(200.0), rel=1e-12)

    def test_iterative_schedule_identity(self):
        # after substituting R, T equals (1/d) (n eps / sqrt(d))^(2 - 2/p) up to the ceiling
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(100, 100_000))
            d = int(rng.integers(1, 30))
            p = float(rng.uniform(2.0, 6.0))
            eps = float(rng.uniform(0.05, 1.0))
            problem = ProblemInstance(
                gradient_oracle=lambda w, z: z,
                projection=lambda w: w,
                diameter=2.0,
                smoothness=1.0,
                moment_bound=1.0,
                moment_order=p,
                dimension=d,
            )
            sched = schedule_iterative(n, problem, ApproxDpBudget(eps, 1e-5))
            closed = (1.0 / d) * (n * eps / math.sqrt(d)) ** (2.0 - 2.0 / p)
            assert closed - 1e-6 <= sched.steps <= closed + 1 + 1e-6

    def test_iterative_radius_grows_with_eps(self):
        problem = ProblemInstance(
            gradient_oracle=lambda w, z: z,
            projection=lambda w: w,
            diameter=2.0,
            smoothness=1.0,
            moment_bound=1.0,
            moment_order=3.0,
            dimension=4,
        )
        radii = [
            schedule_iterative(5000, problem, ApproxDpBudget(e, 1e-5)).clip_radius
            for e in (0.1, 0.3, 0.9)
        ]
        assert radii == sorted(radii)
        assert radii[0] < radii[-1]


class TestBiasVariance:
    def test_exact_mean_is_unbiased(self):
        spec = HeavyTailSpec(4, 2.0, 1.0, "gaussian", np.zeros(4))
        problem = make_quadratic_problem(spec, 2.0, 1.0, make_rng(1))
        w = problem.projection(np.full(4, 0.3))
        bias, variance = empirical_bias_variance(
            problem, w, 500, exact_mean_gradient_estimator(), 400, make_rng(2)
        )
        assert bias < 0.02
        assert variance >= bias**2

    def test_variance_dominates_squared_bias(self):
        spec = HeavyTailSpec(3, 2.0, 1.0, "pareto-symmetric", np.zeros(3))
        problem = make_quadratic_problem(spec, 2.0, 1.0, make_rng(3))
        w = problem.projection(np.full(3, -0.2))
        est = simple_clipping_gradient_estimator(2.0, 0.5)
        bias, variance = empirical_bias_variance(problem, w, 200, est, 100, make_rng(4))
        assert variance >= bias**2

    def test_tighter_clipping_means_more_bias(self):
        spec = HeavyTailSpec(4, 2.0, 1.0, "student-like", np.zeros(4))
        problem = make_quadratic_problem(spec, 2.0, 1.0, make_rng(5))
        w = problem.projection(np.full(4, 0.4))
        gaps = []
        for seed in range(30):
            tight, _ = empirical_bias_variance(
                problem,
                w,
                2000,
                simple_clipping_gradient_estimator(1.0, 1.0, noise_disabled=True),
                50,
                make_rng(300 + seed),
            )
            loose, _ = empirical_bias_variance(
                problem,
                w,
                2000,
                simple_clipping_gradient_estimator(4.0, 1.0, noise_disabled=True),
                50,
                make_rng(300 + seed),
            )
            gaps.append(tight - loose)
        assert np.median(gaps) >= 0

    def test_requires_known_gradient(self):
        problem = quadratic_problem_1d()
        with pytest.raises(UnsupportedProblemError):
            empirical_bias_variance(
                problem, np.zeros(1), 10, exact_mean_gradient_estimator(), 5, make_rng(0)
            )


class TestRiskDecomposition:
    def test_injected_bias_variance_obeys_bound(self):
        # excess risk <= L^2/(2 eta T) + L B + eta (lambda^2 L^2 + G^2) + 3 SE
        d, steps, reps = 5, 60, 40
        lam, diameter = 1.0, 2.0
        problem = ProblemInstance(
            gradient_oracle=lambda w, z: np.tile(lam * w, (z.shape[0], 1)),
            projection=ball_projection(np.zeros(d), diameter / 2.0),
            diameter=diameter,
            smoothness=lam,
            moment_bound=1.0,
            moment_order=2.0,
            dimension=d,
            population_risk=lambda w: 0.5 * lam * float(w @ w),
            minimum_value=0.0,
        )
        eta = 1.0 / math.sqrt(2.0 * steps * lam**2)
        sched = Schedule(steps=steps, learning_rate=eta, clip_radius=1.0)
        direction = np.ones(d) / math.sqrt(d)
        for bias_mag in (0.0, 0.1, 0.3):
            for noise_sd in (0.0, 0.2, 0.6):
                g_second_moment = bias_mag**2 + d * noise_sd**2

                def estimator(grads, rng):
                    return grads.mean(axis=0) + bias_mag * direction + noise_sd * rng.standard_normal(d)

                risks = []
                for rep in range(reps):
                    trace = sgd_loop(
                        problem,
                        np.zeros((1, d)),
                        sched,
                        estimator,
                        np.full(d, 0.9 / math.sqrt(d)),
                        make_rng(9000 + rep),
                    )
                    risks.append(trace.excess_risk)
                bound = (
                    diameter**2 / (2 * eta * steps)
                    + diameter * bias_mag
                    + eta * (lam**2 * diameter**2 + g_second_moment)
                )
                se = np.std(risks, ddof=1) / math.sqrt(reps)
                assert np.mean(risks) <= bound + 3 * se
