"""Unit tests for the heavy-tailed samplers and synthetic problems."""

import math

import numpy as np
import pytest

from dptail.synthetic import (
    FAMILIES,
    HeavyTailSpec,
    _gaussian_abs_moment,
    _pareto_radial_moment,
    _sphere_coord_abs_moment,
    _student_abs_moment,
    make_quadratic_problem,
    make_rng,
    sample,
    verify_moment_bound,
)


class TestQuadratureConstants:
    def test_gaussian_abs_moment_closed_form(self):
        for p in (2.0, 2.5, 3.7, 5.0):
            closed = 2 ** (p / 2) * math.gamma((p + 1) / 2) / math.sqrt(math.pi)
            assert _gaussian_abs_moment(p) == pytest.approx(closed, rel=1e-9)

    def test_student_abs_moment_closed_form(self):
        for p, nu in ((2.0, 2.5), (2.0, 4.0), (3.0, 3.5)):
            closed = (
                nu ** (p / 2)
                * math.gamma((p + 1) / 2)
                * math.gamma((nu - p) / 2)
                / (math.sqrt(math.pi) * math.gamma(nu / 2))
            )
            assert _student_abs_moment(p, nu) == pytest.approx(closed, rel=1e-8)
        # second moment of a t distribution is nu/(nu-2)
        assert _student_abs_moment(2.0, 2.5) == pytest.approx(5.0, rel=1e-8)
        assert _student_abs_moment(3.0, 2.5) == math.inf

    def test_sphere_coordinate_moment_closed_form(self):
        for p, d in ((2.0, 2), (2.0, 5), (3.0, 3), (4.0, 7)):
            closed = (
                math.gamma((p + 1) / 2)
                * math.gamma(d / 2)
                / (math.sqrt(math.pi) * math.gamma((p + d) / 2))
            )
            assert _sphere_coord_abs_moment(p, d) == pytest.approx(closed, rel=1e-9)
        assert _sphere_coord_abs_moment(2.0, 4) == pytest.approx(0.25, rel=1e-9)

    def test_pareto_radial_moment_closed_form(self):
        assert _pareto_radial_moment(2.0, 2.5, 10.0) == pytest.approx(
            2.5 / 0.5 * 100.0, rel=1e-9
        )
        assert _pareto_radial_moment(3.0, 2.5, 10.0) == math.inf


class TestSpecValidation:
    def test_rejects_divergent_moment(self):
        with pytest.raises(ValueError):
            HeavyTailSpec(3, 2.0, 1.0, "student-like", np.zeros(3), tail_index=1.5)

    def test_unchecked_escape_hatch(self):
        spec = HeavyTailSpec(3, 2.0, 1.0, "student-like", np.zeros(3), tail_index=1.5, unchecked=True)
        assert spec.tail_index == 1.5

    def test_rejects_unknown_family(self):
        with pytest.raises(ValueError):
            HeavyTailSpec(3, 2.0, 1.0, "cauchy", np.zeros(3))

    def test_rejects_mismatched_mean(self):
        with pytest.raises(ValueError):
            HeavyTailSpec(3, 2.0, 1.0, "gaussian", np.zeros(2))

    def test_unsamplable_tail_rejected_at_sampling(self):
        spec = HeavyTailSpec(2, 2.0, 1.0, "student-like", np.zeros(2), tail_index=0.9, unchecked=True)
        with pytest.raises(ValueError):
            sample(spec, 10, make_rng(0))


class TestSampling:
    def test_gaussian_unit_second_moment(self):
        # p=2, M=1 gaussian family needs no rescaling at all
        spec = HeavyTailSpec(4, 2.0, 1.0, "gaussian", np.zeros(4))
        assert spec.base_scale() == pytest.approx(1.0, rel=1e-9)
        x = sample(spec, 200_000, make_rng(1))
        dir_moment = (x[:, 0] ** 2).mean()
        assert dir_moment == pytest.approx(1.0, abs=0.02)

    def test_moment_bound_scale_linear_in_m(self):
        lo = HeavyTailSpec(3, 2.0, 1.0, "pareto-symmetric", np.zeros(3)).base_scale()
        hi = HeavyTailSpec(3, 2.0, 2.0, "pareto-symmetric", np.zeros(3)).base_scale()
        assert hi == pytest.approx(2 * lo, rel=1e-12)

    def test_mean_recovered(self):
        mu = np.array([1.0, -2.0, 0.5])
        for family in FAMILIES:
            spec = HeavyTailSpec(3, 2.0, 1.0, family, mu)
            x = sample(spec, 200_000, make_rng(2))
            se = x.std(axis=0, ddof=1) / math.sqrt(len(x))
            assert (np.abs(x.mean(axis=0) - mu) <= 5 * se).all(), family

    def test_reproducible_streams(self):
        spec = HeavyTailSpec(2, 2.0, 1.0, "student-like", np.zeros(2))
        a = sample(spec, 100, make_rng(7))
        b = sample(spec, 100, make_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_generator_is_stable(self):
        # counter-based stream pinned so seeds stay portable; a change here
        # means recorded seeds no longer reproduce published runs
        value = make_rng(0).random()
        assert value == pytest.approx(0.011546754286331562, abs=1e-15)


class TestMomentVerification:
    def test_all_families_pass(self):
        for family in FAMILIES:
            spec = HeavyTailSpec(4, 2.0, 1.0, family, np.full(4, 0.25))
            report = verify_moment_bound(spec, 200_000, 64, make_rng(3))
            assert report.passed, (family, report)

    def test_gaussian_norm_moment_saturates_dimension_bound(self):
        spec = HeavyTailSpec(4, 2.0, 1.0, "gaussian", np.zeros(4))
        report = verify_moment_bound(spec, 200_000, 32, make_rng(4))
        assert report.norm_bound == pytest.approx(4.0, rel=1e-12)
        assert report.norm_estimate == pytest.approx(4.0, abs=0.05)

    def test_divergent_negative_control_fails(self):
        neg = HeavyTailSpec(3, 2.0, 1.0, "student-like", np.zeros(3), tail_index=1.5, unchecked=True)
        report = verify_moment_bound(neg, 200_000, 64, make_rng(5))
        assert not report.passed
        assert report.directional_margin < 0 or report.norm_margin < 0


class TestQuadraticProblem:
    def test_minimizer_is_stationary_and_interior(self):
        spec = HeavyTailSpec(5, 2.0, 1.0, "student-like", np.zeros(5))
        problem = make_quadratic_problem(spec, 2.0, 1.5, make_rng(6))
        np.testing.assert_allclose(problem.population_gradient(problem.minimizer), 0.0, atol=1e-15)
        assert np.linalg.norm(problem.minimizer) <= 0.5
        np.testing.assert_array_equal(problem.projection(problem.minimizer), problem.minimizer)

    def test_excess_risk_closed_form(self):
        spec = HeavyTailSpec(3, 2.0, 1.0, "gaussian", np.zeros(3))
        curvature = 2.0
        problem = make_quadratic_problem(spec, 2.0, curvature, make_rng(7))
        w = problem.projection(np.array([0.3, -0.1, 0.2]))
        expected = 0.5 * curvature * np.sum((w - problem.minimizer) ** 2)
        assert problem.population_risk(w) - problem.minimum_value == pytest.approx(expected, rel=1e-12)

    def test_gradient_oracle_matches_population_on_noiseless_data(self):
        mu = np.array([0.5, -0.5])
        spec = HeavyTailSpec(2, 2.0, 1.0, "gaussian", mu)
        problem = make_quadratic_problem(spec, 2.0, 1.0, make_rng(8))
        w = np.array([0.1, 0.4])
        grads = problem.gradient_oracle(w, np.tile(mu, (20, 1)))
        np.testing.assert_allclose(grads, np.tile(problem.population_gradient(w), (20, 1)), atol=1e-12)

    def test_gradient_oracle_mean_converges(self):
        spec = HeavyTailSpec(3, 2.0, 1.0, "student-like", np.zeros(3))
        problem = make_quadratic_problem(spec, 2.0, 1.0, make_rng(9))
        w = problem.projection(np.full(3, 0.2))
        z = problem.data_sampler(100_000, make_rng(10))
        grads = problem.gradient_oracle(w, z)
        se = grads.std(axis=0, ddof=1) / math.sqrt(len(z))
        assert (np.abs(grads.mean(axis=0) - problem.population_gradient(w)) <= 5 * se).all()

    def test_projection_idempotent(self):
        spec = HeavyTailSpec(2, 2.0, 1.0, "gaussian", np.zeros(2))
        problem = make_quadratic_problem(spec, 2.0, 1.0, make_rng(11))
        rng = make_rng(12)
        for _ in range(50):
            w = rng.standard_normal(2) * 5
            once = problem.projection(w)
            np.testing.assert_array_equal(problem.projection(once), once)
