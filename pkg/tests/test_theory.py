import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psgunlearn import nn_core, theory


class TestErf:
    @pytest.mark.parametrize("x", [0.0, 1e-8, 0.3, 1.0, 2.5, 2.999, 3.0, 3.001, 4.2, 5.9, 7.0, -1.3])
    def test_against_high_precision(self, x):
        mpmath.mp.dps = 40
        assert abs(theory.erf(x) - float(mpmath.erf(x))) <= 1e-12

    def test_dense_grid_against_stdlib(self):
        xs = np.linspace(-8, 8, 4001)
        assert max(abs(theory.erf(x) - math.erf(x)) for x in xs) <= 1e-12

    def test_expected_sign_reference_value(self):
        # 2 Phi(1) - 1 from high-precision quadrature of the Gaussian density
        mpmath.mp.dps = 30
        exact = float(mpmath.quad(lambda t: mpmath.exp(-t * t / 2), [-1, 1]) / mpmath.sqrt(2 * mpmath.pi))
        assert exact == pytest.approx(0.6826894921, abs=1e-10)
        assert theory.expected_sign(1.0, 1.0) == pytest.approx(exact, abs=1e-12)

    def test_limits(self):
        assert theory.expected_sign(0.0, 1.0) == 0.0
        assert theory.expected_sign(1e6, 1e-3) == 1.0

    def test_gamma_must_be_positive(self):
        with pytest.raises(ValueError):
            theory.expected_sign(1.0, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-20, 20), st.floats(0.01, 10), st.sampled_from(["gaussian", "laplacian", "cauchy"]))
    def test_odd_and_bounded(self, g, gamma, kind):
        v = theory.expected_sign(g, gamma, kind)
        assert v == pytest.approx(-theory.expected_sign(-g, gamma, kind), abs=1e-15)
        assert -1.0 <= v <= 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-10, 10), st.floats(1e-3, 5), st.floats(0.1, 10),
           st.sampled_from(["gaussian", "laplacian", "cauchy"]))
    def test_monotone(self, g, dg, gamma, kind):
        assert theory.expected_sign(g + dg, gamma, kind) >= theory.expected_sign(g, gamma, kind)

    @pytest.mark.parametrize("kind", ["laplacian", "cauchy"])
    def test_other_kinds_match_monte_carlo(self, kind):
        report = theory.verify_erf_identity(gs=(-1.0, 0.3, 2.0), gammas=(0.5, 2.0), draws=200_000,
                                            kind=kind)
        assert report.passed, report.to_dict()["failures"]


class TestAscent:
    def test_small_run_passes(self):
        report = theory.verify_ascent(trials=5, dim=10, gammas=(0.1, 1.0), draws=100_000)
        assert report.passed
        zero_rows = [r for r in report.rows if r.stats["zero_g"]]
        assert len(zero_rows) == 2 and all(r.passed for r in zero_rows)

    def test_huge_coordinate_gives_its_sign(self):
        rng = np.random.default_rng(0)
        g = np.array([-1e6, 0.0, 0.0])
        mean = theory._mean_sign(rng, g, 1e-3, "gaussian", 10_000)
        assert mean[0] == -1.0

    def test_needs_enough_draws(self):
        with pytest.raises(ValueError):
            theory.verify_ascent(draws=1000)

    def test_report_json_shape(self):
        report = theory.verify_ascent(trials=1, dim=3, gammas=(1.0,), draws=100_000)
        d = report.to_dict()
        assert d["passed"] and d["n_rows"] == 2 and d["failures"] == []


class TestConvergence:
    def test_quadratic_reaches_threshold(self):
        res = theory.verify_convergence(theory.quadratic_objective(10), 0.5, 0.01,
                                        theory.CONVERGENCE_BUDGET, eps_acc=0.1, seed=0)
        assert res.reached and res.iterations < theory.CONVERGENCE_BUDGET
        assert res.min_so_far[-1] <= 0.1
        assert np.all(np.diff(res.min_so_far) <= 0)

    def test_stationary_start(self):
        res = theory.verify_convergence(theory.quadratic_objective(4), 0.5, 0.01, 10,
                                        delta0=np.zeros(4))
        assert res.iterations == 0 and res.grad_l1[0] == 0.0

    def test_budget_exhaustion_reports_trajectory(self):
        res = theory.verify_convergence(theory.quadratic_objective(10), 0.5, 0.01, 2, eps_acc=1e-9)
        assert not res.reached and res.iterations is None and res.grad_l1.size == 3

    def test_quadratic_gradient_matches_finite_differences(self, rng):
        obj = theory.quadratic_objective(6)
        x = rng.normal(size=6)
        h = 1e-5
        fd = np.array([(obj.evaluate(x + h * e)[0] - obj.evaluate(x - h * e)[0]) / (2 * h)
                       for e in np.eye(6)])
        np.testing.assert_allclose(obj.evaluate(x)[1], fd, rtol=1e-6)

    def test_report_includes_scaling_fit(self):
        report = theory.convergence_report()
        assert report.passed
        scaling = report.rows[-1].stats
        assert scaling["loglog_slope"] <= 1.3
        assert "fixed_gamma_loglog_slope" in scaling


class TestBoundaryShrinkEquivalence:
    def test_twenty_steps(self):
        report = theory.verify_bs_equivalence(n_samples=10, steps=20)
        assert report.passed
        assert all(r.stats["max_deviation"] <= 1e-12 for r in report.rows)

    def test_zero_steps(self):
        model = nn_core.init_model([3, 4, 2], seed=0)
        dev, first = theory.bs_equivalence_deviation(model, np.ones((2, 3)), np.eye(2), 0)
        assert dev == 0.0 and first is None

    def test_reference_detects_a_changed_schedule(self):
        # feeding the reference a different step size must show up as a deviation
        model = nn_core.init_model([3, 8, 2], seed=1)
        x, y = np.array([0.3, -0.2, 0.5]), np.array([1.0, 0.0])
        ref = theory.input_space_sign_path(model, x, y, 5, lambda t: 0.2)
        other = theory.input_space_sign_path(model, x, y, 5, lambda t: 0.1 / t)
        assert np.abs(ref - other).max() > 1e-3


def test_reduced_suite_passes():
    reports = theory.run_suite(0, erf_draws=100_000, ascent_draws=100_000, ascent_trials=3,
                               ascent_dim=5, other_kinds_trials=2)
    assert all(r.passed for r in reports)
    assert {r.check for r in reports} >= {"convergence", "bs_equivalence", "ascent[gaussian]"}
