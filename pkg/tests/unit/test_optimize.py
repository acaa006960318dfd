"""
Unit tests for the damped Gauss-Newton driver.
"""

import numpy as np
import pytest

from core.errors import StrataInversionError
from core.optimize import GaussNewton, JacobianUnavailable, misfit_of
from observability.metrics import registry

A = np.array([[2.0, 1.0], [1.0, 3.0], [0.5, -1.0]])
B = np.array([1.0, 2.0, 0.5])


def linear_residual(p):
    return A @ p - B


def rosenbrock_residual(p):
    return np.array([10.0 * (p[1] - p[0] ** 2), 1.0 - p[0]])


class TestGaussNewton:
    def test_linear_least_squares(self):
        gn = GaussNewton(linear_residual, fd_steps=[1e-6, 1e-6], scheme="central")
        result = gn.run(np.zeros(2))
        expected, *_ = np.linalg.lstsq(A, B, rcond=None)
        assert np.allclose(result.params, expected, atol=1e-8)
        assert result.history[0] > result.misfit
        assert result.jacobian_rank == 2

    def test_rosenbrock_converges(self):
        gn = GaussNewton(rosenbrock_residual, fd_steps=[1e-7, 1e-7], scheme="central", max_iterations=100)
        result = gn.run(np.array([-1.2, 1.0]))
        assert np.allclose(result.params, [1.0, 1.0], atol=1e-6)
        assert result.reason in ("converged", "small_step", "stagnated")
        assert all(b < a for a, b in zip(result.history, result.history[1:]))
        print(f"✅ Rosenbrock solved in {result.iterations} iterations ({result.reason})")

    def test_jacobian_matches_directional_derivatives(self):
        def residual(p):
            return np.array([np.sin(p[0]) * p[1], np.exp(0.3 * p[2]) - p[0] * p[2], p[1] ** 2])

        gn = GaussNewton(residual, fd_steps=[1e-5] * 3, scheme="central")
        point = np.array([0.4, -0.7, 1.1])
        jac = gn.jacobian(point)
        rng = np.random.default_rng(9)
        for _ in range(5):
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            t = 1e-5
            directional = (residual(point + t * d) - residual(point - t * d)) / (2 * t)
            assert np.linalg.norm(jac @ d - directional) <= 1e-4 * np.linalg.norm(directional)

    def test_projection_is_applied(self):
        gn = GaussNewton(linear_residual, fd_steps=[1e-6, 1e-6], project=lambda p: np.maximum(p, 0.45))
        result = gn.run(np.ones(2))
        assert np.all(result.params >= 0.45)
        assert result.params[1] == pytest.approx(0.45)

    def test_flat_residual_fails_line_search(self):
        gn = GaussNewton(lambda p: np.ones(3), fd_steps=[1e-3])
        result = gn.run(np.zeros(1))
        assert result.reason == "line_search_failed"
        assert result.accepted_steps == 0

    def test_infeasible_start(self):
        gn = GaussNewton(lambda p: None, fd_steps=[1e-3])
        with pytest.raises(JacobianUnavailable) as exc:
            gn.run(np.zeros(1))
        assert isinstance(exc.value, StrataInversionError)
        assert exc.value.exit_code == 5

    def test_forward_difference_falls_back_to_backward(self):
        def residual(p):
            return None if p[0] > 1.0 else np.array([p[0] ** 2])

        gn = GaussNewton(residual, fd_steps=[1e-6])
        jac = gn.jacobian(np.array([1.0]))
        assert jac[0, 0] == pytest.approx(2.0, rel=1e-5)

    def test_threaded_jacobian_matches_serial(self):
        serial = GaussNewton(rosenbrock_residual, fd_steps=[1e-6, 1e-6]).jacobian(np.array([0.3, 0.4]))
        threaded = GaussNewton(rosenbrock_residual, fd_steps=[1e-6, 1e-6], threads=2).jacobian(np.array([0.3, 0.4]))
        assert np.array_equal(serial, threaded)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            GaussNewton(linear_residual, fd_steps=[1e-6, 1e-6], scheme="complex")

    def test_misfit_of_infeasible(self):
        assert misfit_of(None) == float("inf")
        assert misfit_of(np.array([np.nan])) == float("inf")
        assert misfit_of(np.array([3.0, 4.0])) == 25.0

    def test_accepted_steps_counted_under_stage_label(self):
        before = registry.get_sample_value("strata_gauss_newton_iterations_total", {"stage": "strip"}) or 0.0
        result = GaussNewton(linear_residual, fd_steps=[1e-6, 1e-6], stage="strip").run(np.zeros(2))
        after = registry.get_sample_value("strata_gauss_newton_iterations_total", {"stage": "strip"})
        assert after == before + result.accepted_steps
