"""
Riemann-Liouville operators and the covariance operator K_H

Usage:
    pytest tests/test_fraccalc.py -v
"""

import numpy as np
import pytest

from fraccalc import (GridFunction, apply_chain, covariance_inverse, covariance_operator,
                      forward_chain, integral_matrix, inverse_chain, power_weight,
                      rl_derivative, rl_integral, simplify_chain, weighted)
from kernel import TimeGrid
from specfun import gamma_fn
from utils.errors import DomainError, InstabilityError, ValidationError


class TestGridFunction:
    def test_shape_checked(self, grid):
        with pytest.raises(ValidationError) as exc:
            GridFunction(grid, np.zeros(grid.N))
        assert exc.value.check == "GridFunction.shape"

    def test_non_finite_rejected(self, grid):
        samples = np.zeros(grid.N + 1)
        samples[3] = np.nan
        with pytest.raises(ValidationError):
            GridFunction(grid, samples)

    def test_from_callable(self, grid):
        f = GridFunction.from_callable(grid, np.sin)
        np.testing.assert_array_equal(f.samples, np.sin(grid.nodes))
        assert f.sup() == pytest.approx(np.sin(1.0))


class TestPowerLaws:
    @pytest.mark.parametrize("alpha", [0.25, 0.75])
    @pytest.mark.parametrize("beta,tol", [(0.0, 1e-6), (0.5, 1e-5), (1.0, 1e-6)])
    def test_integral_of_power(self, alpha, beta, tol):
        grid = TimeGrid(1.0, 2048)
        f = GridFunction(grid, grid.nodes ** beta)
        approx = rl_integral(alpha, f).samples[-1]
        exact = gamma_fn(beta + 1) / gamma_fn(alpha + beta + 1)
        assert abs(approx - exact) / exact < tol

    def test_integral_exact_on_linear_everywhere(self):
        grid = TimeGrid(2.0, 64)
        alpha = 0.4
        approx = rl_integral(alpha, GridFunction(grid, grid.nodes)).samples
        exact = grid.nodes ** (1 + alpha) / gamma_fn(2 + alpha)
        np.testing.assert_allclose(approx, exact, rtol=1e-10, atol=1e-14)

    @pytest.mark.parametrize("alpha", [0.2, 0.6])
    def test_derivative_of_linear(self, alpha):
        grid = TimeGrid(1.0, 128)
        d = rl_derivative(alpha, GridFunction(grid, grid.nodes)).samples
        exact = grid.nodes[1:] ** (1 - alpha) / gamma_fn(2 - alpha)
        np.testing.assert_allclose(d[1:], exact, rtol=1e-10)

    def test_derivative_of_constant(self):
        grid = TimeGrid(1.0, 128)
        alpha = 0.3
        d = rl_derivative(alpha, GridFunction(grid, np.ones(grid.N + 1))).samples
        exact = grid.nodes[1:] ** (-alpha) / gamma_fn(1 - alpha)
        np.testing.assert_allclose(d[1:], exact, rtol=1e-10)

    def test_order_zero_is_copy(self, grid):
        f = GridFunction(grid, grid.nodes ** 2)
        out = rl_derivative(0.0, f)
        np.testing.assert_array_equal(out.samples, f.samples)
        assert out.samples is not f.samples

    def test_orders_checked(self, grid):
        with pytest.raises(DomainError):
            integral_matrix(1.5, grid)
        with pytest.raises(DomainError):
            rl_derivative(1.0, GridFunction(grid, grid.nodes))

    def test_unstable_derivative_rejected(self):
        grid = TimeGrid(1.0, 64)
        noise = np.random.default_rng(7).standard_normal(grid.N + 1)
        with pytest.raises(InstabilityError) as exc:
            rl_derivative(0.5, GridFunction(grid, noise))
        assert exc.value.check == "rl_derivative.stability"


class TestWeights:
    def test_positive_power_vanishes_at_origin(self, grid):
        out = power_weight(np.ones(grid.N + 1), grid, 0.3)
        assert out[0] == 0.0
        assert out[-1] == pytest.approx(1.0)

    def test_negative_power_extrapolates(self, grid):
        samples = grid.nodes.copy()
        out = power_weight(samples, grid, -1.0)
        np.testing.assert_allclose(out, 1.0)

    def test_weighted_matrix_columns(self, grid):
        samples = np.stack([grid.nodes, 2 * grid.nodes], axis=1)
        out = weighted(GridFunction(grid, samples), 1.0).samples
        np.testing.assert_allclose(out[:, 1], 2 * out[:, 0])


class TestChains:
    def test_simplify_merges_and_drops(self):
        steps = [("w", 0.2), ("w", -0.2), ("I", 0.3), ("w", 0.1), ("w", 0.2)]
        assert simplify_chain(steps) == [("I", 0.3), ("w", pytest.approx(0.3))]

    def test_unknown_step(self, grid):
        with pytest.raises(ValidationError):
            apply_chain([("X", 1.0)], np.zeros(grid.N + 1), grid)

    def test_brownian_chains_are_identity(self):
        assert inverse_chain(0.5) == ([], 1.0)
        assert forward_chain(0.5) == ([], 1.0)

    def test_short_memory_inverse_needs_flag(self):
        with pytest.raises(ValidationError) as exc:
            inverse_chain(0.3)
        assert exc.value.check == "covariance_inverse.general_branch"
        steps, _ = inverse_chain(0.3, absolutely_continuous=True)
        assert [kind for kind, _ in steps] == ["w", "I", "w"]

    def test_long_memory_inverse_uses_derivative(self):
        steps, _ = inverse_chain(0.7)
        assert [kind for kind, _ in steps] == ["w", "D", "w"]


class TestCovarianceOperator:
    def test_brownian_operator_is_integral(self):
        grid = TimeGrid(1.0, 128)
        h = GridFunction(grid, np.cos(grid.nodes))
        np.testing.assert_allclose(covariance_operator(0.5, h).samples, np.sin(grid.nodes),
                                   atol=1e-5)

    def test_origin_required(self, grid):
        g = GridFunction(grid, grid.nodes + 1.0)
        with pytest.raises(ValidationError) as exc:
            covariance_inverse(0.7, g)
        assert exc.value.check == "covariance_inverse.origin"

    @pytest.mark.parametrize("H", [0.3, 0.7])
    @pytest.mark.parametrize("func", [np.ones_like, lambda t: np.exp(-t)])
    def test_round_trip(self, H, func):
        grid = TimeGrid(1.0, 1024)
        h = GridFunction.from_callable(grid, func)
        back = covariance_inverse(H, covariance_operator(H, h), absolutely_continuous=True)
        start = grid.N // 10
        error = np.max(np.abs(back.samples[start:] - h.samples[start:])) / h.sup()
        assert error < 2e-2

    @pytest.mark.parametrize("H", [0.3, 0.7])
    @pytest.mark.parametrize("func", [lambda t: np.exp(-t), lambda t: np.sin(2.0 * np.pi * t)],
                             ids=["exp", "sin"])
    def test_round_trip_converges(self, H, func):
        errors = []
        for N in (256, 512, 1024):
            grid = TimeGrid(1.0, N)
            h = GridFunction.from_callable(grid, func)
            back = covariance_inverse(H, covariance_operator(H, h), absolutely_continuous=True)
            start = grid.N // 10
            errors.append(np.max(np.abs(back.samples[start:] - h.samples[start:])) / h.sup())
        assert errors[1] <= errors[0] / 1.5
        assert errors[2] <= errors[1] / 1.5

    @pytest.mark.slow
    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_round_trip_fine_grid(self, H):
        grid = TimeGrid(1.0, 4096)
        h = GridFunction(grid, np.cos(grid.nodes))
        back = covariance_inverse(H, covariance_operator(H, h), absolutely_continuous=True)
        start = grid.N // 10
        assert np.max(np.abs(back.samples[start:] - h.samples[start:])) / h.sup() < 1e-2

    def test_brownian_round_trip(self):
        grid = TimeGrid(1.0, 512)
        h = GridFunction(grid, np.exp(-grid.nodes))
        back = covariance_inverse(0.5, covariance_operator(0.5, h))
        np.testing.assert_allclose(back.samples[1:-1], h.samples[1:-1], atol=1e-5)
