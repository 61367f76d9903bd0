"""
Volterra kernel, kernel tables, σ² and κ²

Usage:
    pytest tests/test_kernel.py -v
"""

import math

import numpy as np
import pytest

import kernel
from fraccalc import GridFunction, covariance_operator
from kernel import (HurstPair, TimeGrid, covariance_reconstruction, fbm_covariance,
                    kappa_profile, kappa_scaling_check, kappa_squared, kappa_squared_direct,
                    kernel_bound_diagnostic, kernel_eval, kernel_normalisation, kernel_table,
                    scaling_exponents, sigma_squared, singular_multipliers)
from specfun import beta_fn, gamma_fn
from utils.errors import DomainError, ValidationError


class TestTypes:
    def test_regimes(self):
        assert HurstPair(0.2, 0.4).regime == "both-short"
        assert HurstPair(0.3, 0.7).regime == "mixed"
        assert HurstPair(0.5, 0.7).regime == "mixed"
        assert HurstPair(0.6, 0.8).regime == "both-long"

    def test_min_max(self):
        hp = HurstPair(0.7, 0.3)
        assert hp.H == 0.3
        assert hp.H_prime == 0.7

    @pytest.mark.parametrize("h1", [0.0, 1.0, -0.2])
    def test_invalid_hurst(self, h1):
        with pytest.raises(ValidationError):
            HurstPair(h1, 0.5)

    def test_grid(self):
        grid = TimeGrid(2.0, 8)
        assert grid.dt == 0.25
        assert grid.nodes[-1] == 2.0
        assert grid.index_of(0.5) == 2

    def test_grid_off_node(self):
        with pytest.raises(DomainError) as exc:
            TimeGrid(1.0, 8).index_of(0.3)
        assert exc.value.check == "TimeGrid.node"

    def test_grid_too_small(self):
        with pytest.raises(ValidationError):
            TimeGrid(1.0, 1)

    def test_set_workers(self):
        with pytest.raises(ValidationError):
            kernel.set_workers(0)


class TestKernel:
    def test_normalisation_at_half(self):
        assert kernel_normalisation(0.5) == pytest.approx(1.0, abs=1e-14)

    def test_brownian_kernel_is_one(self):
        np.testing.assert_array_equal(kernel_eval(0.5, 1.0, np.array([0.1, 0.5, 0.9])), 1.0)

    def test_domain(self):
        with pytest.raises(DomainError) as exc:
            kernel_eval(0.3, 1.0, 1.0)
        assert exc.value.check == "kernel_eval.domain"

    def test_short_memory_blows_up_on_diagonal(self):
        near = kernel_eval(0.3, 1.0, 1.0 - 1e-6)
        far = kernel_eval(0.3, 1.0, 0.5)
        assert near > 5 * far

    def test_homogeneity(self):
        H, c = 0.7, 3.0
        assert kernel_eval(H, c * 0.8, c * 0.3) == pytest.approx(
            c ** (H - 0.5) * kernel_eval(H, 0.8, 0.3), rel=1e-12)

    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_variance_reconstruction(self, H):
        recon = covariance_reconstruction(H, [0.5, 1.0], 4096)
        exact = fbm_covariance(H, np.array([[0.5], [1.0]]), np.array([[0.5, 1.0]]))
        np.testing.assert_allclose(recon, exact, rtol=1e-2)

    def test_brownian_reconstruction_exact(self):
        recon = covariance_reconstruction(0.5, [0.25, 1.0], 64)
        np.testing.assert_allclose(recon, [[0.25, 0.25], [0.25, 1.0]], rtol=1e-12)

    def test_constant_image_closed_form(self):
        # K_H 1 = c_H Γ(3/2 - H) / (H + 1/2) t^(H + 1/2)
        H = 0.7
        grid = TimeGrid(1.0, 1024)
        image = covariance_operator(H, GridFunction(grid, np.ones(grid.N + 1)))
        t = grid.nodes[1:]
        exact = kernel_normalisation(H) * gamma_fn(1.5 - H) / (H + 0.5) * t ** (H + 0.5)
        np.testing.assert_allclose(image.samples[grid.N // 10:], exact[grid.N // 10 - 1:],
                                   rtol=2e-3)


class TestTables:
    def test_multipliers(self):
        np.testing.assert_array_equal(singular_multipliers(3, 0.0, 0.0), [1.0, 1.0, 1.0])
        mult = singular_multipliers(4, -0.2, 0.2)
        assert mult[0] == pytest.approx(2 ** -0.2 / 0.8)
        assert mult[-1] == pytest.approx(2 ** 0.2 / 1.2)
        single = singular_multipliers(1, -0.2, 0.3)
        assert single[0] == pytest.approx(2 ** 0.1 * beta_fn(0.8, 1.3))

    def test_brownian_table(self):
        grid = TimeGrid(1.0, 16)
        table = kernel_table(0.5, grid)
        np.testing.assert_allclose(table.averages[grid.N], 1.0, rtol=1e-14)
        assert np.all(table.weights[0] == 0.0)

    def test_table_is_read_only(self):
        table = kernel_table(0.3, TimeGrid(1.0, 16))
        assert not table.values.flags.writeable
        with pytest.raises(ValueError):
            table.weights[1, 0] = 0.0

    def test_rows_lower_triangular(self):
        grid = TimeGrid(1.0, 32)
        table = kernel_table(0.7, grid)
        assert np.all(np.triu(table.weights[:grid.N], k=0) == 0.0)
        assert table.row(5).shape == (5,)

    def test_threaded_build_matches(self):
        grid = TimeGrid(1.0, 200)
        kernel.set_workers(4)
        try:
            threaded = kernel_table(0.4, grid).weights.copy()
        finally:
            kernel.set_workers(1)
        kernel_table.cache_clear()
        serial = kernel_table(0.4, grid).weights
        np.testing.assert_array_equal(threaded, serial)

    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_bound_diagnostic(self, H):
        report = kernel_bound_diagnostic(H, TimeGrid(1.0, 128))
        assert math.isfinite(report.sup_ratio) and report.sup_ratio > 0
        assert report.inf_ratio > 0

    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_bound_ratio_stable_under_refinement(self, H):
        ratios = [kernel_bound_diagnostic(H, TimeGrid(1.0, N)).sup_ratio for N in (64, 256, 1024)]
        assert max(ratios) <= 1.25 * min(ratios)

    def test_brownian_bounds_are_exact(self):
        report = kernel_bound_diagnostic(0.5, TimeGrid(1.0, 32))
        assert report.sup_ratio == pytest.approx(1.0)
        assert report.inf_ratio == pytest.approx(1.0)


class TestSigmaKappa:
    def test_equal_hurst_limit(self):
        hp = HurstPair(0.3, 0.3)
        value = sigma_squared(hp, 1.0, 0.5, 2.0, 4096)
        assert value == pytest.approx(1.5 ** 2 * 2.0 ** 0.6, rel=1e-2)

    def test_sigma_domain(self):
        with pytest.raises(DomainError):
            sigma_squared(HurstPair(0.3, 0.7), 1.0, 0.5, 0.0, 64)

    def test_closed_reduction_matches_definition(self):
        hp = HurstPair(0.3, 0.7)
        closed = kappa_squared(hp, 1.0, 0.5, 1.0, 0.5, N=2048)
        direct = kappa_squared_direct(hp, 1.0, 0.5, 1.0, 0.5, N=2048)
        assert closed == pytest.approx(direct, rel=1e-3)

    def test_kappa_below_upper_bound(self):
        profile = kappa_profile(HurstPair(0.4, 0.6), 1.0, 0.5, 1.0, 512)
        inner = slice(1, profile.grid.N)
        assert np.all(profile.kappa2[inner] <= profile.upper_bound[inner])
        assert np.all(profile.kappa2[inner] >= 0.0)

    def test_kappa_domain(self):
        with pytest.raises(DomainError):
            kappa_squared(HurstPair(0.3, 0.7), 1.0, 0.5, 1.0, 1.0, N=64)

    def test_scaling_exact_for_equal_indices(self):
        report = kappa_scaling_check(HurstPair(0.4, 0.4), 1.0, 0.5, [0.5, 1.0, 2.0], N=256)
        assert report.slope == pytest.approx(0.6, abs=1e-6)
        assert report.passed

    def test_scaling_needs_two_horizons(self):
        with pytest.raises(ValidationError):
            kappa_scaling_check(HurstPair(0.3, 0.7), 1.0, 0.5, [1.0, 1.0])

    def test_scaling_exponents(self):
        exps = scaling_exponents(HurstPair(0.3, 0.7))
        assert exps["regime"] == "mixed"
        assert exps["bounds"] == pytest.approx([0.3, 0.5])
        assert exps["self_similar"] == pytest.approx(0.7)
