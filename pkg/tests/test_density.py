"""
Bridge, G_t checks, density estimators and the Gaussian envelope

Usage:
    pytest tests/test_density.py -v
"""

import math

import numpy as np
import pytest
from scipy import stats

import density
from density import (DensityEstimate, bridge_mean, estimate_density_girsanov,
                     estimate_density_kde, evaluation_points, fit_envelope, g_variance_check,
                     gaussian_density, girsanov_weights, integral_orlicz_check,
                     mixed_cell_weights, sigma2_discrete, simulate_bridge,
                     simulate_bridge_ensemble)
from girsanov import construct_psi_batch
from kernel import HurstPair, TimeGrid, sigma_squared
from noise import RngSpec
from sde import DriftSpec, MixedSdeSpec
from utils.errors import ValidationError


@pytest.fixture
def flat_spec():
    """f ≡ 1: the bridge is a Brownian bridge"""
    return MixedSdeSpec(d=1, x0=[0.0], a1=0.5, a2=0.5, A=[[1.0]], T=1.0,
                        hp=HurstPair(0.5, 0.5))


class TestBasics:
    def test_gaussian_density(self):
        points = np.array([[-1.0], [0.0], [2.0]])
        expected = stats.norm(loc=0.5, scale=2.0).pdf(points[:, 0])
        np.testing.assert_allclose(gaussian_density(points, np.array([0.5]), np.array([[4.0]])),
                                   expected)

    def test_discrete_sigma_close_to_continuum(self, zero_spec):
        grid = TimeGrid(1.0, 512)
        discrete = sigma2_discrete(zero_spec, grid)
        continuum = sigma_squared(zero_spec.hp, 1.0, 0.5, 1.0, 4096)
        assert discrete == pytest.approx(continuum, rel=2e-2)

    def test_flat_weights(self, flat_spec):
        np.testing.assert_allclose(mixed_cell_weights(flat_spec, TimeGrid(1.0, 16)), 1.0)

    def test_evaluation_points(self):
        assert evaluation_points(np.zeros(1), 1.0).shape == (13, 1)
        grid2 = evaluation_points(np.zeros(2), 2.0, per_axis=7)
        assert grid2.shape == (49, 2)
        assert np.max(np.abs(grid2)) == pytest.approx(6.0)


class TestBridge:
    def test_pinned_exactly(self, zero_spec):
        y = np.array([0.8])
        bridge = simulate_bridge_ensemble(zero_spec, y, 50, 3, 64)
        assert np.max(bridge.terminal_residual) < 1e-8 * (1 + abs(y[0]))

    def test_single_path_stream(self, zero_spec):
        one = simulate_bridge(zero_spec, [0.8], RngSpec(3, 7), 64)
        many = simulate_bridge_ensemble(zero_spec, [0.8], 10, 3, 64)
        np.testing.assert_allclose(one.dY[0], many.dY[7])

    def test_mean_satisfies_constraint(self, zero_spec):
        N = 128
        mean = bridge_mean(zero_spec, [0.8], N)
        fw = mixed_cell_weights(zero_spec, TimeGrid(1.0, N))
        assert mean[0, 0] == 0.0
        assert float(np.sum(fw * np.diff(mean[:, 0]))) == pytest.approx(0.8)

    def test_mean_monte_carlo(self, zero_spec):
        N, n = 128, 4000
        bridge = simulate_bridge_ensemble(zero_spec, [0.8], n, 21, N)
        expected = bridge_mean(zero_spec, [0.8], N)
        Y = bridge.Y[:, N // 2, 0]
        se = np.std(Y, ddof=1) / math.sqrt(n)
        assert abs(np.mean(Y) - expected[N // 2, 0]) < 4 * se

    def test_brownian_bridge_covariance(self, flat_spec):
        N, n = 512, 4000
        bridge = simulate_bridge_ensemble(flat_spec, [0.0], n, 5, N)
        np.testing.assert_allclose(bridge_mean(flat_spec, [0.3], N)[:, 0],
                                   0.3 * bridge.grid.nodes, atol=1e-12)
        mid = bridge.Y[:, N // 2, 0]
        se = np.std(mid ** 2, ddof=1) / math.sqrt(n)
        assert abs(np.mean(mid ** 2) - 0.25) < 4 * se

    def test_needs_three_cells(self, zero_spec):
        with pytest.raises(ValidationError):
            simulate_bridge_ensemble(zero_spec, [0.0], 2, 1, 2)


class TestGChecks:
    def test_variance_and_orlicz(self, zero_spec):
        report = g_variance_check(zero_spec, 0.25, 8000, 17, N=256)
        assert abs(report.variance - report.kappa2) < 4 * report.variance_se
        assert 1.75 <= report.orlicz_plugin <= 2.3

    def test_time_inside_horizon(self, zero_spec):
        with pytest.raises(ValidationError):
            g_variance_check(zero_spec, 1.0, 10, 1, N=64)

    def test_integral_orlicz(self, zero_spec):
        report = integral_orlicz_check(zero_spec, 2000, 8, N=256)
        assert report.radius > 0
        assert report.passed


class TestEstimators:
    def test_kde_recovers_gaussian(self, zero_spec):
        N = 64
        s2 = sigma2_discrete(zero_spec, TimeGrid(1.0, N))
        points = evaluation_points(zero_spec.x0, math.sqrt(s2), radius=1.5, per_axis=7)
        est = estimate_density_kde(zero_spec, points, 100000, 31, N=N, n_bootstrap=2)
        exact = gaussian_density(points, zero_spec.x0, est.Sigma)
        np.testing.assert_allclose(est.p_hat, exact, rtol=0.1)
        assert 0.97 <= est.mass <= 1.03
        assert est.sigma2_discrete == pytest.approx(s2)

    def test_girsanov_without_drift_is_gaussian(self, zero_spec):
        points = np.array([[-0.5], [0.0], [1.0]])
        est = estimate_density_girsanov(zero_spec, points, 20, 5, N=32)
        np.testing.assert_array_equal(est.p_hat,
                                      gaussian_density(points, zero_spec.x0, est.Sigma))
        np.testing.assert_array_equal(est.std_err, 0.0)

    def test_zero_drift_still_builds_psi(self, zero_spec, monkeypatch):
        calls = []

        def counting(*args, **kwargs):
            calls.append(args[4].shape)
            return construct_psi_batch(*args, **kwargs)

        monkeypatch.setattr(density, "construct_psi_batch", counting)
        bridge = simulate_bridge_ensemble(zero_spec, [0.4], 6, 3, 32)
        weights = girsanov_weights(zero_spec, bridge)
        assert calls == [(6, 33, 1)]
        np.testing.assert_array_equal(weights, 1.0)

    @pytest.mark.slow
    @pytest.mark.parametrize("h1,h2", [(0.3, 0.4), (0.6, 0.8)], ids=["short", "long"])
    def test_estimators_agree_under_drift(self, h1, h2):
        N = 32
        drift = DriftSpec(family="bounded_sin", amplitude=(0.5,), frequency=(1.0,))
        spec = MixedSdeSpec(d=1, x0=np.zeros(1), a1=1.0, a2=0.5, A=np.eye(1), T=1.0,
                            hp=HurstPair(h1, h2), drift=drift)
        s2 = sigma2_discrete(spec, TimeGrid(1.0, N))
        points = evaluation_points(spec.x0, math.sqrt(s2), radius=2.0, per_axis=9)
        kde = estimate_density_kde(spec, points, 50000, 41, N=N, bandwidth=0.05, n_bootstrap=20)
        gir = estimate_density_girsanov(spec, points, 2000, 43, N=N)
        combined = np.sqrt(kde.std_err ** 2 + gir.std_err ** 2)
        assert len(points) == 9
        assert np.all(np.abs(kde.p_hat - gir.p_hat) <= 3 * combined)

    @pytest.mark.slow
    def test_upper_constant_stable_across_horizons(self):
        drift = DriftSpec(family="bounded_sin", amplitude=(0.5,), frequency=(1.0,))
        N = 32
        constants = []
        for T0 in (0.5, 1.0):
            spec = MixedSdeSpec(d=1, x0=np.zeros(1), a1=1.0, a2=0.5, A=np.eye(1), T=T0,
                                hp=HurstPair(0.3, 0.4), drift=drift)
            s2 = sigma2_discrete(spec, TimeGrid(T0, N))
            points = evaluation_points(spec.x0, math.sqrt(s2))
            fit = fit_envelope(estimate_density_girsanov(spec, points, 1000, 47, N=N))
            constants.append(fit.C1)
        assert constants[0] == pytest.approx(constants[1], rel=0.2)

    def test_dimension_limit(self, mixed_pair):
        spec = MixedSdeSpec(d=4, x0=np.zeros(4), a1=1.0, a2=0.5, A=np.eye(4), T=1.0,
                            hp=mixed_pair)
        with pytest.raises(ValidationError) as exc:
            estimate_density_kde(spec, np.zeros((1, 4)), 10, 1, N=8)
        assert exc.value.check == "density.d"


def _estimate(p_of_r, sigma2=0.7, std_err=0.0):
    points = evaluation_points(np.zeros(1), math.sqrt(sigma2))
    r = points[:, 0] / math.sqrt(sigma2)
    p = p_of_r(r)
    return DensityEstimate(method="exact", T0=1.0, x0=np.zeros(1), eval_points=points, p_hat=p,
                           std_err=np.full_like(p, std_err), sigma2=sigma2,
                           sigma2_discrete=sigma2, Sigma=np.array([[sigma2]]))


def _exact_estimate(sigma2=0.7):
    return _estimate(lambda r: np.exp(-0.5 * r ** 2) / math.sqrt(2 * math.pi * sigma2), sigma2)


class TestEnvelope:
    def test_gaussian_constants(self):
        fit = fit_envelope(_exact_estimate())
        assert fit.C2 == pytest.approx(0.5, rel=1e-8)
        assert fit.C2p == pytest.approx(0.5, rel=1e-8)
        assert fit.C1 == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-8)
        assert fit.C1p == pytest.approx(fit.C1, rel=1e-8)
        assert fit.violation_fraction == 0.0
        assert fit.n_points == 13
        assert fit.sigma2 == 0.7

    def test_json_keys(self):
        payload = fit_envelope(_exact_estimate()).to_json()
        assert set(payload) == {"C1", "C2", "C1p", "C2p", "violation_fraction", "sigma2"}

    def test_lower_envelope_has_its_own_slope(self):
        skewed = _estimate(lambda r: np.exp(-np.where(r > 0, 0.5, 0.8) * r ** 2))
        fit = fit_envelope(skewed)
        assert fit.C2 == pytest.approx(0.5, rel=1e-6)
        assert fit.C2p == pytest.approx(0.8, rel=1e-6)
        assert fit.violation_fraction == 0.0

    def test_non_gaussian_shape_violates(self):
        fit = fit_envelope(_estimate(lambda r: np.exp(-3.0 * np.abs(r))))
        assert fit.violation_fraction > 0.01

    def test_standard_errors_absorb_noise(self):
        bumpy = _estimate(lambda r: np.exp(-3.0 * np.abs(r)), std_err=10.0)
        assert fit_envelope(bumpy).violation_fraction == 0.0

    def test_too_few_points(self):
        est = _exact_estimate()
        est.p_hat[3:] = 0.0
        with pytest.raises(ValidationError) as exc:
            fit_envelope(est)
        assert exc.value.check == "fit_envelope.points"
