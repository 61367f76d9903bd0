#!/usr/bin/env python3
"""
Density of X_T0 and the conditioned bridge behind its Girsanov representation.

With f(t) = a1 K_H1(T0, t) + a2 K_H2(T0, t) and U = ∫_0^T0 f dW ~ N(0, σ²),
the law of W given U = y is the bridge

    dY = (f(t) y / σ² - G_t) dt + dW,   G_t = f(t) ∫_0^t f(u) / z(u) dW_u,
    z(u) = ∫_u^T0 f²

and the density of X_T0 is

    p(x) = φ_Σ(x - x0) E[exp(∫ ψ dY - ½ ∫ |ψ|² dt)],   y = A^{-1}(x - x0)

where ψ is built along the path driven by Y and Σ = A σ² A^T.

Everything is discretised with the cell-averaged kernel weights of the
noise module, so σ² and the bridge constraint are exact for the scheme.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from girsanov import DEFAULT_TOL, construct_psi_batch
from kernel import TimeGrid, kappa_profile, kappa_weighted_integral, kernel_table, mixed_kernel, sigma_squared
from noise import RngSpec, brownian_increments, fbm_from_increments, sample_noise_ensemble
from sde import MixedSdeSpec, euler_solve_ensemble
from utils.console import progress, warn
from utils.errors import NumericalError, ValidationError

# bootstrap resamples draw from streams above this offset
_BOOTSTRAP_STREAM = 1 << 40
_BRIDGE_STREAM = 1 << 41
VARIANCE_WARNING = 0.30
# envelope width (in log p) beyond the fitted curves before a point counts as a violation
ENVELOPE_MARGIN = 0.05
_SPLIT_TOL = 1e-9


def _horizon_grid(spec: MixedSdeSpec, N: int) -> TimeGrid:
    if N < 3:
        raise ValidationError(f"N must be >= 3, got {N}", check="density.N")
    return TimeGrid(spec.T, N)


def mixed_cell_weights(spec: MixedSdeSpec, grid: TimeGrid) -> np.ndarray:
    """Cell averages of f(T0, .) on the grid, shape (N,)"""
    w1 = kernel_table(spec.hp.h1, grid).averages[grid.N]
    w2 = kernel_table(spec.hp.h2, grid).averages[grid.N]
    return spec.a1 * w1 + spec.a2 * w2


def sigma2_discrete(spec: MixedSdeSpec, grid: TimeGrid) -> float:
    """Exact variance of the discretised U = Σ f_j dW_j"""
    fw = mixed_cell_weights(spec, grid)
    return float(np.sum(fw ** 2) * grid.dt)


def gaussian_density(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Analytic N(mean, cov) density at each row of points"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return np.atleast_1d(stats.multivariate_normal(mean=mean, cov=cov).pdf(points))


@dataclass
class BridgeEnsemble:
    grid: TimeGrid
    y: np.ndarray                  # conditioning value (d,)
    dY: np.ndarray                 # (n, N, d)
    cell_weights: np.ndarray       # f cell averages (N,)
    terminal_residual: np.ndarray  # |Σ f_j dY_j - y| per path

    @property
    def Y(self) -> np.ndarray:
        zeros = np.zeros(self.dY.shape[:1] + (1,) + self.dY.shape[2:])
        return np.concatenate([zeros, np.cumsum(self.dY, axis=1)], axis=1)


def _bridge_increments(fw: np.ndarray, grid: TimeGrid, y: np.ndarray,
                       dW: np.ndarray) -> np.ndarray:
    """
    Euler steps of the bridge, then an exact Gaussian pin over the last two
    cells so that Σ f_j dY_j = y holds to rounding
    """
    dt, N = grid.dt, grid.N
    cells = fw ** 2 * dt
    z = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
    z_mid = z[1:] + 0.5 * cells
    if fw[N - 1] == 0 or z[N - 2] <= 0:
        raise NumericalError("kernel weight vanishes in the last cells", check="bridge.pin")

    dY = np.empty_like(dW)
    running = np.zeros(dW.shape[:1] + dW.shape[2:])
    constraint = np.zeros_like(running)
    for k in range(N - 2):
        dY[:, k] = (fw[k] * y / z[0] - fw[k] * running) * dt + dW[:, k]
        running += fw[k] * dW[:, k] / z_mid[k]
        constraint += fw[k] * dY[:, k]

    k = N - 2
    remaining = y - constraint
    mean = fw[k] * dt * remaining / z[k]
    var = max(dt * (1.0 - fw[k] ** 2 * dt / z[k]), 0.0)
    dY[:, k] = mean + math.sqrt(var / dt) * dW[:, k]
    constraint += fw[k] * dY[:, k]
    dY[:, N - 1] = (y - constraint) / fw[N - 1]
    return dY


def simulate_bridge_ensemble(spec: MixedSdeSpec, y: Sequence[float], n_paths: int,
                             master_seed: int, N: int, first_stream: int = 0) -> BridgeEnsemble:
    """
    n_paths bridge paths conditioned on ∫_0^T0 f dY = y, T0 = spec.T

    Path i uses stream first_stream + i.
    """
    grid = _horizon_grid(spec, N)
    y = np.asarray(y, dtype=float).reshape(spec.d)
    fw = mixed_cell_weights(spec, grid)
    dW = np.stack([brownian_increments(RngSpec(master_seed, first_stream + i), grid, spec.d)
                   for i in range(n_paths)])
    dY = _bridge_increments(fw, grid, y, dW)
    residual = np.linalg.norm(np.einsum("j,njd->nd", fw, dY) - y, axis=1)
    return BridgeEnsemble(grid, y, dY, fw, residual)


def simulate_bridge(spec: MixedSdeSpec, y: Sequence[float], rng: RngSpec, N: int) -> BridgeEnsemble:
    """One bridge path on the stream of rng"""
    return simulate_bridge_ensemble(spec, y, 1, rng.master_seed, N, first_stream=rng.stream_id)


def bridge_mean(spec: MixedSdeSpec, y: Sequence[float], N: int) -> np.ndarray:
    """E[Y_{t_k}] = y Σ_{j<k} f_j Δ / σ² at every node, (N+1, d)"""
    grid = _horizon_grid(spec, N)
    fw = mixed_cell_weights(spec, grid)
    z0 = float(np.sum(fw ** 2) * grid.dt)
    share = np.concatenate([[0.0], np.cumsum(fw * grid.dt)]) / z0
    return share[:, None] * np.asarray(y, dtype=float).reshape(1, spec.d)


@dataclass
class GVarianceReport:
    t: float
    kappa2: float
    variance: float
    variance_se: float
    orlicz_raw_mean: float
    orlicz_raw_se: float
    orlicz_plugin: float
    passed_variance: bool
    passed_orlicz: bool


def _g_paths(spec: MixedSdeSpec, grid: TimeGrid, n_paths: int, master_seed: int,
             stream_offset: int = 0) -> np.ndarray:
    """G_{t_k} for k = 0..N-1 on independent Brownian paths, (n, N, d)"""
    fw = mixed_cell_weights(spec, grid)
    cells = fw ** 2 * grid.dt
    z = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
    z_mid = z[1:] + 0.5 * cells
    dW = np.stack([brownian_increments(RngSpec(master_seed, stream_offset + i), grid, spec.d)
                   for i in range(n_paths)])
    running = np.cumsum((fw / z_mid)[None, :, None] * dW, axis=1)
    running = np.concatenate([np.zeros_like(running[:, :1]), running[:, :-1]], axis=1)
    f_nodes = np.zeros(grid.N)
    f_nodes[1:] = mixed_kernel(spec.hp, spec.a1, spec.a2, grid.T, grid.nodes[1:grid.N])
    return f_nodes[None, :, None] * running


def g_variance_check(spec: MixedSdeSpec, t: float, n_paths: int, master_seed: int,
                     N: int = 1024) -> GVarianceReport:
    """
    Var(G_t) against κ_t², and the Orlicz identity E exp(3 G²/(8 κ²)) = 2

    The raw Orlicz mean has infinite variance; pass/fail uses the Gaussian
    plug-in (1 - 3 s²/(4 κ²))^(-1/2) with s² the sample variance.
    """
    grid = _horizon_grid(spec, N)
    k = grid.index_of(t)
    if not 0 < k < N:
        raise ValidationError(f"need 0 < t < T0, got {t}", check="g_variance.t")
    kappa2 = float(kappa_profile(spec.hp, spec.a1, spec.a2, grid.T, N).kappa2[k])
    G = _g_paths(spec, grid, n_paths, master_seed)[:, k, :].reshape(-1)

    variance = float(np.mean(G ** 2))
    variance_se = float(np.std(G ** 2, ddof=1) / math.sqrt(G.size))
    with np.errstate(over="ignore"):
        orlicz = np.exp(3.0 * G ** 2 / (8.0 * kappa2))
    raw_mean = float(np.mean(orlicz))
    raw_se = float(np.std(orlicz, ddof=1) / math.sqrt(G.size))
    ratio = 1.0 - 3.0 * float(np.var(G, ddof=1)) / (4.0 * kappa2)
    plugin = ratio ** -0.5 if ratio > 0 else math.inf
    return GVarianceReport(
        t=t, kappa2=kappa2, variance=variance, variance_se=variance_se,
        orlicz_raw_mean=raw_mean, orlicz_raw_se=raw_se, orlicz_plugin=plugin,
        passed_variance=abs(variance - kappa2) <= 3.0 * variance_se,
        passed_orlicz=1.9 <= plugin <= 2.1,
    )


@dataclass
class IntegralOrliczReport:
    radius: float
    mean: float
    std_err: float
    passed: bool


def integral_orlicz_check(spec: MixedSdeSpec, n_paths: int, master_seed: int,
                          N: int = 1024) -> IntegralOrliczReport:
    """
    I = ∫_0^T0 t^(1/2-H) |G_t| dt satisfies E exp(I²/R²) <= 2 for
    R = (8/3)^(1/2) ∫_0^T0 t^(1/2-H) κ_t dt
    """
    grid = _horizon_grid(spec, N)
    H = spec.hp.H
    profile = kappa_profile(spec.hp, spec.a1, spec.a2, grid.T, N)
    radius = math.sqrt(8.0 / 3.0) * kappa_weighted_integral(profile, H)

    G = np.linalg.norm(_g_paths(spec, grid, n_paths, master_seed), axis=2)   # (n, N)
    weights = np.zeros(N)
    weights[1:] = grid.nodes[1:N] ** (0.5 - H)
    integrand = weights[None, :] * G
    # same rule as the κ integral: trapezoid below t_{N-1}, last cell ~ (T0-t)^(-1/2)
    I = (np.sum(0.5 * (integrand[:, :-1] + integrand[:, 1:]), axis=1) * grid.dt
         + 2.0 * grid.dt * integrand[:, -1])
    with np.errstate(over="ignore"):
        values = np.exp(I ** 2 / radius ** 2)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n_paths))
    return IntegralOrliczReport(radius, mean, se, mean <= 2.0 + 3.0 * se)


@dataclass
class DensityEstimate:
    """Density estimates of X_T0 at a set of points"""

    method: str
    T0: float
    x0: np.ndarray
    eval_points: np.ndarray      # (m, d)
    p_hat: np.ndarray
    std_err: np.ndarray
    sigma2: float                # continuum ∫ f²
    sigma2_discrete: float
    Sigma: np.ndarray            # A σ²_discrete A^T
    bandwidth: Optional[float] = None
    mass: Optional[float] = None
    details: dict = field(default_factory=dict)


def _check_points(spec: MixedSdeSpec, eval_points) -> np.ndarray:
    if spec.d > 3:
        raise ValidationError("density estimation supports d <= 3", check="density.d")
    points = np.asarray(eval_points, dtype=float).reshape(-1, spec.d)
    if points.shape[0] == 0:
        raise ValidationError("no evaluation points", check="density.points")
    return points


def terminal_samples(spec: MixedSdeSpec, n_paths: int, master_seed: int, N: int,
                     workers: int = 1, chunk_size: int = 4096, verbose: bool = False) -> np.ndarray:
    """X_T0 on n_paths Euler paths, (n, d); paths are solved chunk by chunk"""
    grid = _horizon_grid(spec, N)
    parts: List[np.ndarray] = []
    starts = range(0, n_paths, chunk_size)
    for start in progress(starts, desc="X_T0", total=len(starts), verbose=verbose):
        count = min(chunk_size, n_paths - start)
        noise = sample_noise_ensemble(spec.hp, grid, spec.d, count, master_seed,
                                      first_stream=start, workers=workers)
        parts.append(euler_solve_ensemble(spec, noise).X[:, -1, :])
    return np.concatenate(parts)


def kde_mass(kde: stats.gaussian_kde, center: np.ndarray, half_width: np.ndarray) -> float:
    """KDE mass of the box center ± half_width"""
    low = np.asarray(center, dtype=float) - half_width
    high = np.asarray(center, dtype=float) + half_width
    if kde.d == 1:
        return float(kde.integrate_box_1d(low[0], high[0]))
    return float(kde.integrate_box(low, high))


def estimate_density_kde(spec: MixedSdeSpec, eval_points, n_paths: int, master_seed: int,
                         N: int = 256, bandwidth: Union[str, float] = "scott",
                         n_bootstrap: int = 20,
                         workers: int = 1, verbose: bool = False) -> DensityEstimate:
    """
    Gaussian KDE of forward-simulated X_T0 with bootstrap standard errors

    Bootstrap fits reuse the bandwidth factor of the full fit.
    """
    points = _check_points(spec, eval_points)
    grid = _horizon_grid(spec, N)
    samples = terminal_samples(spec, n_paths, master_seed, N, workers=workers, verbose=verbose)

    try:
        kde = stats.gaussian_kde(samples.T, bw_method=bandwidth)
        p_hat = kde(points.T)
        boot = []
        for b in range(n_bootstrap):
            idx = RngSpec(master_seed, _BOOTSTRAP_STREAM + b).generator().integers(0, n_paths, n_paths)
            boot.append(stats.gaussian_kde(samples[idx].T, bw_method=kde.factor)(points.T))
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"KDE covariance is singular: {e}", check="kde.bandwidth") from e

    s2_disc = sigma2_discrete(spec, grid)
    Sigma = spec.A @ spec.A.T * s2_disc
    std_err = np.std(np.array(boot), axis=0, ddof=1) if n_bootstrap > 1 else np.zeros_like(p_hat)
    mass = kde_mass(kde, samples.mean(axis=0), 5.0 * np.sqrt(np.diag(Sigma)))
    return DensityEstimate(
        method="kde", T0=spec.T, x0=spec.x0, eval_points=points, p_hat=p_hat, std_err=std_err,
        sigma2=sigma_squared(spec.hp, spec.a1, spec.a2, spec.T, N), sigma2_discrete=s2_disc,
        Sigma=Sigma, bandwidth=float(kde.factor), mass=mass,
    )


def girsanov_weights(spec: MixedSdeSpec, bridge: BridgeEnsemble,
                     tol: float = DEFAULT_TOL) -> np.ndarray:
    """exp(Σ <ψ_k, ΔY_k> - ½ Σ |ψ_k|² Δ) for each bridge path"""
    grid = bridge.grid
    B1 = fbm_from_increments(spec.hp.h1, grid, bridge.dY)
    B2 = fbm_from_increments(spec.hp.h2, grid, bridge.dY)
    X = spec.x0 + spec.noise_term(B1, B2)
    h = spec.drift.evaluate(grid.nodes[None, :], X)
    psi = construct_psi_batch(spec.hp, spec.a1, spec.a2, spec.A, h, grid, tol)[:, :-1, :]
    log_w = np.sum(psi * bridge.dY, axis=(1, 2)) - 0.5 * grid.dt * np.sum(psi ** 2, axis=(1, 2))
    return np.exp(log_w)


def estimate_density_girsanov(spec: MixedSdeSpec, eval_points, n_paths: int, master_seed: int,
                              N: int = 256, tol: float = DEFAULT_TOL, chunk_size: int = 2048,
                              verbose: bool = False) -> DensityEstimate:
    """
    p(x) = φ_Σ(x - x0) Ψ̂(x), Ψ̂ the bridge average of the Girsanov weight

    Each point uses its own bridge ensemble conditioned on A^{-1}(x - x0).
    """
    points = _check_points(spec, eval_points)
    grid = _horizon_grid(spec, N)
    s2_disc = sigma2_discrete(spec, grid)
    Sigma = spec.A @ spec.A.T * s2_disc
    A_inv = np.linalg.inv(spec.A)

    phi = gaussian_density(points, spec.x0, Sigma)
    psi_hat = np.empty(len(points))
    psi_se = np.empty(len(points))
    for i, x in enumerate(progress(points, desc="girsanov", total=len(points), verbose=verbose)):
        y = A_inv @ (x - spec.x0)
        weights = []
        for start in range(0, n_paths, chunk_size):
            count = min(chunk_size, n_paths - start)
            bridge = simulate_bridge_ensemble(spec, y, count, master_seed, N,
                                              first_stream=_BRIDGE_STREAM + start)
            weights.append(girsanov_weights(spec, bridge, tol))
        w = np.concatenate(weights)
        psi_hat[i] = float(np.mean(w))
        psi_se[i] = float(np.std(w, ddof=1) / math.sqrt(len(w))) if len(w) > 1 else 0.0
        if psi_se[i] > VARIANCE_WARNING * psi_hat[i]:
            warn(f"Girsanov weight std error is {psi_se[i] / psi_hat[i]:.0%} of the mean at x = {x}")

    return DensityEstimate(
        method="girsanov", T0=spec.T, x0=spec.x0, eval_points=points,
        p_hat=phi * psi_hat, std_err=phi * psi_se,
        sigma2=sigma_squared(spec.hp, spec.a1, spec.a2, spec.T, N), sigma2_discrete=s2_disc,
        Sigma=Sigma, details={"weight_mean": psi_hat.tolist(), "weight_se": psi_se.tolist()},
    )


def evaluation_points(x0: np.ndarray, sigma: float, radius: float = 3.0,
                      per_axis: int = 13) -> np.ndarray:
    """Tensor grid of points within x0 ± radius σ"""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    axis = np.linspace(-radius, radius, per_axis) * sigma
    mesh = np.meshgrid(*([axis] * x0.size), indexing="ij")
    return x0 + np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class EnvelopeFit:
    """
    Gaussian envelope C1p σ^-d exp(-C2p r²) <= p(x) <= C1 σ^-d exp(-C2 r²),
    r² = |x - x0|² / σ²
    """

    C1: float
    C2: float
    C1p: float
    C2p: float
    violation_fraction: float
    sigma2: float
    n_points: int
    radius: float

    def to_json(self) -> dict:
        return {"C1": self.C1, "C2": self.C2, "C1p": self.C1p, "C2p": self.C2p,
                "violation_fraction": self.violation_fraction, "sigma2": self.sigma2}


def _line_fit(r2: np.ndarray, log_p: np.ndarray, keep: np.ndarray,
              fallback: Tuple[float, float]) -> Tuple[float, float]:
    """(C2, intercept) of log p = intercept - C2 r² over the kept points"""
    if np.count_nonzero(keep) < 3 or np.unique(r2[keep]).size < 2:
        return fallback
    slope, intercept = np.polyfit(-r2[keep], log_p[keep], 1)
    return float(slope), float(intercept)


def fit_envelope(estimate: DensityEstimate, radius: float = 3.0,
                 min_points: int = 9) -> EnvelopeFit:
    """
    Least-squares Gaussian envelopes of log p̂ against r² within radius σ

    A central fit splits the points into those on or above the line and
    those on or below it; the upper envelope is fitted to the first group,
    the lower envelope to the second, each with its own C2. A point
    violates an envelope when it lies outside the fitted curve widened by
    ENVELOPE_MARGIN (in log p) by more than three standard errors.
    """
    sigma2 = estimate.sigma2_discrete
    d = estimate.eval_points.shape[1]
    r2 = np.sum((estimate.eval_points - estimate.x0) ** 2, axis=1) / sigma2
    usable = (r2 <= radius ** 2 + 1e-12) & (estimate.p_hat > 0) & np.isfinite(estimate.p_hat)
    if np.count_nonzero(usable) < min_points:
        raise ValidationError(
            f"envelope fit needs {min_points} positive estimates within {radius} sigma, "
            f"got {np.count_nonzero(usable)}",
            check="fit_envelope.points",
        )
    r2_u = r2[usable]
    log_p = np.log(estimate.p_hat[usable])
    everything = np.ones(r2_u.size, dtype=bool)
    central = _line_fit(r2_u, log_p, everything, (0.0, 0.0))
    residual = log_p - (central[1] - central[0] * r2_u)
    c2_up, b_up = _line_fit(r2_u, log_p, residual >= -_SPLIT_TOL, central)
    c2_lo, b_lo = _line_fit(r2_u, log_p, residual <= _SPLIT_TOL, central)
    if min(central[0], c2_up, c2_lo) <= 0:
        raise NumericalError(f"fitted C2 is not positive (upper {c2_up:.4g}, lower {c2_lo:.4g})",
                             check="fit_envelope.C2")

    scale = sigma2 ** (d / 2.0)
    upper = np.exp(b_up + ENVELOPE_MARGIN - c2_up * r2_u)
    lower = np.exp(b_lo - ENVELOPE_MARGIN - c2_lo * r2_u)
    p_u, se_u = estimate.p_hat[usable], estimate.std_err[usable]
    violations = (p_u - upper > 3.0 * se_u) | (lower - p_u > 3.0 * se_u)
    return EnvelopeFit(
        C1=math.exp(b_up) * scale, C2=c2_up, C1p=math.exp(b_lo) * scale, C2p=c2_lo,
        violation_fraction=float(np.mean(violations)), sigma2=float(sigma2),
        n_points=int(usable.sum()), radius=radius,
    )
