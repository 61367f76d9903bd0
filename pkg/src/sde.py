#!/usr/bin/env python3
"""
Mixed SDE driven by two completely correlated fBMs

    X_t = x0 + ∫_0^t b(s, X_s) ds + A (a1 B^H1_t + a2 B^H2_t)

Euler scheme with left-point drift, drift admissibility checks, the
conditional Gaussian process (CGP) Y^(ε) and path regularity diagnostics.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from kernel import HurstPair, TimeGrid, kernel_table, product_quadrature
from noise import NoiseBundle, NoiseEnsemble, RngSpec, brownian_increments, holder_constant
from utils.errors import DomainError, ValidationError

DRIFT_FAMILIES = ("zero", "constant", "bounded_sin", "tanh", "time_modulated", "linear")


@dataclass(frozen=True)
class DriftSpec:
    """
    Drift b(t, x) from a named family

        zero            0
        constant        c                          (amplitude = c)
        bounded_sin     amp_i sin(freq_i x_i)
        tanh            scale tanh(x_i)
        time_modulated  amp_i sin(freq_i x_i) |sin(omega t)|^gamma
        linear          scale x   (unbounded; relaxed validation only)

    beta and gamma override the natural space and time Hölder exponents.
    """

    family: str = "zero"
    amplitude: Tuple[float, ...] = (0.0,)
    frequency: Tuple[float, ...] = (1.0,)
    scale: float = 0.0
    omega: float = 1.0
    beta: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.family not in DRIFT_FAMILIES:
            raise ValidationError(f"unknown drift family {self.family!r}, use one of {DRIFT_FAMILIES}",
                                  check="drift.family")
        for name in ("beta", "gamma"):
            value = getattr(self, name)
            if value is not None and not 0.0 < value <= 1.0:
                raise ValidationError(f"{name} must lie in (0, 1], got {value}",
                                      check=f"drift.{name}")
        if self.family == "time_modulated" and self.gamma is None:
            raise ValidationError("time_modulated drift needs gamma", check="drift.gamma")

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "DriftSpec":
        data = dict(data or {})
        for key in ("amplitude", "frequency"):
            if key in data:
                value = data[key]
                data[key] = tuple(float(v) for v in (value if isinstance(value, (list, tuple)) else [value]))
        return cls(**data)

    def _vector(self, values: Tuple[float, ...], d: int) -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.size == 1:
            return np.full(d, float(arr[0]))
        if arr.size != d:
            raise ValidationError(f"drift parameter has {arr.size} entries for dimension {d}",
                                  check="drift.dimension")
        return arr

    def evaluate(self, t, x: np.ndarray) -> np.ndarray:
        """b(t, x) for x of shape (..., d); t broadcasts over the leading axes"""
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        if self.family == "zero":
            return np.zeros_like(x)
        if self.family == "constant":
            return np.broadcast_to(self._vector(self.amplitude, d), x.shape).copy()
        if self.family == "tanh":
            return self.scale * np.tanh(x)
        if self.family == "linear":
            return self.scale * x
        waves = self._vector(self.amplitude, d) * np.sin(self._vector(self.frequency, d) * x)
        if self.family == "bounded_sin":
            return waves
        modulation = np.abs(np.sin(self.omega * np.asarray(t, dtype=float))) ** self.gamma
        return waves * np.expand_dims(modulation, -1)

    def sup_norm(self, d: int) -> float:
        """sup over (t, x) of |b(t, x)|"""
        if self.family == "zero":
            return 0.0
        if self.family == "linear":
            return math.inf if self.scale != 0 else 0.0
        if self.family == "tanh":
            return abs(self.scale) * math.sqrt(d)
        return float(np.linalg.norm(self._vector(self.amplitude, d)))

    @property
    def space_holder(self) -> float:
        return self.beta if self.beta is not None else 1.0

    @property
    def time_holder(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return 1.0


@dataclass
class MixedSdeSpec:
    """Parameters of the mixed SDE"""

    d: int
    x0: np.ndarray
    a1: float
    a2: float
    A: np.ndarray
    T: float
    hp: HurstPair
    drift: DriftSpec = field(default_factory=DriftSpec)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValidationError(f"dimension must be >= 1, got {self.d}", check="sde.d")
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.size == 1 and self.d > 1:
            self.x0 = np.full(self.d, float(self.x0[0]))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.x0.shape != (self.d,):
            raise ValidationError(f"x0 must have {self.d} entries", check="sde.x0")
        if self.A.shape != (self.d, self.d):
            raise ValidationError(f"A must be {self.d}x{self.d}", check="sde.A")
        if self.a1 == 0 or self.a2 == 0:
            raise ValidationError("a1 and a2 must both be non-zero", check="sde.coefficients")
        if abs(np.linalg.det(self.A)) <= 1e-12:
            raise ValidationError("A is singular (|det A| <= 1e-12)", check="sde.A_invertible")
        if not self.T > 0:
            raise ValidationError(f"T must be positive, got {self.T}", check="sde.T")

    def with_horizon(self, T: float) -> "MixedSdeSpec":
        return replace(self, T=T)

    def grid(self, N: int) -> TimeGrid:
        return TimeGrid(self.T, N)

    def noise_term(self, B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
        """A (a1 B1 + a2 B2) along the last axis"""
        return (self.a1 * B1 + self.a2 * B2) @ self.A.T


@dataclass
class DriftReport:
    passed: bool
    regime: str
    violations: List[str]
    checks: Dict[str, bool]


def validate_drift(spec: MixedSdeSpec, relaxed: bool = False) -> DriftReport:
    """
    Check the drift against the admissibility conditions of the regime

    Boundedness is required unless relaxed, which accepts linear growth.
    When H = min(H1, H2) > 1/2 the drift must also satisfy
    β > 1 - 1/(2H) in space and γ > H - 1/2 in time.
    """
    drift = spec.drift
    H = spec.hp.H
    checks: Dict[str, bool] = {}
    violations: List[str] = []

    bounded = math.isfinite(drift.sup_norm(spec.d))
    checks["bounded"] = bounded or relaxed
    if not checks["bounded"]:
        violations.append("sup|b| < inf")

    if H > 0.5:
        checks["space_holder"] = drift.space_holder > 1.0 - 1.0 / (2.0 * H)
        if not checks["space_holder"]:
            violations.append(f"beta > 1 - 1/(2H) = {1.0 - 1.0 / (2.0 * H):.4f} "
                              f"(beta = {drift.space_holder})")
        checks["time_holder"] = drift.time_holder > H - 0.5
        if not checks["time_holder"]:
            violations.append(f"gamma > H - 1/2 = {H - 0.5:.4f} (gamma = {drift.time_holder})")

    return DriftReport(passed=not violations, regime=spec.hp.regime,
                       violations=violations, checks=checks)


def require_valid_drift(spec: MixedSdeSpec, relaxed: bool = False) -> DriftReport:
    report = validate_drift(spec, relaxed)
    if not report.passed:
        raise ValidationError(f"drift violates {report.violations[0]}", check="drift.admissible")
    return report


@dataclass
class PathBundle:
    """One solved path"""

    spec: MixedSdeSpec
    noise: NoiseBundle
    X: np.ndarray   # (N+1, d)

    @property
    def grid(self) -> TimeGrid:
        return self.noise.grid


@dataclass
class PathEnsemble:
    spec: MixedSdeSpec
    noise: NoiseEnsemble
    X: np.ndarray   # (n, N+1, d)


def _check_noise(spec: MixedSdeSpec, grid: TimeGrid, d: int) -> None:
    if abs(grid.T - spec.T) > 1e-12 * spec.T:
        raise ValidationError(f"noise horizon {grid.T} differs from T = {spec.T}",
                              check="euler.horizon")
    if d != spec.d:
        raise ValidationError(f"noise dimension {d} differs from d = {spec.d}",
                              check="euler.dimension")


def _euler(spec: MixedSdeSpec, grid: TimeGrid, stoch: np.ndarray) -> np.ndarray:
    """X_k = x0 + Σ_{j<k} b(t_j, X_j) Δ + stoch_k, leading path axes allowed"""
    X = np.empty_like(stoch)
    drift_sum = np.zeros(stoch.shape[:-2] + (spec.d,))
    X[..., 0, :] = spec.x0 + stoch[..., 0, :]
    t = grid.nodes
    for k in range(grid.N):
        if spec.drift.family != "zero":
            drift_sum = drift_sum + spec.drift.evaluate(t[k], X[..., k, :]) * grid.dt
        X[..., k + 1, :] = spec.x0 + drift_sum + stoch[..., k + 1, :]
    return X


def euler_solve(spec: MixedSdeSpec, noise: NoiseBundle) -> PathBundle:
    """
    Euler approximation of the SDE on the noise grid

    The noise term enters exactly, so zero drift reproduces
    x0 + A(a1 B1 + a2 B2) at every node.
    """
    _check_noise(spec, noise.grid, noise.dW.shape[-1])
    return PathBundle(spec, noise, _euler(spec, noise.grid, spec.noise_term(noise.B1, noise.B2)))


def euler_solve_ensemble(spec: MixedSdeSpec, noise: NoiseEnsemble) -> PathEnsemble:
    """Euler scheme vectorised over the paths of an ensemble"""
    _check_noise(spec, noise.grid, noise.dW.shape[-1])
    return PathEnsemble(spec, noise, _euler(spec, noise.grid, spec.noise_term(noise.B1, noise.B2)))


def pathwise_bound_check(path: PathBundle) -> Tuple[float, float]:
    """sup_t |X_t - x0 - A(a1 B1 + a2 B2)| and its bound sup|b| T"""
    stoch = path.spec.noise_term(path.noise.B1, path.noise.B2)
    gap = float(np.max(np.linalg.norm(path.X - path.spec.x0 - stoch, axis=1)))
    return gap, path.spec.drift.sup_norm(path.spec.d) * path.spec.T


@dataclass
class CgpResult:
    t: float
    eps: float
    Y: np.ndarray
    xi: np.ndarray
    eta2: np.ndarray              # A A^T Σ f_cell^2 Δ over (t - ε, t)
    eta2_quadrature: np.ndarray   # A A^T ∫_{t-ε}^t f(t, s)^2 ds


def _cgp_indices(grid: TimeGrid, t: float, eps: float) -> Tuple[int, int]:
    if not 0.0 < eps < t <= grid.T + 1e-12:
        raise DomainError(f"need 0 < eps < t <= T, got eps = {eps}, t = {t}",
                          check="cgp.domain")
    k = grid.index_of(t)
    m = grid.index_of(t - eps)
    return k, m


def _mixed_weights(spec: MixedSdeSpec, grid: TimeGrid) -> np.ndarray:
    """(N+1, N) cell integrals of a1 K1 + a2 K2"""
    return (spec.a1 * kernel_table(spec.hp.h1, grid).weights
            + spec.a2 * kernel_table(spec.hp.h2, grid).weights)


def cgp(path: PathBundle, t: float, eps: float, quadrature_cells: int = 1024) -> CgpResult:
    """
    Conditional Gaussian process at time t with lag ε

        Y  = X_{t-ε} + A (a1 (B1_t - B1_{t-ε}) + a2 (B2_t - B2_{t-ε}))
        ξ  = X_{t-ε} + A ∫_0^{t-ε} (f(t,s) - f(t-ε,s)) dW_s
        η² = A A^T ∫_{t-ε}^t f(t,s)^2 ds,   f = a1 K_H1 + a2 K_H2

    Given the path up to t - ε, Y ~ N(ξ, η²). Both t and t - ε must be nodes.
    """
    spec, grid, noise = path.spec, path.grid, path.noise
    k, m = _cgp_indices(grid, t, eps)
    weights = _mixed_weights(spec, grid)
    dt = grid.dt

    Y = path.X[m] + spec.A @ (spec.a1 * (noise.B1[k] - noise.B1[m])
                              + spec.a2 * (noise.B2[k] - noise.B2[m]))
    past = ((weights[k, :m] - weights[m, :m]) / dt) @ noise.dW[:m]
    xi = path.X[m] + spec.A @ past

    AAt = spec.A @ spec.A.T
    eta2 = AAt * float(np.sum(weights[k, m:k] ** 2) / dt)
    h1, h2, a1, a2 = spec.hp.h1, spec.hp.h2, spec.a1, spec.a2
    lower = t - eps
    tail = (a1 * a1 * product_quadrature(h1, t, h1, t, quadrature_cells, lower)
            + 2 * a1 * a2 * product_quadrature(h1, t, h2, t, quadrature_cells, lower)
            + a2 * a2 * product_quadrature(h2, t, h2, t, quadrature_cells, lower))
    return CgpResult(t=t, eps=eps, Y=Y, xi=xi, eta2=eta2, eta2_quadrature=AAt * tail)


@dataclass
class CgpGap:
    eps: float
    mean_gap: float
    std_err: float
    bound: float
    passed: bool


def cgp_gap_check(paths: PathEnsemble, t: float, eps_list: Sequence[float]) -> List[CgpGap]:
    """E|X_t - Y^(ε)_t| against the bound sup|b| ε"""
    spec, noise = paths.spec, paths.noise
    grid = noise.grid
    sup_b = spec.drift.sup_norm(spec.d)
    out = []
    for eps in eps_list:
        k, m = _cgp_indices(grid, t, eps)
        Y = paths.X[:, m] + spec.noise_term(noise.B1[:, k] - noise.B1[:, m],
                                            noise.B2[:, k] - noise.B2[:, m])
        gaps = np.linalg.norm(paths.X[:, k] - Y, axis=1)
        mean = float(np.mean(gaps))
        se = float(np.std(gaps, ddof=1) / np.sqrt(len(gaps))) if len(gaps) > 1 else 0.0
        bound = sup_b * eps
        out.append(CgpGap(eps, mean, se, bound, mean <= bound + 1e-12 * (1.0 + bound)))
    return out


@dataclass
class CharacteristicCheck:
    frequencies: np.ndarray     # (m, d)
    empirical: np.ndarray       # complex (m,)
    theoretical: np.ndarray     # complex (m,)
    std_err_real: np.ndarray
    std_err_imag: np.ndarray
    passed: bool


def cgp_characteristic_check(path: PathBundle, t: float, eps: float, n_samples: int,
                             master_seed: int,
                             frequencies: Optional[np.ndarray] = None) -> CharacteristicCheck:
    """
    Resample the increments after t - ε (past frozen) and compare the
    empirical characteristic function of Y with exp(i<u,ξ> - u^T η² u / 2)
    """
    spec, grid, noise = path.spec, path.grid, path.noise
    k, m = _cgp_indices(grid, t, eps)
    res = cgp(path, t, eps)
    if frequencies is None:
        unit = np.ones(spec.d) / math.sqrt(spec.d)
        scale = 1.0 / math.sqrt(max(float(np.trace(res.eta2)) / spec.d, 1e-300))
        frequencies = np.outer([0.25, 0.5, 1.0, 1.5, 2.0], unit) * scale
    u = np.atleast_2d(np.asarray(frequencies, dtype=float))

    w1 = kernel_table(spec.hp.h1, grid).averages
    w2 = kernel_table(spec.hp.h2, grid).averages
    future = np.stack([brownian_increments(RngSpec(master_seed, i), grid, spec.d)[m:k]
                       for i in range(n_samples)])                         # (n, k-m, d)
    # B_k - B_m splits into a frozen past part and a resampled future part
    past1 = (w1[k, :m] - w1[m, :m]) @ noise.dW[:m]
    past2 = (w2[k, :m] - w2[m, :m]) @ noise.dW[:m]
    inc1 = past1 + np.einsum("j,njd->nd", w1[k, m:k], future)
    inc2 = past2 + np.einsum("j,njd->nd", w2[k, m:k], future)
    Y = path.X[m] + spec.noise_term(inc1, inc2)

    phase = Y @ u.T                                                        # (n, m)
    cos, sin = np.cos(phase), np.sin(phase)
    empirical = cos.mean(axis=0) + 1j * sin.mean(axis=0)
    se_re = cos.std(axis=0, ddof=1) / math.sqrt(n_samples)
    se_im = sin.std(axis=0, ddof=1) / math.sqrt(n_samples)
    quad = np.einsum("md,de,me->m", u, res.eta2, u)
    theoretical = np.exp(1j * (u @ res.xi) - 0.5 * quad)

    ok = (np.all(np.abs(empirical.real - theoretical.real) <= 3 * se_re + 1e-12)
          and np.all(np.abs(empirical.imag - theoretical.imag) <= 3 * se_im + 1e-12))
    return CharacteristicCheck(u, empirical, theoretical, se_re, se_im, bool(ok))


@dataclass
class JointCovariance:
    eta2: np.ndarray
    eta2_prime: np.ndarray
    cross: np.ndarray
    sigma: np.ndarray
    min_eigenvalue: float
    psd: bool


def cgp_joint_covariance(spec: MixedSdeSpec, other: MixedSdeSpec, t: float, eps: float,
                         N: int) -> JointCovariance:
    """
    Joint covariance of two CGPs sharing the Brownian motion W

    Σ = [[η², λ], [λ^T, η'²]] with λ = A A'^T ∫_{t-ε}^t f f' ds.
    """
    if other.d != spec.d or other.hp != spec.hp or abs(other.T - spec.T) > 1e-12:
        raise ValidationError("joint CGPs need the same dimension, Hurst pair and horizon",
                              check="cgp_joint.compatible")
    grid = spec.grid(N)
    k, m = _cgp_indices(grid, t, eps)
    f = _mixed_weights(spec, grid)[k, m:k]
    g = _mixed_weights(other, grid)[k, m:k]
    dt = grid.dt

    eta2 = spec.A @ spec.A.T * float(np.sum(f * f) / dt)
    eta2_prime = other.A @ other.A.T * float(np.sum(g * g) / dt)
    cross = spec.A @ other.A.T * float(np.sum(f * g) / dt)
    sigma = np.block([[eta2, cross], [cross.T, eta2_prime]])
    min_eig = float(np.min(np.linalg.eigvalsh(sigma)))
    return JointCovariance(eta2, eta2_prime, cross, sigma, min_eig, min_eig >= -1e-10)


@dataclass
class HolderReport:
    gamma: float
    C_X: float
    C_B1: float
    C_B2: float
    bound: float           # sup|b| T^(1-γ) + |A| (|a1| C_B1 + |a2| C_B2)
    bound_max_form: float  # max(sup|b| T^(1-γ), |A| max(|a1| C_B1, |a2| C_B2))
    passed: bool


def holder_diagnostic(path: PathBundle, gamma: float) -> HolderReport:
    """Empirical γ-Hölder constants of X, B1, B2 and the bound they imply for X"""
    spec = path.spec
    if not 0.0 < gamma < spec.hp.H:
        raise DomainError(f"gamma must lie in (0, min(H1, H2)) = (0, {spec.hp.H})",
                          check="holder.gamma")
    grid = path.grid
    c_x = holder_constant(path.X, grid, gamma)
    c_b1 = holder_constant(path.noise.B1, grid, gamma)
    c_b2 = holder_constant(path.noise.B2, grid, gamma)

    drift_part = spec.drift.sup_norm(spec.d) * spec.T ** (1.0 - gamma)
    a_norm = float(np.linalg.norm(spec.A, 2))
    bound = drift_part + a_norm * (abs(spec.a1) * c_b1 + abs(spec.a2) * c_b2)
    bound_max = max(drift_part, a_norm * max(abs(spec.a1) * c_b1, abs(spec.a2) * c_b2))
    return HolderReport(gamma, c_x, c_b1, c_b2, bound, bound_max,
                        c_x <= bound * (1.0 + 1e-9))
