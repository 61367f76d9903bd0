#!/usr/bin/env python3
"""
Riemann-Liouville fractional calculus on a uniform grid, and the covariance
operator K_H with its inverse.

Operators act on grid functions sampled at the N+1 nodes of a TimeGrid and
are stored as dense lower-triangular matrices (cached per order and grid):

    I^α  product-trapezoid rule (exact for piecewise-linear f)
    D^α  L1 rule: exact Riemann-Liouville derivative of the piecewise-linear
         interpolant; the value at t = 0 is 0, the limit for f(0) = 0

Samples may be a vector (N+1,) or a matrix (N+1, m) whose columns are
transformed independently.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from scipy.linalg import toeplitz

from kernel import TimeGrid, kernel_normalisation, kernel_table
from specfun import gamma_fn
from utils.errors import DomainError, InstabilityError, ValidationError

# relative change between grid N/2 and N above which D^α is rejected
STABILITY_LIMIT = 0.10


@dataclass
class GridFunction:
    """Samples of a function at the nodes of a grid"""

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.shape[0] != self.grid.N + 1:
            raise ValidationError(
                f"expected {self.grid.N + 1} samples, got {self.samples.shape[0]}",
                check="GridFunction.shape",
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("grid function has non-finite samples",
                                  check="GridFunction.finite")

    @classmethod
    def from_callable(cls, grid: TimeGrid, func) -> "GridFunction":
        return cls(grid, func(grid.nodes))

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    def sup(self) -> float:
        return float(np.max(np.abs(self.samples)))


@lru_cache(maxsize=8)
def integral_matrix(alpha: float, grid: TimeGrid) -> np.ndarray:
    """Matrix of I^α on the grid, 0 < α <= 1"""
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"integral order must lie in (0, 1], got {alpha}",
                          check="rl_integral.alpha")
    n = grid.N
    p = alpha + 1.0
    m = np.arange(n + 1, dtype=float)

    # interior weights depend on k - j only
    lag = np.empty(n + 1)
    lag[0] = 1.0
    lag[1:] = (m[1:] + 1.0) ** p - 2.0 * m[1:] ** p + (m[1:] - 1.0) ** p
    matrix = toeplitz(lag, np.zeros(n + 1))

    # column 0 (start node) and row 0
    k = m[1:]
    matrix[1:, 0] = (k - 1.0) ** p - (k - alpha - 1.0) * k ** alpha
    matrix[0, :] = 0.0

    matrix *= grid.dt ** alpha / gamma_fn(alpha + 2.0)
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=8)
def derivative_matrix(alpha: float, grid: TimeGrid) -> np.ndarray:
    """Matrix of D^α on the grid, 0 < α < 1"""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"derivative order must lie in (0, 1), got {alpha}",
                          check="rl_derivative.alpha")
    n = grid.N
    q = 1.0 - alpha
    m = np.arange(n + 2, dtype=float)
    incr = np.zeros(n + 2)
    incr[1:] = m[1:] ** q - (m[1:] - 1.0) ** q   # incr[m] = m^q - (m-1)^q

    lag = np.empty(n + 1)
    lag[0] = incr[1]
    lag[1:] = incr[2:n + 2] - incr[1:n + 1]
    matrix = toeplitz(lag, np.zeros(n + 1))
    matrix *= grid.dt ** (-alpha) / gamma_fn(2.0 - alpha)

    # start node: jump term f(0) t^-α / Γ(1-α) minus the first slope share
    t = grid.nodes[1:]
    matrix[1:, 0] = (t ** (-alpha) / gamma_fn(1.0 - alpha)
                     - incr[1:n + 1] * grid.dt ** (-alpha) / gamma_fn(2.0 - alpha))
    # D^α f(0) = 0 for f(0) = 0; row 0 stays empty so the matrix is lower triangular
    matrix[0, :] = 0.0
    matrix.setflags(write=False)
    return matrix


def power_weight(samples: np.ndarray, grid: TimeGrid, power: float) -> np.ndarray:
    """
    Multiply samples by t^power

    At t = 0 the product is 0 for power > 0 and a finite sample, otherwise it
    is extrapolated linearly from t_1 and t_2.
    """
    if power == 0.0:
        return np.array(samples, dtype=float)
    t = grid.nodes
    shape = (-1,) + (1,) * (np.ndim(samples) - 1)
    out = np.empty_like(samples, dtype=float)
    out[1:] = t[1:].reshape(shape) ** power * samples[1:]
    if power > 0 and np.all(np.isfinite(samples[0])):
        out[0] = 0.0
    else:
        out[0] = 2.0 * out[1] - out[2]
    return out


def rl_integral(alpha: float, f: GridFunction) -> GridFunction:
    """Riemann-Liouville integral I^α f, 0 < α <= 1"""
    return GridFunction(f.grid, integral_matrix(alpha, f.grid) @ f.samples)


def rl_derivative(alpha: float, f: GridFunction, check_stability: bool = True) -> GridFunction:
    """
    Riemann-Liouville derivative D^α f, 0 <= α < 1

    With check_stability the result is compared with the same derivative on
    the grid coarsened by two; a relative change above 10% raises
    InstabilityError.
    """
    if alpha == 0.0:
        return GridFunction(f.grid, f.samples.copy())
    fine = derivative_matrix(alpha, f.grid) @ f.samples

    if check_stability and f.grid.N % 2 == 0 and f.grid.N >= 8:
        coarse_grid = TimeGrid(f.grid.T, f.grid.N // 2)
        coarse = derivative_matrix(alpha, coarse_grid) @ f.samples[::2]
        reference = fine[::2][2:]
        scale = max(float(np.max(np.abs(reference))), 1e-300)
        change = float(np.max(np.abs(reference - coarse[2:]))) / scale
        if change > STABILITY_LIMIT:
            raise InstabilityError(
                f"D^{alpha} changed by {change:.1%} between N={coarse_grid.N} and N={f.grid.N}",
                check="rl_derivative.stability",
            )
    return GridFunction(f.grid, fine)


def weighted(f: GridFunction, power: float) -> GridFunction:
    """t^power f(t)"""
    return GridFunction(f.grid, power_weight(f.samples, f.grid, power))


# Operator chains: a list of (kind, parameter) steps applied left to right.
# kind is "w" (multiply by t^p), "I" (I^α) or "D" (D^α).
Step = Tuple[str, float]


def simplify_chain(steps: List[Step]) -> List[Step]:
    """Merge consecutive weights and drop identities"""
    out: List[Step] = []
    for kind, value in steps:
        if kind == "w" and out and out[-1][0] == "w":
            out[-1] = ("w", out[-1][1] + value)
        else:
            out.append((kind, value))
    return [(kind, value) for kind, value in out if not (kind == "w" and abs(value) < 1e-15)]


def apply_chain(steps: List[Step], samples: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Apply an operator chain to samples (vector or column matrix)"""
    out = np.asarray(samples, dtype=float)
    for kind, value in steps:
        if kind == "w":
            out = power_weight(out, grid, value)
        elif kind == "I":
            out = integral_matrix(value, grid) @ out
        elif kind == "D":
            out = derivative_matrix(value, grid) @ out
        else:
            raise ValidationError(f"unknown operator step {kind!r}", check="operator.chain")
    return out


def inverse_chain(H: float, absolutely_continuous: bool = False) -> Tuple[List[Step], float]:
    """
    Chain and scale of K_H^{-1} applied to the derivative g' of g = K_H h

        H > 1/2:  t^α D^α t^-α g' / c_H,   α = H - 1/2
        H < 1/2:  t^-α I^α t^α g' / c_H,   α = 1/2 - H  (absolutely continuous g)
        H = 1/2:  g'
    """
    if H == 0.5:
        return [], 1.0
    alpha = abs(H - 0.5)
    scale = 1.0 / kernel_normalisation(H)
    if H > 0.5:
        return [("w", -alpha), ("D", alpha), ("w", alpha)], scale
    if not absolutely_continuous:
        raise ValidationError(
            "K_H^{-1} for H < 1/2 is only implemented for absolutely continuous arguments",
            check="covariance_inverse.general_branch",
        )
    return [("w", alpha), ("I", alpha), ("w", -alpha)], scale


def forward_chain(H: float) -> Tuple[List[Step], float]:
    """
    Chain and scale of ψ -> d/dt (K_H ψ)

        H > 1/2:  c_H t^α I^α t^-α ψ
        H < 1/2:  c_H t^-α D^α t^α ψ
    """
    if H == 0.5:
        return [], 1.0
    alpha = abs(H - 0.5)
    scale = kernel_normalisation(H)
    if H > 0.5:
        return [("w", -alpha), ("I", alpha), ("w", alpha)], scale
    return [("w", alpha), ("D", alpha), ("w", -alpha)], scale


def covariance_operator(H: float, h: GridFunction) -> GridFunction:
    """(K_H h)(t) = ∫_0^t K_H(t, s) h(s) ds, h averaged over each cell"""
    table = kernel_table(H, h.grid)
    cell_means = 0.5 * (h.samples[:-1] + h.samples[1:])
    return GridFunction(h.grid, table.weights @ cell_means)


def inverse_from_derivative(H: float, g_prime: GridFunction,
                            absolutely_continuous: bool = False) -> GridFunction:
    """K_H^{-1} g given the derivative g' of g"""
    steps, scale = inverse_chain(H, absolutely_continuous)
    return GridFunction(g_prime.grid, scale * apply_chain(steps, g_prime.samples, g_prime.grid))


def covariance_inverse(H: float, g: GridFunction,
                       absolutely_continuous: bool = False) -> GridFunction:
    """
    K_H^{-1} g for g with g(0) = 0

    g' is taken by centred differences (one-sided at the ends).

    Args:
        H: Hurst index
        g: Function in the range of K_H
        absolutely_continuous: Must be True for H < 1/2

    Returns:
        h with K_H h = g
    """
    scale = 1.0 + g.sup()
    if np.any(np.abs(g.samples[0]) > 1e-12 * scale):
        raise ValidationError("covariance_inverse needs g(0) = 0",
                              check="covariance_inverse.origin")
    g_prime = np.gradient(g.samples, g.grid.dt, axis=0)
    return inverse_from_derivative(H, GridFunction(g.grid, g_prime), absolutely_continuous)
