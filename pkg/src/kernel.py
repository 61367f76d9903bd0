#!/usr/bin/env python3
"""
Volterra kernel of fractional Brownian motion and the quantities built on it.

    K_H(t, s) = c_H (t - s)^(H - 1/2) / Γ(H + 1/2) · 2F1(H - 1/2, 1/2 - H; H + 1/2; 1 - t/s)

c_H normalises the kernel so that ∫_0^t K_H(t, s)^2 ds = t^(2H); it is 1 at H = 1/2.

All integrals over s use the midpoint rule on a uniform grid. The two end
cells, where the integrand behaves like s^e0 near 0 or (m - s)^e near the
upper limit m, get the multiplier that makes the midpoint rule exact for that
power (exact primitive of the dominant factor, smooth part frozen at the
midpoint).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from specfun import beta_fn, gamma_fn, hyp2f1
from utils.errors import DomainError, InstabilityError, ValidationError

ArrayLike = Union[float, np.ndarray]

# rows of a KernelTable evaluated per worker task
_ROW_CHUNK = 64
_table_workers = 1


def set_workers(workers: int) -> None:
    """Number of threads used to build kernel tables"""
    global _table_workers
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}", check="workers")
    _table_workers = int(workers)


@dataclass(frozen=True)
class HurstPair:
    """The two Hurst indices and their regime"""

    h1: float
    h2: float

    def __post_init__(self):
        for name, value in (("h1", self.h1), ("h2", self.h2)):
            if not 0.0 < value < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {value}",
                                      check=f"HurstPair.{name}")

    @property
    def H(self) -> float:
        return min(self.h1, self.h2)

    @property
    def H_prime(self) -> float:
        return max(self.h1, self.h2)

    @property
    def regime(self) -> str:
        if self.H_prime < 0.5:
            return "both-short"
        if self.H > 0.5:
            return "both-long"
        return "mixed"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k T / N on [0, T]"""

    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError(f"horizon must be positive, got {self.T}", check="TimeGrid.T")
        if int(self.N) != self.N or self.N < 2:
            raise ValidationError(f"N must be an integer >= 2, got {self.N}", check="TimeGrid.N")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.dt

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Node index of time t; t must lie on the grid"""
        k = int(round(t / self.dt))
        if k < 0 or k > self.N or abs(k * self.dt - t) > tol * max(1.0, self.T):
            raise DomainError(f"t = {t} is not a node of the grid (T={self.T}, N={self.N})",
                              check="TimeGrid.node")
        return k


def kernel_normalisation(H: float) -> float:
    """c_H = (2H Γ(3/2 - H) Γ(H + 1/2) / Γ(2 - 2H))^(1/2)"""
    return math.sqrt(2.0 * H * gamma_fn(1.5 - H) * gamma_fn(H + 0.5) / gamma_fn(2.0 - 2.0 * H))


def kernel_eval(H: float, t: ArrayLike, s: ArrayLike) -> ArrayLike:
    """
    Volterra kernel K_H(t, s) for 0 < s < t

    t and s broadcast against each other. For H < 1/2 the kernel diverges as
    s -> t; integrals near the diagonal must use cell weights instead.
    """
    if not 0.0 < H < 1.0:
        raise DomainError(f"H must lie in (0, 1), got {H}", check="kernel_eval.H")
    t_arr, s_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    if np.any(s_arr <= 0) or np.any(s_arr >= t_arr):
        raise DomainError("kernel_eval needs 0 < s < t", check="kernel_eval.domain")

    if H == 0.5:
        values = np.ones_like(t_arr)
    else:
        z = (1.0 - t_arr / s_arr).ravel()
        series = np.asarray(hyp2f1(H - 0.5, 0.5 - H, H + 0.5, z)).reshape(t_arr.shape)
        values = (kernel_normalisation(H) / gamma_fn(H + 0.5)
                  * (t_arr - s_arr) ** (H - 0.5) * series)
    return float(values) if values.ndim == 0 else values


def singular_multipliers(n_cells: int, e_first: float, e_last: float) -> np.ndarray:
    """
    Midpoint-rule multipliers for a run of n_cells cells

    The first cell carries s^e_first (s measured from the lower limit), the
    last cell (m - s)^e_last. A multiplier of 1 means plain midpoint.
    """
    mult = np.ones(n_cells)
    if n_cells == 1:
        mult[0] = 2.0 ** (e_first + e_last) * beta_fn(e_first + 1.0, e_last + 1.0)
        return mult
    mult[0] = 2.0 ** e_first / (e_first + 1.0)
    mult[-1] = 2.0 ** e_last / (e_last + 1.0)
    return mult


@dataclass(frozen=True)
class KernelTable:
    """
    K_H tabulated on a grid

    values[i, j]  = K_H(t_i, midpoint of cell j) for j < i, zero otherwise
    weights[i, j] = ∫ over cell j of K_H(t_i, s) ds (singular cells corrected)
    Row i has exactly i entries; row 0 is empty.
    """

    H: float
    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def row(self, i: int) -> np.ndarray:
        return self.weights[i, :i]

    @property
    def averages(self) -> np.ndarray:
        """Cell averages weights / dt"""
        return self.weights / self.grid.dt


def _table_rows(H: float, grid: TimeGrid, rows: range) -> Tuple[np.ndarray, np.ndarray]:
    mids = grid.midpoints
    e_first = -abs(H - 0.5)
    e_last = H - 0.5
    values = np.zeros((len(rows), grid.N))
    weights = np.zeros((len(rows), grid.N))

    # evaluate all (i, j < i) pairs of the chunk in one call
    row_idx = np.concatenate([np.full(i, r) for r, i in enumerate(rows)])
    col_idx = np.concatenate([np.arange(i) for i in rows])
    if row_idx.size:
        t_vals = np.array([grid.nodes[i] for i in rows])[row_idx]
        values[row_idx, col_idx] = kernel_eval(H, t_vals, mids[col_idx])

    for r, i in enumerate(rows):
        if i == 0:
            continue
        weights[r, :i] = grid.dt * values[r, :i] * singular_multipliers(i, e_first, e_last)
    return values, weights


@lru_cache(maxsize=16)
def kernel_table(H: float, grid: TimeGrid) -> KernelTable:
    """
    Build (or fetch from cache) the KernelTable for (H, N, T)

    Rows are computed in chunks on a thread pool; the arrays are read-only.
    """
    if not 0.0 < H < 1.0:
        raise DomainError(f"H must lie in (0, 1), got {H}", check="kernel_table.H")
    chunks = [range(start, min(start + _ROW_CHUNK, grid.N + 1))
              for start in range(0, grid.N + 1, _ROW_CHUNK)]

    values = np.zeros((grid.N + 1, grid.N))
    weights = np.zeros((grid.N + 1, grid.N))
    with ThreadPoolExecutor(max_workers=_table_workers) as pool:
        for rows, (vals, wts) in zip(chunks, pool.map(lambda r: _table_rows(H, grid, r), chunks)):
            values[rows.start:rows.stop] = vals
            weights[rows.start:rows.stop] = wts

    values.setflags(write=False)
    weights.setflags(write=False)
    return KernelTable(H=H, grid=grid, values=values, weights=weights)


def mixed_kernel(hp: HurstPair, a1: float, a2: float, T0: float, t: ArrayLike) -> ArrayLike:
    """f(T0, t) = a1 K_H1(T0, t) + a2 K_H2(T0, t)"""
    return a1 * kernel_eval(hp.h1, T0, t) + a2 * kernel_eval(hp.h2, T0, t)


def product_cells(HA: float, tA: float, HB: float, tB: float, n_cells: int,
                  lower: float = 0.0) -> np.ndarray:
    """
    Cell integrals of K_A(tA, s) K_B(tB, s) over [lower, min(tA, tB)]

    n_cells uniform cells. The lower cell is singular only when lower = 0;
    the upper cell picks up the exponent of every factor whose time equals
    the upper limit.
    """
    upper = min(tA, tB)
    if not 0.0 <= lower < upper:
        raise DomainError(f"need 0 <= lower < min(tA, tB), got [{lower}, {upper}]",
                          check="product_cells.domain")
    width = (upper - lower) / n_cells
    mids = lower + (np.arange(n_cells) + 0.5) * width
    integrand = kernel_eval(HA, tA, mids) * kernel_eval(HB, tB, mids)

    e_first = -abs(HA - 0.5) - abs(HB - 0.5) if lower == 0.0 else 0.0
    e_last = (HA - 0.5 if tA == upper else 0.0) + (HB - 0.5 if tB == upper else 0.0)
    return width * integrand * singular_multipliers(n_cells, e_first, e_last)


def product_quadrature(HA: float, tA: float, HB: float, tB: float, n_cells: int,
                       lower: float = 0.0) -> float:
    """∫ K_A(tA, s) K_B(tB, s) ds over [lower, min(tA, tB)]"""
    return float(np.sum(product_cells(HA, tA, HB, tB, n_cells, lower)))


def fbm_covariance(H: float, t: ArrayLike, s: ArrayLike) -> ArrayLike:
    """R_H(t, s) = (t^2H + s^2H - |t - s|^2H) / 2"""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    return 0.5 * (t ** (2 * H) + s ** (2 * H) - np.abs(t - s) ** (2 * H))


def covariance_reconstruction(H: float, times: Sequence[float], n_cells: int) -> np.ndarray:
    """Matrix of ∫_0^min(t,s) K_H(t,u) K_H(s,u) du over all pairs of times"""
    times = list(times)
    out = np.zeros((len(times), len(times)))
    for a, t in enumerate(times):
        for b, s in enumerate(times[a:], start=a):
            out[a, b] = out[b, a] = product_quadrature(H, t, H, s, n_cells)
    return out


def _f2_cells(hp: HurstPair, a1: float, a2: float, T0: float, n_cells: int,
              lower: float = 0.0) -> np.ndarray:
    """Cell integrals of f(T0, s)^2 over [lower, T0]"""
    h1, h2 = hp.h1, hp.h2
    return (a1 * a1 * product_cells(h1, T0, h1, T0, n_cells, lower)
            + 2.0 * a1 * a2 * product_cells(h1, T0, h2, T0, n_cells, lower)
            + a2 * a2 * product_cells(h2, T0, h2, T0, n_cells, lower))


def sigma_squared(hp: HurstPair, a1: float, a2: float, T0: float, N: int) -> float:
    """σ²(T0) = ∫_0^T0 f(T0, t)^2 dt"""
    if not T0 > 0:
        raise DomainError(f"T0 must be positive, got {T0}", check="sigma_squared.T0")
    value = float(np.sum(_f2_cells(hp, a1, a2, T0, N)))
    if not value > 0:
        raise InstabilityError(f"σ² = {value} is not positive", check="sigma_squared.positive")
    return value


@dataclass
class KappaProfile:
    """κ_t² and its ingredients at every node of a grid on [0, T0]"""

    grid: TimeGrid
    f_nodes: np.ndarray    # f(T0, t_k); nan at the end nodes
    z_nodes: np.ndarray    # z(t_k) = ∫_{t_k}^{T0} f^2
    cells: np.ndarray      # ∫ over cell j of f^2
    kappa2: np.ndarray     # nan at T0

    @property
    def upper_bound(self) -> np.ndarray:
        """f(T0, t)^2 / z(t), which dominates κ_t²"""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.f_nodes ** 2 / self.z_nodes


def kappa_profile(hp: HurstPair, a1: float, a2: float, T0: float, N: int) -> KappaProfile:
    """
    κ_t² = f(T0, t)^2 (1/z(t) - 1/z(0)) at every node, z(u) = ∫_u^T0 f^2

    z comes from a reverse cumulative sum of singular-corrected cell integrals.
    """
    grid = TimeGrid(T0, N)
    cells = _f2_cells(hp, a1, a2, T0, N)
    z = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])

    f_nodes = np.full(N + 1, np.nan)
    f_nodes[1:N] = mixed_kernel(hp, a1, a2, T0, grid.nodes[1:N])

    kappa2 = np.full(N + 1, np.nan)
    kappa2[0] = 0.0
    with np.errstate(divide="ignore"):
        kappa2[1:N] = f_nodes[1:N] ** 2 * (1.0 / z[1:N] - 1.0 / z[0])
    return KappaProfile(grid=grid, f_nodes=f_nodes, z_nodes=z, cells=cells, kappa2=kappa2)


def _kappa_index(profile: KappaProfile, t: float) -> int:
    T0 = profile.grid.T
    if not 0.0 < t < T0:
        raise DomainError(f"need 0 < t < T0, got t = {t}, T0 = {T0}", check="kappa.domain")
    k = profile.grid.index_of(t)
    if profile.z_nodes[k] <= 1e-14 * profile.z_nodes[0]:
        raise InstabilityError(f"z(t) underflows at t = {t}; t is too close to T0",
                               check="kappa.z_underflow")
    return k


def kappa_squared(hp: HurstPair, a1: float, a2: float, T0: float, t: float,
                  N: int = 4096) -> float:
    """κ_t² through the closed reduction f²(t)(1/z(t) - 1/z(0)); t must be a node of the N-grid"""
    profile = kappa_profile(hp, a1, a2, T0, N)
    return float(profile.kappa2[_kappa_index(profile, t)])


def kappa_squared_direct(hp: HurstPair, a1: float, a2: float, T0: float, t: float,
                         N: int = 4096) -> float:
    """
    κ_t² from its defining integral ∫_0^t f²(t) f²(u) / z(u)² du

    Midpoint rule in the measure f²(u)du, with z at cell midpoints.
    """
    profile = kappa_profile(hp, a1, a2, T0, N)
    k = _kappa_index(profile, t)
    z_mid = profile.z_nodes[1:k + 1] + 0.5 * profile.cells[:k]
    return float(profile.f_nodes[k] ** 2 * np.sum(profile.cells[:k] / z_mid ** 2))


def kappa_weighted_integral(profile: KappaProfile, H: float) -> float:
    """
    J(T0) = ∫_0^T0 t^(1/2 - H) κ_t dt

    Trapezoid over the nodes below T0; κ_t ~ c (T0 - t)^(-1/2) in the last
    cell, which is integrated exactly from the value at t_{N-1}.
    """
    grid = profile.grid
    t = grid.nodes
    integrand = np.zeros(grid.N)
    integrand[1:] = t[1:grid.N] ** (0.5 - H) * np.sqrt(profile.kappa2[1:grid.N])
    body = float(np.sum(0.5 * (integrand[:-1] + integrand[1:])) * grid.dt)
    return body + 2.0 * grid.dt * integrand[-1]


def scaling_exponents(hp: HurstPair) -> Dict[str, object]:
    """
    Exponents of T0 attached to J(T0)

    'bounds' are the exponents of the regime upper bounds; 'self_similar'
    is 1 - H, the exact exponent when f is homogeneous in (T0, t).
    """
    H, Hp = hp.H, hp.H_prime
    if hp.regime == "both-short":
        bounds = [2 - 2 * H - Hp, 2 - H - 2 * Hp]
    elif hp.regime == "mixed":
        bounds = [1 - Hp, 1.5 - H - Hp]
    else:
        bounds = [1.5 - H - Hp]
    return {"regime": hp.regime, "bounds": bounds, "self_similar": 1.0 - H}


@dataclass
class ScalingReport:
    T0_values: List[float]
    J_values: List[float]
    slope: float
    self_similar: float
    bound_exponents: List[float]
    regime: str
    tolerance: float
    passed: bool


def kappa_scaling_check(hp: HurstPair, a1: float, a2: float, T0_list: Sequence[float],
                        N: int = 2048, tolerance: float = 0.15) -> ScalingReport:
    """Log-log slope of J(T0) against T0"""
    T0_values = sorted(set(float(T0) for T0 in T0_list))
    if len(T0_values) < 2:
        raise ValidationError("need at least two distinct T0 values", check="scaling.T0_list")

    J_values = [kappa_weighted_integral(kappa_profile(hp, a1, a2, T0, N), hp.H)
                for T0 in T0_values]
    slope = float(np.polyfit(np.log(T0_values), np.log(J_values), 1)[0])
    exps = scaling_exponents(hp)
    self_similar = float(exps["self_similar"])
    return ScalingReport(
        T0_values=T0_values,
        J_values=J_values,
        slope=slope,
        self_similar=self_similar,
        bound_exponents=list(exps["bounds"]),
        regime=str(exps["regime"]),
        tolerance=tolerance,
        passed=abs(slope - self_similar) <= tolerance,
    )


@dataclass
class BoundReport:
    H: float
    N: int
    sup_ratio: float
    inf_ratio: float
    upper_shape: str
    lower_shape: str


def kernel_bound_diagnostic(H: float, grid: TimeGrid) -> BoundReport:
    """
    sup |K_H| over an upper-bound shape and inf |K_H| over a lower-bound
    shape, both over the tabulated points

    upper: s^(1/2-H) (t-s)^(H-1/2) for H >= 1/2, s^(H-1/2) (t-s)^(H-1/2) for H < 1/2
    lower: (t-s)^(H-1/2) for H >= 1/2, t^(H-1/2) s^(1/2-H) (t-s)^(H-1/2) for H < 1/2

    For H < 1/2 the upper shape keeps the diagonal singularity of K_H, so
    the ratio stays bounded as the grid is refined.
    """
    table = kernel_table(H, grid)
    i_idx, j_idx = np.tril_indices(grid.N + 1, k=-1, m=grid.N)
    t = grid.nodes[i_idx]
    s = grid.midpoints[j_idx]
    k_abs = np.abs(table.values[i_idx, j_idx])

    if H >= 0.5:
        upper_shape = s ** (0.5 - H) * (t - s) ** (H - 0.5)
        upper_label = "s^(1/2-H) (t-s)^(H-1/2)"
        lower_shape = (t - s) ** (H - 0.5)
        label = "(t-s)^(H-1/2)"
    else:
        upper_shape = s ** (H - 0.5) * (t - s) ** (H - 0.5)
        upper_label = "s^(H-1/2) (t-s)^(H-1/2)"
        lower_shape = t ** (H - 0.5) * s ** (0.5 - H) * (t - s) ** (H - 0.5)
        label = "t^(H-1/2) s^(1/2-H) (t-s)^(H-1/2)"

    return BoundReport(
        H=H,
        N=grid.N,
        sup_ratio=float(np.max(k_abs / upper_shape)),
        inf_ratio=float(np.min(k_abs / lower_shape)),
        upper_shape=upper_label,
        lower_shape=label,
    )
