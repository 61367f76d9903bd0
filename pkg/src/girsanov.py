#!/usr/bin/env python3
"""
Girsanov change of measure for the mixed noise a1 B^H1 + a2 B^H2.

Given h (typically the drift along a path) we look for (u, v) with

    a1 u + a2 v = A^{-1} h =: g                              (A1)
    K_H1^{-1} ∫_0 u = K_H2^{-1} ∫_0 v =: ψ                   (A2)

Writing p for the component attached to the smaller Hurst index and q for
the other, (A2) gives q = P p with P = (d/dt K_Hq) ∘ K_Hp^{-1}∫, so
(c_p + c_q P) p = g.

P is a Volterra operator of positive order |Hq - Hp|. On the grid it is a
lower-triangular matrix with an empty first row ((Pp)(0) = 0). Splitting
off its diagonal, M = c_p + c_q diag(P) and L the strictly lower part,

    p = Σ_n (-c_q M^{-1} L)^n M^{-1} g

and the series terminates after at most N+1 terms. When the terms grow so
large that the alternating sum loses its digits, the same triangular system
is solved by forward substitution instead. q is then taken from (A1) and
ψ = K_Hp^{-1} ∫ p.

Cases by Hurst pair:
    case1-h-half      one index equals 1/2
    case2-both-short  both < 1/2
    case3-mixed       one < 1/2 < other
    case4-both-long   both > 1/2
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional

import numpy as np
from scipy import linalg

from fraccalc import (GridFunction, apply_chain, forward_chain, inverse_chain,
                      simplify_chain)
from kernel import HurstPair, TimeGrid
from sde import MixedSdeSpec
from noise import NoiseBundle
from utils.console import warn
from utils.errors import ConvergenceError, ValidationError

DEFAULT_TOL = 1e-10
MAX_TERMS = 512
# series terms beyond this multiple of the first one cancel away the tolerance
GROWTH_LIMIT = 1e4
# A2 is measured on t >= RESIDUAL_WINDOW * T, away from the weight singularities at 0
RESIDUAL_WINDOW = 0.1
# above this the Novikov exponent overflows double precision
NOVIKOV_EXPONENT_LIMIT = 700.0


def classify(hp: HurstPair) -> str:
    """Case tag of a Hurst pair"""
    if abs(hp.h1 - hp.h2) < 1e-12:
        raise ValidationError("equal Hurst indices are not supported by the Girsanov construction",
                              check="girsanov.equal_hurst")
    if abs(hp.h1 - 0.5) < 1e-12 or abs(hp.h2 - 0.5) < 1e-12:
        return "case1-h-half"
    if hp.H_prime < 0.5:
        return "case2-both-short"
    if hp.H > 0.5:
        return "case4-both-long"
    return "case3-mixed"


@dataclass
class _Operators:
    """Chains for one Hurst pair with the primary component p = smaller index"""

    primary: int           # 1 or 2
    c_p: float
    c_q: float
    H_p: float
    H_q: float
    inv_p: list = field(default_factory=list)
    inv_p_scale: float = 1.0


def _operators(hp: HurstPair, a1: float, a2: float) -> _Operators:
    if hp.h1 < hp.h2:
        primary, c_p, c_q, H_p, H_q = 1, a1, a2, hp.h1, hp.h2
    else:
        primary, c_p, c_q, H_p, H_q = 2, a2, a1, hp.h2, hp.h1
    inv_p, s_inv_p = inverse_chain(H_p, absolutely_continuous=True)
    return _Operators(primary=primary, c_p=c_p, c_q=c_q, H_p=H_p, H_q=H_q,
                      inv_p=inv_p, inv_p_scale=s_inv_p)


def _apply(steps, scale: float, x: np.ndarray, grid: TimeGrid) -> np.ndarray:
    return scale * apply_chain(steps, x, grid)


@lru_cache(maxsize=8)
def coupling_matrix(H_p: float, H_q: float, grid: TimeGrid) -> np.ndarray:
    """
    P = (d/dt K_Hq) ∘ K_Hp^{-1}∫ as a lower-triangular matrix

    The weight extrapolation at t = 0 leaks a few entries above the diagonal
    in the first rows; they are dropped together with row 0.
    """
    inv_p, s_inv = inverse_chain(H_p, absolutely_continuous=True)
    fwd_q, s_fwd = forward_chain(H_q)
    P = np.tril(_apply(simplify_chain(inv_p + fwd_q), s_inv * s_fwd, np.eye(grid.N + 1), grid))
    P[0, :] = 0.0
    P.setflags(write=False)
    return P


@dataclass
class _Solution:
    p: np.ndarray
    q: np.ndarray
    psi: np.ndarray
    terms: int
    term_norms: List[float]
    remainder: np.ndarray
    solver: str


def _solve(ops: _Operators, g: np.ndarray, grid: TimeGrid, tol: float,
           max_terms: int, fallback: bool = True) -> _Solution:
    """Solve (c_p + c_q P) p = g for every column of g, shape (N+1, m)"""
    P = coupling_matrix(ops.H_p, ops.H_q, grid)
    diagonal = ops.c_p + ops.c_q * np.diag(P)
    if np.any(np.abs(diagonal) < 1e-12 * abs(ops.c_p)):
        raise ConvergenceError("c_p + c_q P is singular on the grid diagonal",
                               check="girsanov.diagonal")
    lower = P - np.diag(np.diag(P))
    scale = np.max(np.abs(g), axis=0)
    active = scale > 0

    term = g / diagonal[:, None]
    p = term.copy()
    norms = [float(np.max(np.abs(term)))]
    terms = 1
    solver = "neumann"
    while np.any(active):
        term = -ops.c_q * (lower @ term) / diagonal[:, None]
        p += term
        terms += 1
        sup = np.max(np.abs(term), axis=0)
        norms.append(float(np.max(sup)))
        if np.all(sup[active] < tol * scale[active]):
            break
        blown = not np.all(np.isfinite(sup)) or norms[-1] > GROWTH_LIMIT * norms[0]
        if blown or terms >= max_terms:
            reason = (f"terms grew to {norms[-1]:.3e}" if blown
                      else f"tol {tol:g} not reached in {max_terms} terms")
            if not fallback:
                raise ConvergenceError(
                    f"Neumann series stopped: {reason} (c_q/c_p = {ops.c_q / ops.c_p:.3f})",
                    check="girsanov.neumann",
                )
            system = ops.c_p * np.eye(grid.N + 1) + ops.c_q * P
            p = linalg.solve_triangular(system, g, lower=True)
            solver = "triangular"
            break

    q = (g - ops.c_p * p) / ops.c_q
    psi = _apply(ops.inv_p, ops.inv_p_scale, p, grid)
    leading = _apply(ops.inv_p, ops.inv_p_scale, g / diagonal[:, None], grid)
    return _Solution(p, q, psi, terms, norms, psi - leading, solver)


def _split(ops: _Operators, p: np.ndarray, q: np.ndarray):
    return (p, q) if ops.primary == 1 else (q, p)


@dataclass
class PsiBundle:
    """Solution of (A1)-(A2) for one h"""

    grid: TimeGrid
    u: np.ndarray           # (N+1, d)
    v: np.ndarray
    psi: GridFunction
    case: str
    truncation_terms: int
    term_norms: List[float]
    residual_a1: float
    residual_a2: float
    series_remainder: float  # sup t^(H-1/2) |ψ - ψ of the leading term|
    solver: str = "neumann"  # or "triangular" when the series was abandoned


def _a1_residual(A: np.ndarray, a1: float, a2: float, u: np.ndarray, v: np.ndarray,
                 h: GridFunction) -> float:
    """sup_t |A (a1 u_t + a2 v_t) - h(t)|"""
    target = h.samples if h.samples.ndim == 2 else h.samples[:, None]
    return float(np.max(np.abs((a1 * u + a2 * v) @ A.T - target)))


def _a2_residual(hp: HurstPair, u: np.ndarray, v: np.ndarray,
                 grid: TimeGrid, window: float) -> float:
    s1, sc1 = inverse_chain(hp.h1, absolutely_continuous=True)
    s2, sc2 = inverse_chain(hp.h2, absolutely_continuous=True)
    lhs = _apply(s1, sc1, u, grid)
    rhs = _apply(s2, sc2, v, grid)
    start = int(math.ceil(window * grid.N))
    return float(np.max(np.abs(lhs[start:] - rhs[start:])))


def _as_columns(h: GridFunction, A: np.ndarray) -> np.ndarray:
    samples = h.samples if h.samples.ndim == 2 else h.samples[:, None]
    if samples.shape[1] != A.shape[0]:
        raise ValidationError(f"h has {samples.shape[1]} components, A is {A.shape[0]}x{A.shape[0]}",
                              check="girsanov.dimension")
    return linalg.solve(A, samples.T).T


def construct_psi(hp: HurstPair, a1: float, a2: float, A: np.ndarray, h: GridFunction,
                  tol: float = DEFAULT_TOL, max_terms: int = MAX_TERMS,
                  residual_window: float = RESIDUAL_WINDOW, fallback: bool = True) -> PsiBundle:
    """
    Build ψ for one function h

    Args:
        hp: Hurst pair (indices must differ)
        a1, a2: Noise coefficients, both non-zero
        A: Invertible d x d noise matrix
        h: Grid function with d components
        tol: Stop when sup|term| < tol sup|A^{-1} h|
        max_terms: Series cap
        residual_window: (A2) is measured on t >= residual_window T
        fallback: Solve the triangular system directly when the series stalls
            or its terms grow; without it ConvergenceError is raised

    Returns:
        PsiBundle with u, v, ψ and the (A1)/(A2) residuals
    """
    if not 0.0 < tol <= 1e-4:
        raise ValidationError(f"tol must lie in (0, 1e-4], got {tol}", check="girsanov.tol")
    if a1 == 0 or a2 == 0:
        raise ValidationError("a1 and a2 must both be non-zero", check="girsanov.coefficients")
    case = classify(hp)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    grid = h.grid
    g = _as_columns(h, A)

    if not np.any(g):
        zeros = np.zeros_like(g)
        return PsiBundle(grid, zeros, zeros.copy(), GridFunction(grid, zeros.copy()), case,
                         0, [0.0], 0.0, 0.0, 0.0)

    ops = _operators(hp, a1, a2)
    sol = _solve(ops, g, grid, tol, max_terms, fallback)
    u, v = _split(ops, sol.p, sol.q)

    residual_a1 = _a1_residual(A, a1, a2, u, v, h)
    residual_a2 = _a2_residual(hp, u, v, grid, residual_window)
    weight = np.ones(grid.N + 1)
    weight[1:] = grid.nodes[1:] ** (hp.H - 0.5)
    remainder = float(np.max(weight[1:, None] * np.abs(sol.remainder[1:])))
    return PsiBundle(grid, u, v, GridFunction(grid, sol.psi), case, sol.terms, sol.term_norms,
                     residual_a1, residual_a2, remainder, sol.solver)


def construct_psi_batch(hp: HurstPair, a1: float, a2: float, A: np.ndarray, h: np.ndarray,
                        grid: TimeGrid, tol: float = DEFAULT_TOL,
                        max_terms: int = MAX_TERMS) -> np.ndarray:
    """
    ψ for many paths at once

    h has shape (n, N+1, d); the result has the same shape.
    """
    classify(hp)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n, _, d = h.shape
    g = h @ np.linalg.inv(A).T                                # (n, N+1, d)
    columns = np.transpose(g, (1, 0, 2)).reshape(grid.N + 1, n * d)
    sol = _solve(_operators(hp, a1, a2), columns, grid, tol, max_terms)
    return np.transpose(sol.psi.reshape(grid.N + 1, n, d), (1, 0, 2))


def collocation_solve(hp: HurstPair, a1: float, a2: float, A: np.ndarray,
                      h: GridFunction) -> PsiBundle:
    """
    Reference solution: dense LU solve of (c_p I + c_q P) p = g

    O(N^3); meant for N up to a few hundred.
    """
    case = classify(hp)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    grid = h.grid
    g = _as_columns(h, A)
    ops = _operators(hp, a1, a2)

    P = coupling_matrix(ops.H_p, ops.H_q, grid)
    p = linalg.solve(ops.c_p * np.eye(grid.N + 1) + ops.c_q * P, g)
    q = (g - ops.c_p * p) / ops.c_q
    psi = _apply(ops.inv_p, ops.inv_p_scale, p, grid)
    u, v = _split(ops, p, q)
    residual_a1 = _a1_residual(A, a1, a2, u, v, h)
    residual_a2 = _a2_residual(hp, u, v, grid, RESIDUAL_WINDOW)
    return PsiBundle(grid, u, v, GridFunction(grid, psi), case, 0, [], residual_a1,
                     residual_a2, 0.0, "dense")


@dataclass
class ShapeReport:
    weighted_sup: float   # sup_t t^(H-1/2) |ψ_t|
    h_sup: float
    constant: float       # weighted_sup / sup|h|


def psi_shape_check(bundle: PsiBundle, hp: HurstPair, h: GridFunction) -> ShapeReport:
    """Size of ψ against the envelope C sup|h| t^(1/2-H)"""
    t = bundle.grid.nodes[1:]
    norms = np.linalg.norm(np.atleast_2d(bundle.psi.samples.T).T[1:], axis=-1)
    weighted = float(np.max(t ** (hp.H - 0.5) * norms))
    h_sup = h.sup()
    return ShapeReport(weighted, h_sup, weighted / h_sup if h_sup > 0 else 0.0)


@dataclass
class NovikovReport:
    exponent: float
    value: float
    finite: bool


def _half_energy(psi: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """½ ∫ |ψ|^2 dt by the trapezoid rule over the time axis (-2)"""
    sq = np.sum(psi ** 2, axis=-1)
    return 0.5 * grid.dt * (np.sum(sq, axis=-1) - 0.5 * (sq[..., 0] + sq[..., -1]))


def novikov_estimate(bundle: PsiBundle) -> NovikovReport:
    """exp(½ ∫_0^T |ψ_t|^2 dt)"""
    psi = bundle.psi.samples
    if psi.ndim == 1:
        psi = psi[:, None]
    exponent = float(_half_energy(psi, bundle.grid))
    if exponent > NOVIKOV_EXPONENT_LIMIT:
        warn(f"Novikov exponent {exponent:.1f} overflows; reporting infinity")
        return NovikovReport(exponent, math.inf, False)
    return NovikovReport(exponent, math.exp(exponent), True)


@dataclass
class NovikovEnsemble:
    mean: float
    std_err: float
    finite: bool


def novikov_ensemble(psi: np.ndarray, grid: TimeGrid) -> NovikovEnsemble:
    """Monte Carlo E exp(½ ∫ |ψ|^2) over paths; psi is (n, N+1, d)"""
    exponents = _half_energy(psi, grid)
    if np.max(exponents) > NOVIKOV_EXPONENT_LIMIT:
        warn("Novikov exponent overflows on some paths; reporting infinity")
        return NovikovEnsemble(math.inf, math.inf, False)
    values = np.exp(exponents)
    se = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return NovikovEnsemble(float(np.mean(values)), se, True)


def drift_to_h(spec: MixedSdeSpec, noise: NoiseBundle) -> GridFunction:
    """h_t = b(t, x0 + A(a1 B1_t + a2 B2_t)) along a noise path"""
    x = spec.x0 + spec.noise_term(noise.B1, noise.B2)
    t = noise.grid.nodes
    return GridFunction(noise.grid, spec.drift.evaluate(t, x))


def mittag_leffler_profile(hp: HurstPair, a1: float, a2: float, T: float) -> Optional[dict]:
    """
    Parameters of the Mittag-Leffler function that controls the Neumann sum

    The n-th term carries the fractional order n |H1 - H2|, so the series is
    bounded by E_{|H1-H2|, 1}(c |a_q / a_p| T^|H1-H2|) up to constants.
    """
    order = abs(hp.h1 - hp.h2)
    if order == 0:
        return None
    ratio = abs(a2 / a1) if hp.h1 < hp.h2 else abs(a1 / a2)
    return {"order": order, "argument": ratio * T ** order}
