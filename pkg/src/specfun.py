#!/usr/bin/env python3
"""
Special functions used by the kernel, the fractional operators and the
Girsanov construction: Gamma, Beta, Gauss hypergeometric 2F1 on z <= 0 and
the two-parameter Mittag-Leffler function.

Gamma and Beta come from scipy.special; 2F1 and Mittag-Leffler are series
with term-ratio stopping so that truncation is controlled by SpecFunConfig.
"""

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np
from scipy import special

from utils.errors import ConvergenceError, DomainError, ValidationError

ArrayLike = Union[float, np.ndarray]

# c - a - b closer than this to an integer makes the 1-w connection formula
# singular; the direct series is used instead
_INTEGER_GAP = 1e-8

# |x|^(1/a) past which E_{a,b}(x), x < 0, leaves the series for the
# algebraic expansion; both carry an error near exp(-ML_TAIL_ONSET) there
ML_TAIL_ONSET = 20.0


@dataclass(frozen=True)
class SpecFunConfig:
    """Series truncation settings"""

    series_tol: float = 1e-15
    max_terms: int = 4096

    def __post_init__(self):
        if not 0.0 < self.series_tol <= 1e-6:
            raise ValidationError(
                f"series_tol must lie in (0, 1e-6], got {self.series_tol}",
                check="SpecFunConfig.series_tol",
            )
        if self.max_terms < 64:
            raise ValidationError(
                f"max_terms must be >= 64, got {self.max_terms}",
                check="SpecFunConfig.max_terms",
            )


DEFAULT_CONFIG = SpecFunConfig()


def _as_array(x: ArrayLike):
    arr = np.asarray(x, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _restore(values: np.ndarray, scalar: bool) -> ArrayLike:
    return float(values[0]) if scalar else values


def gamma_fn(x: ArrayLike) -> ArrayLike:
    """Gamma function for x > 0"""
    arr, scalar = _as_array(x)
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise DomainError(f"gamma_fn needs x > 0, got {x}", check="gamma_fn.domain")
    return _restore(special.gamma(arr), scalar)


def beta_fn(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    """Beta function B(a, b) = Γ(a)Γ(b)/Γ(a+b) for a, b > 0"""
    arr_a, scalar_a = _as_array(a)
    arr_b, scalar_b = _as_array(b)
    if np.any(arr_a <= 0) or np.any(arr_b <= 0):
        raise DomainError(f"beta_fn needs a, b > 0, got ({a}, {b})", check="beta_fn.domain")
    return _restore(special.beta(arr_a, arr_b), scalar_a and scalar_b)


def hyp2f1_series(a: float, b: float, c: float, z: ArrayLike,
                  config: SpecFunConfig = DEFAULT_CONFIG) -> ArrayLike:
    """
    Direct Gauss series sum (a)_n (b)_n / ((c)_n n!) z^n for |z| < 1

    Stops once every |term| <= series_tol * |partial sum|.
    """
    x, scalar = _as_array(z)
    if np.any(np.abs(x) >= 1.0):
        raise DomainError("hyp2f1_series needs |z| < 1", check="hyp2f1.series_domain")

    total = np.ones_like(x)
    term = np.ones_like(x)
    for n in range(config.max_terms):
        term = term * ((a + n) * (b + n) / ((c + n) * (n + 1.0))) * x
        total = total + term
        if np.all(np.abs(term) <= config.series_tol * np.abs(total)):
            return _restore(total, scalar)

    raise ConvergenceError(
        f"2F1({a}, {b}; {c}) series did not converge in {config.max_terms} terms "
        f"(max |z| = {np.max(np.abs(x)):.6f})",
        check="hyp2f1.series",
    )


def _hyp2f1_near_one(a: float, b: float, c: float, w: np.ndarray,
                     config: SpecFunConfig) -> np.ndarray:
    """2F1(a, b; c; w) for w in (1/2, 1) through the 1 - w connection formula"""
    s = c - a - b
    if abs(s - round(s)) < _INTEGER_GAP:
        return np.asarray(hyp2f1_series(a, b, c, w, config))

    one_minus = 1.0 - w
    first = (special.gamma(c) * special.gamma(s) * special.rgamma(c - a) * special.rgamma(c - b)
             * np.asarray(hyp2f1_series(a, b, 1.0 - s, one_minus, config)))
    second = (special.gamma(c) * special.gamma(-s) * special.rgamma(a) * special.rgamma(b)
              * one_minus ** s
              * np.asarray(hyp2f1_series(c - a, c - b, 1.0 + s, one_minus, config)))
    return first + second


def hyp2f1(a: float, b: float, c: float, z: ArrayLike,
           config: SpecFunConfig = DEFAULT_CONFIG) -> ArrayLike:
    """
    Gauss hypergeometric function 2F1(a, b; c; z) for z <= 0

    Every argument is first mapped by the Pfaff transformation
        2F1(a, b; c; z) = (1 - z)^(-a) 2F1(a, c - b; c; w),  w = z / (z - 1)
    so that w lies in [0, 1) however negative z is. w <= 1/2 uses the direct
    series; w > 1/2 uses the connection formula around w = 1.

    Args:
        a, b: Upper parameters
        c: Lower parameter, c > 0
        z: Argument(s), all <= 0
        config: Series truncation settings

    Returns:
        Scalar for scalar z, otherwise an array of the same shape
    """
    if c <= 0:
        raise DomainError(f"hyp2f1 needs c > 0, got {c}", check="hyp2f1.domain")
    x, scalar = _as_array(z)
    if np.any(x > 0) or not np.all(np.isfinite(x)):
        raise DomainError("hyp2f1 is only defined here for finite z <= 0",
                          check="hyp2f1.domain")
    if a == 0 or b == 0:
        return _restore(np.ones_like(x), scalar)

    w = x / (x - 1.0)
    reduced = np.empty_like(x)
    near_zero = w <= 0.5
    if np.any(near_zero):
        reduced[near_zero] = hyp2f1_series(a, c - b, c, w[near_zero], config)
    if np.any(~near_zero):
        reduced[~near_zero] = _hyp2f1_near_one(a, c - b, c, w[~near_zero], config)

    return _restore((1.0 - x) ** (-a) * reduced, scalar)


def _mittag_leffler_tail(a: float, b: float, x: np.ndarray, config: SpecFunConfig) -> np.ndarray:
    """
    E_{a,b}(x) ~ -sum_{k>=1} x^(-k) / Γ(b - a k) for x -> -inf and 0 < a < 1

    Each entry stops at the first growing term (optimal truncation) or once
    terms fall below series_tol relative to the partial sum.
    """
    total = np.zeros_like(x)
    previous = np.full_like(x, np.inf)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, config.max_terms + 1):
        weight = special.rgamma(b - a * k)
        if weight == 0:
            continue
        term = -weight * x ** (-float(k))
        magnitude = np.abs(term)
        active &= magnitude <= previous
        total = np.where(active, total + term, total)
        active &= magnitude > config.series_tol * np.abs(total)
        if not np.any(active):
            break
        previous = np.where(active, magnitude, previous)
    return total


def mittag_leffler(a: float, b: float, x: ArrayLike,
                   config: SpecFunConfig = DEFAULT_CONFIG) -> ArrayLike:
    """
    Two-parameter Mittag-Leffler function E_{a,b}(x) = sum x^n / Γ(a n + b)

    Terms are formed in log space; the sum stops once terms are past their
    peak and below series_tol relative to the partial sum. For 0 < a < 1 the
    alternating series cancels like exp(|x|^(1/a)) on the negative axis, so
    arguments with |x|^(1/a) > ML_TAIL_ONSET use the algebraic expansion.
    """
    if a <= 0 or b <= 0:
        raise DomainError(f"mittag_leffler needs a, b > 0, got ({a}, {b})",
                          check="mittag_leffler.domain")
    arr, scalar = _as_array(x)
    tail = (arr < 0) & (np.abs(arr) ** (1.0 / a) > ML_TAIL_ONSET)
    if a >= 1:
        tail[:] = False
    tail_values = _mittag_leffler_tail(a, b, arr[tail], config) if np.any(tail) else None
    arr = np.where(tail, 0.0, arr)
    total = np.full_like(arr, special.rgamma(b))

    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(arr))
    negative = arr < 0
    previous = np.abs(total)

    for n in range(1, config.max_terms + 1):
        with np.errstate(invalid="ignore"):
            magnitude = np.exp(n * log_abs - special.gammaln(a * n + b))
        magnitude = np.where(arr == 0, 0.0, magnitude)
        sign = np.where(negative & (n % 2 == 1), -1.0, 1.0)
        total = total + sign * magnitude
        done = (magnitude <= previous) & (magnitude <= config.series_tol * np.abs(total))
        if np.all(done | (magnitude == 0)):
            if tail_values is not None:
                total[tail] = tail_values
            return _restore(total, scalar)
        previous = magnitude

    raise ConvergenceError(
        f"E_{{{a},{b}}} series did not converge in {config.max_terms} terms",
        check="mittag_leffler.series",
    )


def mittag_leffler_bound_fit(a: float, b: float, xs: Iterable[float],
                             m2: float = 1.5) -> float:
    """
    Smallest M1 with |E_{a,b}(x)| <= M1 exp(M2 |x|^(1/a)) on the sample points

    The exponential bound holds for any M2 > 1 with some M1 > 0.
    """
    if m2 <= 1:
        raise ValidationError(f"M2 must exceed 1, got {m2}", check="mittag_leffler.M2")
    points = np.asarray(list(xs), dtype=float)
    values = np.abs(np.asarray(mittag_leffler(a, b, points)))
    envelope = np.exp(m2 * np.abs(points) ** (1.0 / a))
    return float(np.max(values / envelope))
