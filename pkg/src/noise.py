#!/usr/bin/env python3
"""
Reproducible Gaussian noise and completely correlated fBM pairs.

Both fBMs are driven by the same Brownian increments dW:

    B^H_{t_k} = Σ_j (∫ over cell j of K_H(t_k, s) ds / Δ) dW_j

Every path draws from its own counter-based Philox stream keyed by
(master_seed, stream_id), so results do not depend on thread scheduling.
"""

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from kernel import HurstPair, TimeGrid, kernel_table, product_quadrature
from utils.console import progress
from utils.errors import ValidationError

MIN_CROSS_PATHS = 1000


@dataclass(frozen=True)
class RngSpec:
    """Master seed plus stream id of one independent random stream"""

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.master_seed}:{self.stream_id}".encode()).digest()
        key = int.from_bytes(digest[:16], "little")
        return np.random.Generator(np.random.Philox(key=key))


@dataclass
class NoiseBundle:
    """One path: Brownian increments and the two fBMs they drive"""

    grid: TimeGrid
    dW: np.ndarray   # (N, d)
    B1: np.ndarray   # (N+1, d)
    B2: np.ndarray   # (N+1, d)


@dataclass
class NoiseEnsemble:
    """n independent paths; arrays carry a leading path axis"""

    grid: TimeGrid
    dW: np.ndarray   # (n, N, d)
    B1: np.ndarray   # (n, N+1, d)
    B2: np.ndarray   # (n, N+1, d)

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    def path(self, i: int) -> NoiseBundle:
        return NoiseBundle(self.grid, self.dW[i], self.B1[i], self.B2[i])


def brownian_increments(rng: RngSpec, grid: TimeGrid, d: int) -> np.ndarray:
    """(N, d) independent N(0, Δ) increments"""
    return rng.generator().standard_normal((grid.N, d)) * np.sqrt(grid.dt)


def fbm_from_increments(H: float, grid: TimeGrid, dW: np.ndarray) -> np.ndarray:
    """
    fBM at the grid nodes from Brownian increments

    dW has shape (..., N, d); the result has shape (..., N+1, d). For H = 1/2
    the result is the cumulative sum of dW, bit for bit.
    """
    if H == 0.5:
        zeros = np.zeros(dW.shape[:-2] + (1, dW.shape[-1]))
        return np.concatenate([zeros, np.cumsum(dW, axis=-2)], axis=-2)
    averages = kernel_table(H, grid).averages
    return np.matmul(averages, dW)


def sample_noise(hp: HurstPair, grid: TimeGrid, d: int, rng: RngSpec) -> NoiseBundle:
    """One correlated fBM pair path"""
    if d < 1:
        raise ValidationError(f"dimension must be >= 1, got {d}", check="sample_noise.d")
    dW = brownian_increments(rng, grid, d)
    return NoiseBundle(grid, dW, fbm_from_increments(hp.h1, grid, dW),
                       fbm_from_increments(hp.h2, grid, dW))


def sample_noise_ensemble(hp: HurstPair, grid: TimeGrid, d: int, n_paths: int,
                          master_seed: int, first_stream: int = 0, workers: int = 1,
                          chunk_size: int = 1024, verbose: bool = False) -> NoiseEnsemble:
    """
    n_paths independent paths; path i uses stream first_stream + i

    Chunks of paths are generated on a thread pool and reassembled in order.
    """
    if n_paths < 1:
        raise ValidationError(f"n_paths must be >= 1, got {n_paths}", check="ensemble.n_paths")
    if d < 1:
        raise ValidationError(f"dimension must be >= 1, got {d}", check="ensemble.d")
    # build tables before the pool so workers share the cache entry
    kernel_table(hp.h1, grid)
    kernel_table(hp.h2, grid)

    starts = list(range(0, n_paths, chunk_size))

    def build(start: int):
        stop = min(start + chunk_size, n_paths)
        dW = np.stack([brownian_increments(RngSpec(master_seed, first_stream + i), grid, d)
                       for i in range(start, stop)])
        return dW, fbm_from_increments(hp.h1, grid, dW), fbm_from_increments(hp.h2, grid, dW)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(progress(pool.map(build, starts), desc="paths", total=len(starts),
                              verbose=verbose))

    return NoiseEnsemble(
        grid=grid,
        dW=np.concatenate([p[0] for p in parts]),
        B1=np.concatenate([p[1] for p in parts]),
        B2=np.concatenate([p[2] for p in parts]),
    )


@dataclass
class CrossCovariance:
    times: List[float]
    estimate: np.ndarray     # E[B1_t B2_s]
    std_err: np.ndarray
    quadrature: np.ndarray   # ∫_0^min K_H1(t,u) K_H2(s,u) du


def cross_covariance_mc(hp: HurstPair, grid: TimeGrid, n_paths: int, rng: RngSpec,
                        times: Optional[Sequence[float]] = None, quadrature_cells: int = 4096,
                        workers: int = 1) -> CrossCovariance:
    """
    Monte Carlo E[B1_t B2_s] from n_paths fresh paths, first component

    Paths use streams rng.stream_id, rng.stream_id + 1, ... of rng.master_seed.
    times defaults to (T/2, T).
    """
    if n_paths < MIN_CROSS_PATHS:
        raise ValidationError(f"cross covariance needs at least {MIN_CROSS_PATHS} paths, "
                              f"got {n_paths}", check="cross_covariance.n_paths")
    ens = sample_noise_ensemble(hp, grid, 1, n_paths, rng.master_seed,
                                first_stream=rng.stream_id, workers=workers)
    return ensemble_cross_covariance(hp, ens, times or [grid.T / 2, grid.T], quadrature_cells)


def ensemble_cross_covariance(hp: HurstPair, ens: NoiseEnsemble, times: Sequence[float],
                              quadrature_cells: int = 4096) -> CrossCovariance:
    """E[B1_t B2_s] over an existing ensemble at grid times, first component"""
    idx = [ens.grid.index_of(t) for t in times]
    n_paths = ens.n_paths
    b1 = ens.B1[:, idx, 0]
    b2 = ens.B2[:, idx, 0]

    estimate = b1.T @ b2 / n_paths
    second = (b1 ** 2).T @ (b2 ** 2) / n_paths
    std_err = np.sqrt(np.maximum(second - estimate ** 2, 0.0) / n_paths)

    quad = np.zeros((len(times), len(times)))
    for a, t in enumerate(times):
        for b, s in enumerate(times):
            if t > 0 and s > 0:
                quad[a, b] = product_quadrature(hp.h1, t, hp.h2, s, quadrature_cells)
    return CrossCovariance(list(times), estimate, std_err, quad)


def holder_constant(values: np.ndarray, grid: TimeGrid, gamma: float,
                    max_lag: Optional[int] = None) -> float:
    """
    Empirical γ-Hölder constant max |x_{k+L} - x_k| / (L Δ)^γ over lags L

    values is (N+1,) or (N+1, d); vector values use the Euclidean norm.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    lags = range(1, (max_lag or grid.N) + 1)
    best = 0.0
    for lag in lags:
        jumps = np.linalg.norm(x[lag:] - x[:-lag], axis=1)
        best = max(best, float(np.max(jumps)) / (lag * grid.dt) ** gamma)
    return best
