"""Particle-filter estimate of a static target's position with an optional GMM context prior."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .world import StaticMap


class InconsistentObservation(RuntimeError):
    """Every hypothesis has been ruled out and there is nowhere left to put the target."""


@dataclass(frozen=True)
class GaussianComponent:
    pi: float
    mu: tuple[float, float]
    sigma: tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class ContextPrior:
    components: tuple[GaussianComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("context prior needs at least one component")
        total = sum(c.pi for c in self.components)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"mixing coefficients sum to {total}, expected 1")
        for i, c in enumerate(self.components):
            if c.pi < 0:
                raise ValueError(f"component {i}: negative mixing coefficient")
            s = np.asarray(c.sigma, dtype=float)
            if s.shape != (2, 2) or not np.allclose(s, s.T):
                raise ValueError(f"component {i}: covariance must be a symmetric 2x2 matrix")
            if np.any(np.linalg.eigvalsh(s) <= 0):
                raise ValueError(f"component {i}: covariance is not positive definite")

    @classmethod
    def from_records(cls, records) -> "ContextPrior":
        comps = []
        for r in records:
            sig = np.asarray(r["sigma"], dtype=float).reshape(2, 2)
            comps.append(GaussianComponent(float(r["pi"]), tuple(map(float, r["mu"])),
                                           tuple(tuple(map(float, row)) for row in sig)))
        return cls(tuple(comps))


@dataclass(frozen=True)
class SensingModel:
    p_detect: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.p_detect <= 1.0:
            raise ValueError(f"p_detect must be in (0, 1], got {self.p_detect}")


@dataclass
class ParticleSet:
    positions: np.ndarray  # (N, 2) metres
    weights: np.ndarray  # (N,)
    component: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.weights)

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


def _cells(static_map: StaticMap, positions: np.ndarray):
    res = static_map.resolution
    ix = np.floor(positions[:, 0] / res).astype(np.int64)
    iy = np.floor(positions[:, 1] / res).astype(np.int64)
    return ix, iy


def _in_free(static_map: StaticMap, positions: np.ndarray) -> np.ndarray:
    ix, iy = _cells(static_map, positions)
    ok = (ix >= 0) & (ix < static_map.width) & (iy >= 0) & (iy < static_map.height)
    out = np.zeros(len(positions), dtype=bool)
    out[ok] = static_map.free[iy[ok], ix[ok]]
    return out


def _uniform_in_cells(static_map: StaticMap, flat_cells: np.ndarray, count: int, rng) -> np.ndarray:
    picks = flat_cells[rng.integers(0, len(flat_cells), size=count)]
    iy, ix = np.divmod(picks, static_map.width)
    offs = rng.random((count, 2))
    return np.column_stack([ix + offs[:, 0], iy + offs[:, 1]]) * static_map.resolution


def init_particles(static_map: StaticMap, count: int, prior: ContextPrior | None = None,
                   seed=None, max_retries: int = 100) -> ParticleSet:
    """Draw ``count`` equally weighted particles from ``prior`` (or uniformly over free cells).

    GMM draws landing outside free space are redrawn up to ``max_retries``
    times, then moved to the centre of the nearest free cell.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    free_flat = np.flatnonzero(static_map.free.ravel())
    if free_flat.size == 0:
        raise InconsistentObservation("search region has no free cells")
    weights = np.full(count, 1.0 / count)
    if prior is None:
        return ParticleSet(_uniform_in_cells(static_map, free_flat, count, rng), weights)

    pis = np.array([c.pi for c in prior.components])
    comp = rng.choice(len(pis), size=count, p=pis / pis.sum())
    pos = np.empty((count, 2))
    for k, c in enumerate(prior.components):
        sel = np.flatnonzero(comp == k)
        mu, cov = np.asarray(c.mu), np.asarray(c.sigma)
        pending = sel
        for _ in range(max_retries + 1):
            if pending.size == 0:
                break
            pos[pending] = rng.multivariate_normal(mu, cov, size=pending.size)
            pending = pending[~_in_free(static_map, pos[pending])]
        if pending.size:
            pos[pending] = _nearest_free_centres(static_map, pos[pending])
    return ParticleSet(pos, weights, comp)


def _nearest_free_centres(static_map: StaticMap, positions: np.ndarray) -> np.ndarray:
    _, (ny, nx) = ndimage.distance_transform_edt(static_map.cells, return_indices=True)
    ix, iy = _cells(static_map, positions)
    ix = np.clip(ix, 0, static_map.width - 1)
    iy = np.clip(iy, 0, static_map.height - 1)
    fx, fy = nx[iy, ix], ny[iy, ix]
    return np.column_stack([fx + 0.5, fy + 0.5]) * static_map.resolution


def predict(particles: ParticleSet, static_map: StaticMap, noise_sigma: float, seed=None) -> ParticleSet:
    """Static-target motion model: Gaussian jitter, kept only where it lands in free space."""
    if len(particles) == 0:
        raise ValueError("empty particle set")
    if noise_sigma <= 0:
        return ParticleSet(particles.positions.copy(), particles.weights.copy(), particles.component)
    rng = np.random.default_rng(seed)
    moved = particles.positions + rng.normal(0.0, noise_sigma, size=particles.positions.shape)
    ok = _in_free(static_map, moved)
    pos = np.where(ok[:, None], moved, particles.positions)
    return ParticleSet(pos, particles.weights.copy(), particles.component)


def systematic_resample(particles: ParticleSet, rng) -> ParticleSet:
    n = len(particles)
    cdf = np.cumsum(particles.weights)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(cdf, u, side="right")
    comp = None if particles.component is None else particles.component[idx]
    return ParticleSet(particles.positions[idx].copy(), np.full(n, 1.0 / n), comp)


def update(particles: ParticleSet, static_map: StaticMap, fov_cells, detected, model: SensingModel,
           seed=None, resample_ratio: float = 0.5) -> ParticleSet:
    """Correct the belief with each agent's detection outcome.

    ``fov_cells`` holds one flat-index collection per agent. Particles inside
    the FoV of an agent that saw nothing are down-weighted by ``1 - p_detect``.
    Resamples systematically when the effective sample size drops below
    ``resample_ratio * N``.
    """
    w = particles.weights.copy()
    ix, iy = _cells(static_map, particles.positions)
    flat = iy * static_map.width + ix
    miss = 1.0 - model.p_detect
    for cells, hit in zip(fov_cells, detected):
        if hit:
            continue
        cells = np.asarray(cells, dtype=np.int64)
        if cells.size:
            w[np.isin(flat, cells)] *= miss
    total = w.sum()
    rng = np.random.default_rng(seed)
    if total <= 0.0:
        seen = np.zeros(static_map.n_cells, dtype=bool)
        for cells in fov_cells:
            seen[np.asarray(cells, dtype=np.int64)] = True
        candidates = np.flatnonzero(static_map.free.ravel() & ~seen)
        if candidates.size == 0:
            raise InconsistentObservation("all particles eliminated and no unobserved free cell remains")
        n = len(particles)
        return ParticleSet(_uniform_in_cells(static_map, candidates, n, rng), np.full(n, 1.0 / n))
    out = ParticleSet(particles.positions, w / total, particles.component)
    if out.ess() < resample_ratio * len(out):
        out = systematic_resample(out, rng)
    return out


def belief_grid(particles: ParticleSet, static_map: StaticMap) -> np.ndarray:
    """Particle weight histogram over cells, shape ``(height, width)``, summing to 1."""
    if len(particles) == 0:
        raise ValueError("empty particle set")
    ix, iy = _cells(static_map, particles.positions)
    ix = np.clip(ix, 0, static_map.width - 1)
    iy = np.clip(iy, 0, static_map.height - 1)
    grid = np.bincount(iy * static_map.width + ix, weights=particles.weights,
                       minlength=static_map.n_cells).reshape(static_map.cells.shape)
    return grid / grid.sum()
