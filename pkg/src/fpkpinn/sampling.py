"""Collocation sets, weighted KDE priors and density-guided resampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegeneratePriorError, DegenerateSampleError
from .net import MlpParams, forward_batch
from .problems import FpkProblem

log = logging.getLogger(__name__)

MAX_DRAW_ROUNDS = 10_000


@dataclass
class PointSet:
    """Residual, boundary and initial collocation points.

    All points are stored in network input order ``(t, x_1, ..., x_d)``.
    ``residual`` has shape ``(M, n, d+1)``: ``M`` time slices of ``n`` points.
    """

    residual: np.ndarray
    boundary: np.ndarray
    initial: np.ndarray

    @property
    def n_slices(self) -> int:
        return self.residual.shape[0]

    @property
    def per_slice(self) -> int:
        return self.residual.shape[1]

    @property
    def slice_times(self) -> np.ndarray:
        return self.residual[:, 0, 0].copy()

    @property
    def n_residual(self) -> int:
        return self.n_slices * self.per_slice

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    @property
    def n_initial(self) -> int:
        return len(self.initial)

    def residual_flat(self) -> np.ndarray:
        return self.residual.reshape(-1, self.residual.shape[-1])


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _seed_streams(seed, n):
    return [np.random.default_rng(s) for s in seed_sequence(seed).spawn(n)]


def slice_times(problem: FpkProblem, n_slices: int) -> np.ndarray:
    """``n_slices`` equally spaced times covering ``(t0, T]``."""
    span = problem.t_end - problem.t0
    return problem.t0 + span * np.arange(1, n_slices + 1) / n_slices


def uniform_in_box(rng, lo, hi, n) -> np.ndarray:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return lo + (hi - lo) * rng.random((n, len(lo)))


def boundary_in_box(rng, lo, hi, n) -> np.ndarray:
    """Uniform points on the faces of a box, faces picked by area."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    d = len(lo)
    width = hi - lo
    face_area = np.array([np.prod(np.delete(width, k)) for k in range(d)])
    probs = np.repeat(face_area, 2) / (2 * face_area.sum())
    faces = rng.choice(2 * d, size=n, p=probs)
    pts = uniform_in_box(rng, lo, hi, n)
    axis, side = faces // 2, faces % 2
    pts[np.arange(n), axis] = np.where(side == 0, lo[axis], hi[axis])
    return pts


def base_points(problem: FpkProblem, n_per_slice: int, n_slices: int, n_boundary: int,
                n_initial: int, seed) -> PointSet:
    if min(n_per_slice, n_slices, n_boundary, n_initial) <= 0:
        raise ConfigError("all collocation counts must be positive")
    r_res, r_bnd, r_ini = _seed_streams(seed, 3)
    lo, hi = problem.space_lo, problem.space_hi
    times = slice_times(problem, n_slices)
    residual = np.empty((n_slices, n_per_slice, problem.d + 1))
    for m, t in enumerate(times):
        residual[m, :, 0] = t
        residual[m, :, 1:] = uniform_in_box(r_res, lo, hi, n_per_slice)
    boundary = np.empty((n_boundary, problem.d + 1))
    boundary[:, 0] = problem.t0 + (problem.t_end - problem.t0) * r_bnd.random(n_boundary)
    boundary[:, 1:] = boundary_in_box(r_bnd, lo, hi, n_boundary)
    initial = np.empty((n_initial, problem.d + 1))
    initial[:, 0] = problem.t0
    initial[:, 1:] = uniform_in_box(r_ini, lo, hi, n_initial)
    return PointSet(residual, boundary, initial)


def scott_bandwidth(points) -> float:
    """Scott's rule with the pooled spread ``sqrt(mean ||x - mean||^2)``."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    if n < 2:
        raise DegenerateSampleError(f"need at least 2 points for a bandwidth, got {n}")
    spread = math.sqrt(np.mean(np.sum((pts - pts.mean(axis=0)) ** 2, axis=1)))
    if spread == 0.0:
        raise DegenerateSampleError("all points are identical; bandwidth would be zero")
    return spread * n ** (-1.0 / (d + 4))


@dataclass
class KdeModel:
    centers: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,), >= 0
    bandwidth: float

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim == 1:
            self.centers = self.centers[:, None]
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not self.bandwidth > 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.weights.shape != (len(self.centers),):
            raise ConfigError("one weight per center required")
        if not (np.isfinite(self.weights).all() and (self.weights >= 0).all()):
            raise ConfigError("KDE weights must be finite and non-negative")

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @classmethod
    def fit(cls, centers, weights) -> "KdeModel":
        return cls(centers, weights, scott_bandwidth(centers))


def kde_eval(model: KdeModel, x, chunk: int = 2048) -> np.ndarray | float:
    """Weighted Gaussian KDE at one point or a batch of points."""
    pts = np.asarray(x, dtype=np.float64)
    scalar = pts.ndim <= 1 and (pts.size == model.dim)
    pts = pts.reshape(-1, model.dim)
    n, d = model.centers.shape
    h = model.bandwidth
    norm = 1.0 / (n * h ** d * (2 * np.pi) ** (d / 2))
    c = model.centers / h
    c2 = np.sum(c * c, axis=1)
    out = np.empty(len(pts))
    for i in range(0, len(pts), chunk):
        q = pts[i:i + chunk] / h
        r2 = np.sum(q * q, axis=1)[:, None] + c2[None, :] - 2.0 * (q @ c.T)
        np.maximum(r2, 0.0, out=r2)
        out[i:i + chunk] = np.exp(-0.5 * r2) @ model.weights
    out *= norm
    return float(out[0]) if scalar else out


def snapshot_grid(problem: FpkProblem, n: int) -> np.ndarray:
    """Uniform tensor grid over the space box with about ``n`` nodes."""
    if problem.d == 1:
        return np.linspace(problem.space_lo[0], problem.space_hi[0], n)[:, None]
    per_axis = math.ceil(n ** (1.0 / problem.d))
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(problem.space_lo, problem.space_hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def snapshot(params: MlpParams, problem: FpkProblem, t: float, n: int):
    """Grid centers and clamped network densities at time ``t``."""
    centers = snapshot_grid(problem, n)
    inputs = np.column_stack([np.full(len(centers), t), centers])
    u = np.maximum(forward_batch(params, inputs), 0.0)
    return centers, u


def categorical_weights(model: KdeModel, candidates) -> np.ndarray:
    dens = np.atleast_1d(kde_eval(model, candidates))
    total = dens.sum()
    if not total > 0:
        raise DegeneratePriorError("KDE prior has zero mass on every candidate")
    return dens / total


def draw_unique_indices(alpha, n: int, rng) -> np.ndarray:
    """Categorical draws, discarding repeats, until ``n`` distinct indices."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.count_nonzero(alpha > 0) < n:
        raise DegeneratePriorError(
            f"only {np.count_nonzero(alpha > 0)} candidates carry mass, {n} requested")
    chosen: list[int] = []
    seen: set[int] = set()
    for _ in range(MAX_DRAW_ROUNDS):
        for idx in rng.choice(len(alpha), size=n - len(chosen), p=alpha):
            idx = int(idx)
            if idx not in seen:
                seen.add(idx)
                chosen.append(idx)
        if len(chosen) == n:
            return np.asarray(chosen)
    raise DegeneratePriorError(f"could not collect {n} distinct indices")


def resample_slice(model: KdeModel, lo, hi, n_candidates: int, n: int, seed) -> np.ndarray:
    """``n`` distinct candidate points drawn in proportion to the KDE prior."""
    if n_candidates < n:
        raise ConfigError(f"need at least n={n} candidates, got {n_candidates}")
    rng = np.random.default_rng(seed)
    candidates = uniform_in_box(rng, lo, hi, n_candidates)
    alpha = categorical_weights(model, candidates)
    return candidates[draw_unique_indices(alpha, n, rng)]


def resample_points(params: MlpParams, problem: FpkProblem, base: PointSet, seed, *,
                    candidate_factor: int = 10, snapshot_factor: int = 4) -> PointSet:
    """Density-guided residual points, one resampled slice per base slice."""
    n = base.per_slice
    residual = np.empty_like(base.residual)
    seeds = seed_sequence(seed).spawn(base.n_slices)
    fallback = []
    for m, t in enumerate(base.slice_times):
        residual[m, :, 0] = t
        centers, u = snapshot(params, problem, t, snapshot_factor * n)
        try:
            model = KdeModel.fit(centers, u)
            residual[m, :, 1:] = resample_slice(model, problem.space_lo, problem.space_hi,
                                                candidate_factor * n, n, seeds[m])
        except DegeneratePriorError as exc:
            log.debug("slice t=%.6g: %s", t, exc)
            fallback.append(float(t))
            rng = np.random.default_rng(seeds[m])
            residual[m, :, 1:] = uniform_in_box(rng, problem.space_lo, problem.space_hi, n)
    if fallback:
        log.warning("degenerate KDE prior on %d of %d slices (t=%.4g..%.4g); "
                    "those slices use uniform points", len(fallback), base.n_slices,
                    fallback[0], fallback[-1])
    return PointSet(residual, base.boundary, base.initial)


def split_counts(beta: float, n: int) -> tuple[int, int]:
    if not 0 < beta < 1:
        raise ConfigError(f"beta must lie in (0, 1), got {beta}")
    n_res = math.floor(beta * n + 1e-9)
    return n_res, n - n_res


def mixture(resampled: PointSet, base: PointSet, beta: float, seed) -> PointSet:
    """Per slice, ``floor(beta*n)`` resampled points plus the rest from ``base``."""
    if resampled.residual.shape != base.residual.shape:
        raise ConfigError(
            f"slice structure mismatch: {resampled.residual.shape} vs {base.residual.shape}")
    if not np.array_equal(resampled.slice_times, base.slice_times):
        raise ConfigError("resampled and base slices are at different times")
    n_res, n_base = split_counts(beta, base.per_slice)
    rng = np.random.default_rng(seed)
    n = base.per_slice
    out = np.empty_like(base.residual)
    for m in range(base.n_slices):
        out[m, :n_res] = resampled.residual[m, rng.choice(n, n_res, replace=False)]
        out[m, n_res:] = base.residual[m, rng.choice(n, n_base, replace=False)]
    return PointSet(out, base.boundary, base.initial)
