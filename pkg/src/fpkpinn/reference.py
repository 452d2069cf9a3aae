"""Monte Carlo and closed-form reference densities.

Paths are simulated in blocks; block ``i`` draws its normals from
``PCG64(SeedSequence(seed).spawn(n_blocks)[i])`` with numpy's standard normal
sampler, so an ensemble is reproducible bit for bit from ``(seed, block_size)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, DegenerateSampleError
from .problems import FpkProblem
from .sampling import KdeModel, kde_eval, scott_bandwidth

log = logging.getLogger(__name__)

SCHEMES = ("em", "milstein")


@dataclass
class SdeSpec:
    """``dX = b(X, t) dt + sigma(X, t) dB`` with vectorised coefficients.

    ``drift(x, t)`` returns ``(P, d)``; ``noise(x, t)`` returns ``(P, d, m)``;
    ``noise_dx(x, t)`` (scalar equations only) returns ``(P,)``.
    ``initial(rng, n)`` returns ``(n, d)`` starting states.
    """

    d: int
    drift: Callable
    noise: Callable
    initial: Callable
    noise_dx: Optional[Callable] = None

    @classmethod
    def from_problem(cls, problem: FpkProblem) -> "SdeSpec":
        return cls(problem.d, lambda x, t: problem.drift(x, t)[0], problem.noise,
                   problem.sample_initial, problem.noise_dx)

    @classmethod
    def point_start(cls, d, drift, noise, x0, noise_dx=None) -> "SdeSpec":
        x0 = np.asarray(x0, dtype=np.float64).reshape(d)
        return cls(d, drift, noise, lambda rng, n: np.tile(x0, (n, 1)), noise_dx)


@dataclass
class PathEnsemble:
    n_paths: int
    n_steps: int
    dt: float
    t0: float
    record_steps: np.ndarray  # step index of each stored column
    values: np.ndarray  # (n_paths, n_records, d)
    finite: np.ndarray  # (n_paths,) False for paths that blew up

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.record_steps * self.dt

    @property
    def n_exploded(self) -> int:
        return int(np.count_nonzero(~self.finite))

    def states(self, t_index: int) -> np.ndarray:
        """Surviving states at a stored time column."""
        return self.values[self.finite, t_index]


def euler_step(spec: SdeSpec, x, t, dt, dw):
    drift = spec.drift(x, np.full(len(x), t))
    sig = spec.noise(x, np.full(len(x), t))
    return x + drift * dt + np.einsum("pij,pj->pi", sig, dw)


def milstein_step(spec: SdeSpec, x, t, dt, dw):
    """Scalar Milstein step: Euler plus ``1/2 sigma sigma_x (dW^2 - dt)``."""
    if spec.noise_dx is None:
        raise ConfigError("Milstein needs the noise derivative noise_dx")
    tt = np.full(len(x), t)
    sig = spec.noise(x, tt)[:, 0, 0]
    corr = 0.5 * sig * spec.noise_dx(x, tt) * (dw[:, 0] ** 2 - dt)
    return euler_step(spec, x, t, dt, dw) + corr[:, None]


def simulate(spec: SdeSpec, horizon: float, n_steps: int, n_paths: int, seed, *,
             scheme: str = "em", t0: float = 0.0, record_every: int = 1,
             block_size: int = 50_000) -> PathEnsemble:
    if n_steps < 1 or n_paths < 1:
        raise ConfigError("n_steps and n_paths must be >= 1")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if scheme == "milstein":
        if spec.d != 1:
            raise ConfigError("Milstein is implemented for scalar equations only")
        if spec.noise_dx is None:
            raise ConfigError("Milstein needs the noise derivative noise_dx")
    step = milstein_step if scheme == "milstein" else euler_step
    dt = horizon / n_steps
    sqrt_dt = math.sqrt(dt)
    record_steps = np.arange(0, n_steps + 1, record_every)
    if record_steps[-1] != n_steps:
        record_steps = np.append(record_steps, n_steps)
    values = np.empty((n_paths, len(record_steps), spec.d))
    n_blocks = math.ceil(n_paths / block_size)
    seeds = np.random.SeedSequence(seed).spawn(n_blocks)
    m = None
    for b in range(n_blocks):
        lo, hi = b * block_size, min(n_paths, (b + 1) * block_size)
        rng = np.random.default_rng(seeds[b])
        x = np.asarray(spec.initial(rng, hi - lo), dtype=np.float64).reshape(hi - lo, spec.d)
        if m is None:
            m = spec.noise(x[:1], np.array([t0])).shape[2]
        col = 0
        values[lo:hi, col] = x
        col += 1
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n_steps):
                dw = sqrt_dt * rng.standard_normal((hi - lo, m))
                x = step(spec, x, t0 + i * dt, dt, dw)
                if col < len(record_steps) and record_steps[col] == i + 1:
                    values[lo:hi, col] = x
                    col += 1
    finite = np.isfinite(values).all(axis=(1, 2))
    if not finite.all():
        log.warning("%d of %d paths became non-finite and are excluded",
                    np.count_nonzero(~finite), n_paths)
    return PathEnsemble(n_paths, n_steps, dt, t0, record_steps, values, finite)


def euler_maruyama(spec: SdeSpec, horizon: float, n_steps: int, n_paths: int, seed,
                   **kwargs) -> PathEnsemble:
    return simulate(spec, horizon, n_steps, n_paths, seed, scheme="em", **kwargs)


def milstein(spec: SdeSpec, horizon: float, n_steps: int, n_paths: int, seed,
             **kwargs) -> PathEnsemble:
    return simulate(spec, horizon, n_steps, n_paths, seed, scheme="milstein", **kwargs)


def _binned_kde(samples, axes, h, mass, oversample=8):
    """Gaussian KDE on a tensor grid by linear binning and FFT convolution.

    Each grid axis must be uniformly spaced; the binning mesh refines it by
    ``oversample`` so the output nodes coincide with mesh nodes.
    """
    d = len(axes)
    starts, steps, sizes, pads = [], [], [], []
    for ax in axes:
        spacing = (ax[-1] - ax[0]) / (len(ax) - 1) if len(ax) > 1 else h
        k = max(oversample, math.ceil(oversample * spacing / h))
        delta = spacing / k
        pad = math.ceil(7 * h / delta)
        starts.append(ax[0] - pad * delta)
        steps.append(delta)
        sizes.append((len(ax) - 1) * k + 1 + 2 * pad)
        pads.append((pad, k))
    counts = np.zeros(sizes)
    pos = [(samples[:, j] - starts[j]) / steps[j] for j in range(d)]
    base = [np.floor(p).astype(np.int64) for p in pos]
    frac = [p - b for p, b in zip(pos, base)]
    for corner in range(2 ** d):
        idx, w = [], np.ones(len(samples))
        for j in range(d):
            up = (corner >> j) & 1
            idx.append(base[j] + up)
            w = w * (frac[j] if up else 1.0 - frac[j])
        ok = np.ones(len(samples), dtype=bool)
        for j in range(d):
            ok &= (idx[j] >= 0) & (idx[j] < sizes[j])
        np.add.at(counts, tuple(i[ok] for i in idx), w[ok])
    kernel = None
    for j in range(d):
        half = math.ceil(7 * h / steps[j])
        g = np.exp(-0.5 * (np.arange(-half, half + 1) * steps[j] / h) ** 2)
        g /= math.sqrt(2 * math.pi) * h
        shape = [1] * d
        shape[j] = len(g)
        g = g.reshape(shape)
        kernel = g if kernel is None else kernel * g
    dens = fftconvolve(counts, kernel, mode="same") * mass / len(samples)
    sl = tuple(slice(pad, pad + (len(ax) - 1) * k + 1, k) for (pad, k), ax in zip(pads, axes))
    return np.maximum(dens[sl], 0.0)


def empirical_density(ensemble: PathEnsemble, t_index: int, grid, *, axes=None,
                      method: str = "auto") -> np.ndarray:
    """Unweighted Gaussian KDE of path states, Scott bandwidth.

    Mass equals the surviving fraction of paths.  ``grid`` is ``(G, d)``;
    passing the tensor ``axes`` that generated it (``ij`` order) allows the
    binned evaluation used for large problems.
    """
    states = ensemble.states(t_index)
    if len(states) < 2:
        raise DegenerateSampleError("fewer than two surviving paths")
    h = scott_bandwidth(states)
    mass = len(states) / ensemble.n_paths
    grid = np.asarray(grid, dtype=np.float64).reshape(-1, states.shape[1])
    if method == "auto":
        method = "binned" if axes is not None and len(states) * len(grid) > 1e7 else "exact"
    if method == "binned":
        if axes is None:
            raise ConfigError("binned KDE needs the grid axes")
        return _binned_kde(states, [np.asarray(a, dtype=np.float64) for a in axes], h,
                           mass).ravel()
    model = KdeModel(states, np.full(len(states), mass), h)
    return kde_eval(model, grid)


@dataclass
class ReferenceSettings:
    n_paths: int = 200_000
    n_steps: int = 1000
    scheme: str = "em"
    seed: int = 12345
    force_monte_carlo: bool = False


def reference_grid(problem: FpkProblem, space_axes, times, settings: ReferenceSettings = None,
                   *, ensemble: PathEnsemble = None) -> np.ndarray:
    """Reference density on ``times x tensor(space_axes)``, shape ``(n_t, G)``.

    Closed forms are used where the problem has one; otherwise densities are
    estimated from simulated paths, with ``p0`` itself at the initial time.
    """
    settings = settings or ReferenceSettings()
    axes = [np.asarray(a, dtype=np.float64) for a in space_axes]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    times = np.asarray(times, dtype=np.float64)
    if np.any(times < problem.t0 - 1e-12) or np.any(times > problem.t_end + 1e-12):
        raise ConfigError("reference times outside the problem's time window")
    for ax, lo, hi in zip(axes, problem.space_lo, problem.space_hi):
        if ax.min() < lo - 1e-12 or ax.max() > hi + 1e-12:
            raise ConfigError("reference grid outside the problem's space box")
    if problem.exact_solution is not None and not settings.force_monte_carlo:
        return np.stack([problem.exact_solution(pts, np.full(len(pts), t)) for t in times])

    if ensemble is None:
        ensemble = simulate_for_grid(problem, times, settings)
    out = np.empty((len(times), len(pts)))
    for i, t in enumerate(times):
        if abs(t - problem.t0) < 1e-12:
            out[i] = problem.initial_density(pts)
            continue
        col = int(np.argmin(np.abs(ensemble.times - t)))
        if abs(ensemble.times[col] - t) > 1e-9 * max(1.0, abs(t)):
            raise ConfigError(f"time {t} is not on the simulation step lattice")
        out[i] = empirical_density(ensemble, col, pts, axes=axes)
    return out


def simulate_for_grid(problem: FpkProblem, times, settings: ReferenceSettings) -> PathEnsemble:
    """Simulate the problem's SDE storing only the steps that hit ``times``."""
    span = problem.t_end - problem.t0
    dt = span / settings.n_steps
    steps = np.rint((np.asarray(times) - problem.t0) / dt).astype(int)
    if np.any(np.abs(problem.t0 + steps * dt - times) > 1e-9 * max(1.0, span)):
        raise ConfigError(
            f"n_steps={settings.n_steps} does not put every grid time on a step boundary")
    stride = math.gcd(*[int(s) for s in steps if s > 0]) if np.any(steps > 0) else 1
    return simulate(SdeSpec.from_problem(problem), span, settings.n_steps, settings.n_paths,
                    settings.seed, scheme=settings.scheme, t0=problem.t0,
                    record_every=max(stride, 1))
