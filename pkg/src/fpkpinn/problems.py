"""FPK problem definitions and the residual operator.

Every problem is written in conservative form

    p_t + sum_i d/dx_i (b_i p) - 1/2 sum_ij d2/dx_i dx_j (D_ij p) = 0

with ``D = sigma sigma^T``.  Coefficient callables are vectorised: ``x`` has
shape ``(B, d)`` and ``t`` shape ``(B,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .net import Jet, JetBatch


@dataclass(frozen=True)
class FpkProblem:
    name: str
    d: int
    # (x, t) -> (b (B,d), db_i/dx_j (B,d,d))
    drift: Callable
    # (x, t) -> (D (B,d,d), dD_ij/dx_k (B,d,d,d), d2D_ij/dx_i dx_j (B,d,d))
    diffusion: Callable
    space_lo: np.ndarray
    space_hi: np.ndarray
    t0: float
    t_end: float
    initial_density: Callable
    c_t: float
    # (x, t) -> sigma (B,d,m); used only by the Monte Carlo reference
    noise: Callable
    sample_initial: Callable  # (rng, n) -> (n, d)
    noise_dx: Optional[Callable] = None  # scalar problems: d sigma/dx, for Milstein
    exact_solution: Optional[Callable] = None
    exact_jet: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.space_lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.space_hi, dtype=np.float64))
        object.__setattr__(self, "space_lo", lo)
        object.__setattr__(self, "space_hi", hi)
        if lo.shape != (self.d,) or hi.shape != (self.d,):
            raise ShapeError(f"space box must have {self.d} intervals")
        if not np.all(lo < hi):
            raise ConfigError(f"{self.name}: empty space box {lo} .. {hi}")
        if not self.t0 < self.t_end:
            raise ConfigError(f"{self.name}: empty time window [{self.t0}, {self.t_end}]")
        if not self.c_t > 0:
            raise ConfigError(f"{self.name}: c_t must be positive")

    @property
    def spatial_volume(self) -> float:
        return float(np.prod(self.space_hi - self.space_lo))

    @property
    def measure(self) -> float:
        """Lebesgue measure of the space-time box."""
        return self.spatial_volume * (self.t_end - self.t0)

    @property
    def target_mean(self) -> float:
        """Mean density over the space-time box implied by unit mass per slice."""
        return self.c_t / self.measure

    def input_box(self):
        """Network input box in ``(t, x_1, ..., x_d)`` order."""
        lo = np.concatenate([[self.t0], self.space_lo])
        hi = np.concatenate([[self.t_end], self.space_hi])
        return lo, hi


def _as_batch(x, t, d):
    x = np.asarray(x, dtype=np.float64).reshape(-1, d)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],)).astype(np.float64)
    return x, t


def operator_coefficients(problem: FpkProblem, x, t):
    """Linear coefficients of the residual in the jet entries.

    Returns ``(c0, c1, c2)`` with shapes ``(B,)``, ``(B, d+1)``, ``(B, d, d)``
    such that ``residual = c0*p + c1 . grad + sum(c2 * hess)``.
    """
    d = problem.d
    x, t = _as_batch(x, t, d)
    b, jac = problem.drift(x, t)
    dmat, d_dmat, dd_dmat = problem.diffusion(x, t)
    n = x.shape[0]
    c0 = np.einsum("bii->b", jac) - 0.5 * dd_dmat.sum(axis=(1, 2))
    c1 = np.empty((n, d + 1))
    c1[:, 0] = 1.0
    # d_j D_ij p_i + d_i D_ij p_j  ->  coefficient of p_i
    first = np.einsum("bijj->bi", d_dmat) + np.einsum("bjij->bi", d_dmat)
    c1[:, 1:] = b - 0.5 * first
    c2 = -0.5 * dmat
    return c0, c1, c2


def fpk_residual_batch(problem: FpkProblem, jets: JetBatch, x, t, coeffs=None) -> np.ndarray:
    d = problem.d
    if jets.grad.shape[1:] != (d + 1,) or jets.hess.shape[1:] != (d, d):
        raise ShapeError(
            f"jet dimension {jets.grad.shape[1] - 1} does not match problem dimension {d}")
    c0, c1, c2 = coeffs if coeffs is not None else operator_coefficients(problem, x, t)
    return c0 * jets.value + np.einsum("bk,bk->b", c1, jets.grad) \
        + np.einsum("bij,bij->b", c2, jets.hess)


def fpk_residual(problem: FpkProblem, jet: Jet, point) -> float:
    """Residual at one point ``(t, x_1, ..., x_d)``; zero when the PDE holds."""
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (problem.d + 1,):
        raise ShapeError(f"point must have length {problem.d + 1}, got {point.shape}")
    batch = JetBatch(np.array([jet.value]), np.asarray(jet.grad, dtype=np.float64)[None],
                     np.asarray(jet.hess, dtype=np.float64)[None])
    return float(fpk_residual_batch(problem, batch, point[None, 1:], point[:1])[0])


# ---------------------------------------------------------------- helpers

def _constant_diffusion(dmat):
    dmat = np.asarray(dmat, dtype=np.float64)
    d = dmat.shape[0]

    def diffusion(x, t):
        n = x.shape[0]
        return (np.broadcast_to(dmat, (n, d, d)).copy(), np.zeros((n, d, d, d)),
                np.zeros((n, d, d)))
    return diffusion


def _constant_noise(sigma):
    sigma = np.asarray(sigma, dtype=np.float64)

    def noise(x, t):
        return np.broadcast_to(sigma, (x.shape[0],) + sigma.shape).copy()
    return noise


def _gaussian_sampler(mean, cov):
    mean = np.asarray(mean, dtype=np.float64)
    chol = np.linalg.cholesky(np.atleast_2d(cov))

    def sample(rng, n):
        return mean + rng.standard_normal((n, len(mean))) @ chol.T
    return sample


def _gauss1d_jet(x, t, mean, dmean, var, dvar):
    """Jet of N(mean(t), var(t)) in one dimension."""
    dx = x[:, 0] - mean
    p = np.exp(-dx * dx / (2 * var)) / np.sqrt(2 * np.pi * var)
    grad = np.empty((len(p), 2))
    grad[:, 0] = p * (-dvar / (2 * var) + dx * dmean / var + dx * dx * dvar / (2 * var * var))
    grad[:, 1] = -dx / var * p
    hess = ((dx * dx / var ** 2 - 1 / var) * p)[:, None, None]
    return JetBatch(p, grad, hess)


def _isotropic_gauss_jet(x, t, center, var, dvar):
    """Jet of N(center, var(t) I) in d dimensions (center fixed)."""
    d = x.shape[1]
    dx = x - center
    r2 = np.sum(dx * dx, axis=1)
    p = np.exp(-r2 / (2 * var)) / (2 * np.pi * var) ** (d / 2)
    grad = np.empty((len(p), d + 1))
    grad[:, 0] = p * dvar * (-d / (2 * var) + r2 / (2 * var * var))
    grad[:, 1:] = -dx / var[:, None] * p[:, None]
    hess = (dx[:, :, None] * dx[:, None, :] / (var ** 2)[:, None, None]
            - np.eye(d) / var[:, None, None]) * p[:, None, None]
    return JetBatch(p, grad, hess)


# ---------------------------------------------------------------- registry

def example1(t_end: float = 3.0, space_lo=-6.0, space_hi=6.0, mu: float = 0.5,
             sigma: float = 1.0, shift: float = 0.2) -> FpkProblem:
    """Brownian motion with constant drift; Gaussian exact solution."""
    var0 = sigma ** 2 * shift
    mean0 = mu * shift

    def drift(x, t):
        return np.full_like(x, mu), np.zeros((x.shape[0], 1, 1))

    def exact_jet(x, t):
        x, t = _as_batch(x, t, 1)
        s = t + shift
        return _gauss1d_jet(x, t, mu * s, mu, sigma ** 2 * s, sigma ** 2)

    def exact(x, t):
        return exact_jet(x, t).value

    def p0(x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return np.exp(-(x - mean0) ** 2 / (2 * var0)) / np.sqrt(2 * np.pi * var0)

    return FpkProblem(
        name="example1", d=1, drift=drift, diffusion=_constant_diffusion([[sigma ** 2]]),
        space_lo=space_lo, space_hi=space_hi, t0=0.0, t_end=t_end, initial_density=p0,
        c_t=t_end, noise=_constant_noise([[sigma]]),
        sample_initial=_gaussian_sampler([mean0], [[var0]]),
        noise_dx=lambda x, t: np.zeros(x.shape[0]),
        exact_solution=exact, exact_jet=exact_jet,
        params={"mu": mu, "sigma": sigma, "shift": shift})


def example2(t0: float = 0.2, t_end: float = 3.2, space_lo=-2.5, space_hi=2.5,
             init_var: float = 0.2) -> FpkProblem:
    """Double-well drift x - x^3 with unit noise; no closed form."""

    def drift(x, t):
        return x - x ** 3, (1.0 - 3.0 * x ** 2)[:, :, None]

    def p0(x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return np.exp(-x ** 2 / (2 * init_var)) / np.sqrt(2 * np.pi * init_var)

    return FpkProblem(
        name="example2", d=1, drift=drift, diffusion=_constant_diffusion([[1.0]]),
        space_lo=space_lo, space_hi=space_hi, t0=t0, t_end=t_end, initial_density=p0,
        c_t=t_end - t0, noise=_constant_noise([[1.0]]),
        sample_initial=_gaussian_sampler([0.0], [[init_var]]),
        noise_dx=lambda x, t: np.zeros(x.shape[0]),
        params={"init_var": init_var})


def example3(t_end: float = 1.0, space_lo=(0.0, 0.0), space_hi=(6.0, 6.0),
             center=(4.0, 4.0)) -> FpkProblem:
    """Two-dimensional heat equation started from a unit Gaussian."""
    center = np.asarray(center, dtype=np.float64)

    def drift(x, t):
        return np.zeros_like(x), np.zeros((x.shape[0], 2, 2))

    def exact_jet(x, t):
        x, t = _as_batch(x, t, 2)
        return _isotropic_gauss_jet(x, t, center, 1.0 + t, np.ones_like(t))

    def exact(x, t):
        return exact_jet(x, t).value

    def p0(x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        return np.exp(-0.5 * np.sum((x - center) ** 2, axis=1)) / (2 * np.pi)

    return FpkProblem(
        name="example3", d=2, drift=drift, diffusion=_constant_diffusion(np.eye(2)),
        space_lo=space_lo, space_hi=space_hi, t0=0.0, t_end=t_end, initial_density=p0,
        c_t=t_end, noise=_constant_noise(np.eye(2)),
        sample_initial=_gaussian_sampler(center, np.eye(2)),
        exact_solution=exact, exact_jet=exact_jet, params={"center": center.tolist()})


def example4(t_end: float = 1.0, space_lo=(-4.0, -6.0), space_hi=(6.0, 9.0),
             noise_var: float = 0.4, damping: float = 0.4, cubic: float = 0.1,
             init_mean=(0.0, 5.0)) -> FpkProblem:
    """Damped Duffing-type oscillator with noise on the velocity only."""

    def drift(x, t):
        u, v = x[:, 0], x[:, 1]
        b = np.stack([v, u - damping * v - cubic * u ** 3], axis=1)
        jac = np.zeros((x.shape[0], 2, 2))
        jac[:, 0, 1] = 1.0
        jac[:, 1, 0] = 1.0 - 3.0 * cubic * u ** 2
        jac[:, 1, 1] = -damping
        return b, jac

    def p0(x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        return np.exp(-0.5 * np.sum((x - np.asarray(init_mean)) ** 2, axis=1)) / (2 * np.pi)

    return FpkProblem(
        name="example4", d=2, drift=drift,
        diffusion=_constant_diffusion([[0.0, 0.0], [0.0, noise_var]]),
        space_lo=space_lo, space_hi=space_hi, t0=0.0, t_end=t_end, initial_density=p0,
        c_t=t_end, noise=_constant_noise([[0.0, 0.0], [0.0, np.sqrt(noise_var)]]),
        sample_initial=_gaussian_sampler(init_mean, np.eye(2)),
        params={"noise_var": noise_var, "damping": damping, "cubic": cubic,
                "init_mean": list(init_mean)})


def gbm_problem(mu: float = 0.3430, sigma: float = 0.5693, x0: float = 13.54,
                shift: float = 0.2, t_end: float = 2.0, space_lo=0.0,
                space_hi=40.0) -> FpkProblem:
    """Geometric Brownian motion started from its log-normal law at time ``shift``."""
    drift_rate = mu - 0.5 * sigma ** 2
    s2 = sigma ** 2

    def drift(x, t):
        return mu * x, np.full((x.shape[0], 1, 1), mu)

    def diffusion(x, t):
        n = x.shape[0]
        return ((s2 * x ** 2)[:, :, None], (2 * s2 * x)[:, :, None, None],
                np.full((n, 1, 1), 2 * s2))

    def lognormal(x, s):
        out = np.zeros_like(x)
        pos = x > 0
        xp, sp = x[pos], s[pos]
        y = np.log(xp / x0) - drift_rate * sp
        out[pos] = np.exp(-y * y / (2 * s2 * sp)) / (xp * sigma * np.sqrt(2 * np.pi * sp))
        return out

    def exact(x, t):
        x, t = _as_batch(x, t, 1)
        return lognormal(x[:, 0], t + shift)

    def exact_jet(x, t):
        x, t = _as_batch(x, t, 1)
        xs, s = x[:, 0], t + shift
        p = lognormal(xs, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(xs / x0) - drift_rate * s
            lx = -y / (s2 * s * xs) - 1.0 / xs
            lt = drift_rate * y / (s2 * s) + y * y / (2 * s2 * s * s) - 1.0 / (2 * s)
            lxx = (-1.0 / (s2 * s) + y / (s2 * s) + 1.0) / xs ** 2
        grad = np.stack([p * lt, p * lx], axis=1)
        hess = (p * (lxx + lx * lx))[:, None, None]
        bad = xs <= 0
        grad[bad] = 0.0
        hess[bad] = 0.0
        return JetBatch(p, grad, hess)

    def p0(x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return lognormal(x, np.full_like(x, shift))

    def sample_initial(rng, n):
        z = rng.standard_normal((n, 1))
        return x0 * np.exp(drift_rate * shift + sigma * np.sqrt(shift) * z)

    return FpkProblem(
        name="gbm", d=1, drift=drift, diffusion=diffusion, space_lo=space_lo,
        space_hi=space_hi, t0=0.0, t_end=t_end, initial_density=p0, c_t=t_end,
        noise=lambda x, t: (sigma * x)[:, :, None],
        sample_initial=sample_initial,
        noise_dx=lambda x, t: np.full(x.shape[0], sigma),
        exact_solution=exact, exact_jet=exact_jet,
        params={"mu": mu, "sigma": sigma, "x0": x0, "shift": shift})


PROBLEMS = {
    "example1": example1,
    "example2": example2,
    "example3": example3,
    "example4": example4,
    "gbm": gbm_problem,
}


def get_problem(name: str, **overrides) -> FpkProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    try:
        return factory(**overrides)
    except TypeError as exc:
        raise ConfigError(f"bad override for problem {name!r}: {exc}") from None
