"""Composite PINN objective: residual, boundary, initial and normalization terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .net import MlpParams, ParamGrad, Tape, forward_batch
from .problems import FpkProblem, operator_coefficients
from .sampling import PointSet

MASKS = ("identity", "sigmoid", "sqrt")


def _check_mask(mask: str) -> None:
    if mask not in MASKS:
        raise ConfigError(f"unknown mask {mask!r}; choose from {MASKS}")


def mask_apply(mask: str, lam):
    """Apply the strictly increasing weight mask ``f``."""
    _check_mask(mask)
    lam_arr = np.asarray(lam, dtype=np.float64)
    if mask == "identity":
        out = lam_arr
    elif mask == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-lam_arr))
    else:
        if np.any(lam_arr < 0):
            raise DomainError("sqrt mask needs non-negative weights")
        out = np.sqrt(lam_arr)
    return float(out) if np.ndim(lam) == 0 else out


def mask_derivative(mask: str, lam) -> np.ndarray:
    _check_mask(mask)
    lam = np.asarray(lam, dtype=np.float64)
    if mask == "identity":
        return np.ones_like(lam)
    if mask == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-lam))
        return s * (1.0 - s)
    # finite at lam == 0 so Adam never sees inf
    return 0.5 / np.sqrt(np.maximum(lam, 1e-12))


@dataclass
class LossWeights:
    lambda_r: np.ndarray
    lambda_b: np.ndarray
    lambda_0: np.ndarray
    mu: float = 1.0
    mask: str = "identity"

    def __post_init__(self):
        _check_mask(self.mask)
        if self.mu < 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}")
        for name in ("lambda_r", "lambda_b", "lambda_0"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
            if self.mask == "sqrt" and np.any(getattr(self, name) < 0):
                raise DomainError(f"{name} must be non-negative under the sqrt mask")

    @classmethod
    def uniform(cls, points: PointSet, *, mu: float = 1.0, mask: str = "identity"):
        """All pointwise weights equal to one."""
        return cls(np.ones(points.n_residual), np.ones(points.n_boundary),
                   np.ones(points.n_initial), mu, mask)

    @classmethod
    def random(cls, points: PointSet, rng, *, mu: float = 1.0, mask: str = "sigmoid"):
        """Pointwise weights drawn from U[0, 1)."""
        return cls(rng.random(points.n_residual), rng.random(points.n_boundary),
                   rng.random(points.n_initial), mu, mask)

    def check_sizes(self, points: PointSet) -> None:
        sizes = (len(self.lambda_r), len(self.lambda_b), len(self.lambda_0))
        want = (points.n_residual, points.n_boundary, points.n_initial)
        if sizes != want:
            raise ConfigError(f"weight vector lengths {sizes} do not match point counts {want}")

    def arrays(self) -> list[np.ndarray]:
        return [self.lambda_r, self.lambda_b, self.lambda_0]


@dataclass
class LossBreakdown:
    residual_term: float
    boundary_term: float
    initial_term: float
    normalization_term: float

    @property
    def total(self) -> float:
        return ((self.residual_term + self.boundary_term) + self.initial_term) \
            + self.normalization_term


def weighted_mean_square(diff, lam, mask: str) -> float:
    diff = np.asarray(diff, dtype=np.float64)
    if diff.size == 0:
        raise ConfigError("loss over an empty batch")
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != diff.shape:
        raise ConfigError(f"{lam.shape[0]} weights for {diff.shape[0]} points")
    return float(np.sum(mask_apply(mask, lam) * diff * diff) / diff.size)


def residual_loss(residuals, weights: LossWeights) -> float:
    return weighted_mean_square(residuals, weights.lambda_r, weights.mask)


def boundary_loss(values, weights: LossWeights, target=0.0) -> float:
    values = np.asarray(values, dtype=np.float64)
    return weighted_mean_square(values - target, weights.lambda_b, weights.mask)


def initial_loss(values, p0, weights: LossWeights) -> float:
    values = np.asarray(values, dtype=np.float64)
    return weighted_mean_square(values - np.asarray(p0), weights.lambda_0, weights.mask)


def mean_output(residual_values, boundary_values=(), initial_values=()) -> float:
    """Mean network output over the union of the three point batches."""
    parts = [np.asarray(v, dtype=np.float64).ravel()
             for v in (residual_values, boundary_values, initial_values)]
    count = sum(p.size for p in parts)
    if count == 0:
        raise ConfigError("mean over an empty point set")
    return float(sum(p.sum() for p in parts) / count)


def normalization_loss(p_bar: float, problem: FpkProblem) -> float:
    return float((p_bar - problem.target_mean) ** 2)


def hard_normalize(values, p_bar: float, problem: FpkProblem) -> np.ndarray:
    """Shift outputs so their mean matches ``C_T / M(Q)``; post-processing only."""
    return np.asarray(values, dtype=np.float64) - p_bar + problem.target_mean


def residual_channel_coefficients(problem: FpkProblem, residual_points) -> np.ndarray:
    """Operator coefficients laid out like the net's order-2 channels, shape (C, B)."""
    pts = np.asarray(residual_points, dtype=np.float64)
    c0, c1, c2 = operator_coefficients(problem, pts[:, 1:], pts[:, 0])
    d = problem.d
    rows = [c0] + [c1[:, k] for k in range(d + 1)]
    for i in range(d):
        for j in range(i, d):
            rows.append(c2[:, i, i] if i == j else c2[:, i, j] + c2[:, j, i])
    return np.stack(rows)


class LossEvaluator:
    """Loss and gradients over a fixed point set.

    Operator coefficients and initial targets are computed once, since
    neither depends on the network.
    """

    def __init__(self, problem: FpkProblem, points: PointSet):
        if min(points.n_residual, points.n_boundary, points.n_initial) == 0:
            raise ConfigError("residual, boundary and initial sets must all be non-empty")
        self.problem = problem
        self.points = points
        self.res_pts = points.residual_flat()
        self.coef = residual_channel_coefficients(problem, self.res_pts)
        self.p0 = problem.initial_density(points.initial[:, 1:])
        self.n_total = points.n_residual + points.n_boundary + points.n_initial

    def residuals(self, params: MlpParams) -> np.ndarray:
        tape = Tape(params, self.res_pts, order=2)
        return np.sum(self.coef * tape.out, axis=0)

    def __call__(self, params: MlpParams, weights: LossWeights, normalization_on: bool,
                 with_grad: bool = True):
        """Return ``(breakdown, param_grad, lambda_grads)``.

        ``lambda_grads`` are d(total)/d(lambda) for the residual, boundary and
        initial weights; the gradients are ``None`` when ``with_grad`` is false.
        """
        weights.check_sizes(self.points)
        mask = weights.mask
        t_res = Tape(params, self.res_pts, order=2)
        t_bnd = Tape(params, self.points.boundary, order=0)
        t_ini = Tape(params, self.points.initial, order=0)

        r = np.sum(self.coef * t_res.out, axis=0)
        v_bnd = t_bnd.values
        e_ini = t_ini.values - self.p0
        f_r = mask_apply(mask, weights.lambda_r)
        f_b = mask_apply(mask, weights.lambda_b)
        f_0 = mask_apply(mask, weights.lambda_0)
        n_r, n_b, n_0 = len(r), len(v_bnd), len(e_ini)
        parts = [np.sum(f_r * r * r) / n_r, np.sum(f_b * v_bnd * v_bnd) / n_b,
                 np.sum(f_0 * e_ini * e_ini) / n_0]

        norm_term, norm_cot = 0.0, 0.0
        if normalization_on:
            p_bar = mean_output(t_res.values, v_bnd, t_ini.values)
            gap = p_bar - self.problem.target_mean
            norm_term = weights.mu * gap * gap
            norm_cot = 2.0 * weights.mu * gap / self.n_total
        breakdown = LossBreakdown(float(parts[0]), float(parts[1]), float(parts[2]),
                                  float(norm_term))
        if not with_grad:
            return breakdown, None, None

        cot_r = self.coef * (2.0 * f_r * r / n_r)
        cot_r[0] += norm_cot
        cot_b = (2.0 * f_b * v_bnd / n_b + norm_cot)[None]
        cot_0 = (2.0 * f_0 * e_ini / n_0 + norm_cot)[None]
        grad = t_res.backward(cot_r) + t_bnd.backward(cot_b) + t_ini.backward(cot_0)

        lam_grads = [mask_derivative(mask, weights.lambda_r) * r * r / n_r,
                     mask_derivative(mask, weights.lambda_b) * v_bnd * v_bnd / n_b,
                     mask_derivative(mask, weights.lambda_0) * e_ini * e_ini / n_0]
        return breakdown, grad, lam_grads


def total_loss(params: MlpParams, problem: FpkProblem, points: PointSet,
               weights: LossWeights, normalization_on: bool) -> LossBreakdown:
    return LossEvaluator(problem, points)(params, weights, normalization_on,
                                          with_grad=False)[0]


def batch_mean_output(params: MlpParams, points: PointSet) -> float:
    return mean_output(forward_batch(params, points.residual_flat()),
                       forward_batch(params, points.boundary),
                       forward_batch(params, points.initial))
