"""Adam, full-batch training rounds and the iterative resampling loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NumericError
from .loss import LossEvaluator, LossWeights
from .net import MlpParams, Tape, xavier_init
from .problems import FpkProblem
from .sampling import PointSet, mixture, resample_points

log = logging.getLogger(__name__)

VARIANTS = ("pinn", "n-pinn", "s-pinn", "d-pinn", "dsn-pinn")


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Optional[list] = None
    v: Optional[list] = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")


def adam_step(state: AdamState, params: list, grads: list, *, maximize: bool = False) -> None:
    """One Adam update of ``params`` in place.

    A non-finite gradient raises :class:`NumericError` before anything changes.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; Adam step rejected")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step_count
    bc2 = 1.0 - b2 ** state.step_count
    sign = 1.0 if maximize else -1.0
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p += sign * state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class TrainConfig:
    epochs_per_round: int = 5000
    lr: float = 0.005
    lambda_lr: Optional[float] = None
    epsilon: float = 5e-5
    n_max: int = 5
    n_adap: int = 3
    beta: float = 0.5
    mu: float = 1.0
    mask: str = "identity"
    adaptive: bool = False
    normalization: str = "first"  # off | first | always
    resample: bool = True
    candidate_factor: int = 10
    snapshot_factor: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.n_adap > self.n_max:
            raise ConfigError(f"n_adap ({self.n_adap}) must not exceed n_max ({self.n_max})")
        if self.normalization not in ("off", "first", "always"):
            raise ConfigError(f"normalization must be off|first|always, got {self.normalization!r}")
        if self.epochs_per_round < 0 or self.n_adap < 0:
            raise ConfigError("epochs_per_round and n_adap must be non-negative")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")

    @classmethod
    def for_variant(cls, variant: str, **kwargs) -> "TrainConfig":
        """Feature switches of each ablation variant, other fields from ``kwargs``."""
        flags = {
            "pinn": dict(normalization="off", adaptive=False, resample=False),
            "n-pinn": dict(normalization="always", adaptive=False, resample=False),
            "s-pinn": dict(normalization="off", adaptive=True, resample=False),
            "d-pinn": dict(normalization="first", adaptive=False, resample=True),
            "dsn-pinn": dict(normalization="first", adaptive=True, resample=True),
        }
        if variant not in flags:
            raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        merged = {**kwargs, **flags[variant]}
        if not merged["adaptive"]:
            merged["mask"] = "identity"
        if merged["normalization"] == "off":
            merged["mu"] = 0.0
        return cls(**merged)


def make_weights(points: PointSet, config: TrainConfig, rng) -> LossWeights:
    if config.adaptive:
        return LossWeights.random(points, rng, mu=config.mu, mask=config.mask)
    return LossWeights.uniform(points, mu=config.mu, mask=config.mask)


def mean_pde_residual(params: MlpParams, problem: FpkProblem, residual_points=None, *,
                      residuals=None, chunk: int = 16384) -> float:
    """Mean absolute residual over the given points (or precomputed residuals)."""
    if residuals is None:
        from .loss import residual_channel_coefficients
        pts = np.asarray(residual_points, dtype=np.float64)
        parts = []
        for i in range(0, len(pts), chunk):
            block = pts[i:i + chunk]
            coef = residual_channel_coefficients(problem, block)
            parts.append(np.sum(coef * Tape(params, block, order=2).out, axis=0))
        residuals = np.concatenate(parts) if parts else np.empty(0)
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.size == 0:
        raise ConfigError("mean residual over an empty point set")
    return float(np.sum(np.abs(residuals)) / residuals.size)


def train_rounds(params: MlpParams, evaluator: LossEvaluator, weights: LossWeights,
                 epochs: int, normalization_on: bool, *, adam: AdamState,
                 lambda_adam: Optional[AdamState] = None, adaptive: bool = False) -> list:
    """Full-batch Adam for ``epochs`` steps, updating ``params`` in place.

    Pointwise loss weights are moved by gradient ascent when ``adaptive``.
    Returns the total loss recorded before each step.
    """
    history = []
    net_arrays = params.arrays()
    lam_arrays = weights.arrays()
    for _ in range(epochs):
        breakdown, grad, lam_grads = evaluator(params, weights, normalization_on)
        total = breakdown.total
        if not math.isfinite(total):
            raise NumericError("non-finite loss")
        history.append(total)
        adam_step(adam, net_arrays, grad.arrays())
        if adaptive:
            adam_step(lambda_adam, lam_arrays, lam_grads, maximize=True)
            if weights.mask == "sqrt":
                for lam in lam_arrays:
                    np.maximum(lam, 0.0, out=lam)
    return history


@dataclass
class RunState:
    best_params: MlpParams
    best_residual: float = math.inf
    points: Optional[PointSet] = None
    success_count: int = 0
    iteration: int = 0
    residual_history: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)
    rebuilds: int = 0
    aborted: bool = False
    abort_reason: str = ""


def dsn_loop(problem: FpkProblem, config: TrainConfig, base: PointSet, params: MlpParams, *,
             round_trainer: Optional[Callable] = None,
             residual_fn: Optional[Callable] = None,
             resampler: Optional[Callable] = None) -> RunState:
    """Train, score, and resample until enough improvements or rounds run out.

    Hooks (all optional, used to script the control flow in tests):

    ``round_trainer(params, points, normalization_on, k)`` trains in place and
    returns a list of losses; ``residual_fn(params, points)`` returns the mean
    residual; ``resampler(params, base, s)`` returns the new training set.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    lam_rng = np.random.default_rng(seeds[0])
    resample_seed_root = seeds[1]

    state = RunState(best_params=params.copy(), points=base)
    adam = AdamState(config.lr)
    session = {"weights": None, "lambda_adam": None, "evaluator": None}

    def reset_training_set(points):
        state.points = points
        session["evaluator"] = None
        session["weights"] = None

    def default_trainer(p, points, normalization_on, k):
        if session["evaluator"] is None:
            session["evaluator"] = LossEvaluator(problem, points)
            session["weights"] = make_weights(points, config, lam_rng)
            session["lambda_adam"] = AdamState(config.lambda_lr or config.lr)
        return train_rounds(p, session["evaluator"], session["weights"],
                            config.epochs_per_round, normalization_on, adam=adam,
                            lambda_adam=session["lambda_adam"], adaptive=config.adaptive)

    def default_residual(p, points):
        if session["evaluator"] is not None and session["evaluator"].points is points:
            return mean_pde_residual(p, problem, residuals=session["evaluator"].residuals(p))
        return mean_pde_residual(p, problem, points.residual_flat())

    def default_resampler(p, base_points, s):
        child = np.random.SeedSequence(entropy=resample_seed_root.entropy,
                                       spawn_key=resample_seed_root.spawn_key + (s,))
        kde_seed, mix_seed = child.spawn(2)
        drawn = resample_points(p, problem, base_points, kde_seed,
                                candidate_factor=config.candidate_factor,
                                snapshot_factor=config.snapshot_factor)
        return mixture(drawn, base_points, config.beta, mix_seed)

    round_trainer = round_trainer or default_trainer
    residual_fn = residual_fn or default_residual
    resampler = resampler or default_resampler

    k, s = 0, 0
    while k < config.n_max and s < config.n_adap:
        normalization_on = config.normalization == "always" or (
            config.normalization == "first" and k == 0)
        try:
            losses = round_trainer(params, state.points, normalization_on, k)
            residual = residual_fn(params, state.points)
            if not math.isfinite(residual):
                raise NumericError("non-finite mean residual")
        except NumericError as exc:
            log.error("round %d aborted: %s; keeping best checkpoint", k, exc)
            state.aborted, state.abort_reason = True, str(exc)
            break
        state.loss_history.extend(losses or [])
        state.residual_history.append(residual)
        accepted = residual < state.best_residual - config.epsilon
        state.accepted.append(bool(accepted))
        log.info("round %d: mean residual %.6g (%s)", k, residual,
                 "accepted" if accepted else "rejected")
        if accepted:
            state.best_params = params.copy()
            state.best_residual = residual
            s += 1
            if config.resample:
                reset_training_set(resampler(state.best_params, base, s))
                state.rebuilds += 1
        k += 1
        state.iteration, state.success_count = k, s
    state.iteration, state.success_count = k, s
    return state


def init_params(problem: FpkProblem, hidden, seed: int) -> MlpParams:
    sizes = [problem.d + 1, *hidden, 1]
    return xavier_init(sizes, seed, input_box=problem.input_box())
