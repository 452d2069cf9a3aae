"""End-to-end experiment runs: points, training, reference, evaluation, export."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .errors import ConfigError
from .problems import FpkProblem, get_problem
from .reference import ReferenceSettings, reference_grid, simulate_for_grid
from .report import GridEval, GridSpec, MetricsRecord, evaluate_run, export
from .sampling import base_points
from .train import RunState, TrainConfig, dsn_loop, init_params

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    run_dir: Optional[Path]
    state: RunState
    grid_eval: GridEval
    record: MetricsRecord
    hard_record: dict
    n_per_slice: int


def build_problem(config: RunConfig) -> FpkProblem:
    return get_problem(config.problem.name, **config.problem.overrides)


def build_train_config(config: RunConfig) -> TrainConfig:
    tr, sa = config.train, config.sampling
    return TrainConfig.for_variant(
        config.run.variant, epochs_per_round=tr.epochs_per_round, lr=tr.lr,
        lambda_lr=tr.lambda_lr, epsilon=tr.epsilon, n_max=tr.n_max, n_adap=tr.n_adap,
        beta=sa.beta, mu=config.loss.mu, mask=config.loss.mask,
        candidate_factor=sa.candidate_factor, snapshot_factor=sa.snapshot_factor,
        seed=config.run.seed)


def interior_budget(config: RunConfig, train_config: TrainConfig) -> int:
    """Per-slice interior count, enlarged for variants that never resample.

    A resampling run sees ``min(n_adap, N_a) * beta * n`` extra points per
    slice over its life; fixed-point variants get them up front.
    """
    n = config.sampling.n_per_slice
    if train_config.resample or not config.train.augment_baseline:
        return n
    n_a = config.train.n_a if config.train.n_a is not None else config.train.n_adap
    factor = min(config.train.n_adap, n_a) * config.sampling.beta
    return int(round(n * (1.0 + factor)))


def grid_spec(config: RunConfig, problem: FpkProblem) -> GridSpec:
    return GridSpec.default(problem, config.eval.space_points, config.eval.time_points)


def reference_settings(config: RunConfig) -> ReferenceSettings:
    ref = config.reference
    return ReferenceSettings(ref.n_paths, ref.n_steps, ref.scheme, ref.seed,
                             ref.force_monte_carlo)


def reference_key(config: RunConfig, problem: FpkProblem, grid: GridSpec) -> str:
    """Digest of everything the reference grid depends on."""
    ref = config.reference
    payload = {
        "problem": config.problem.name,
        "overrides": config.problem.overrides,
        "axes": [[float(a[0]), float(a[-1]), len(a)] for a in grid.space_axes],
        "times": [float(grid.times[0]), float(grid.times[-1]), len(grid.times)],
        "mc": None if problem.exact_solution is not None and not ref.force_monte_carlo
        else [ref.n_paths, ref.n_steps, ref.scheme, ref.seed],
    }
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def cache_path(config: RunConfig, problem: FpkProblem, grid: GridSpec) -> Path:
    root = Path(config.reference.cache_dir or Path(config.run.out_dir) / "reference_cache")
    return root / f"{config.problem.name}_{reference_key(config, problem, grid)}.npy"


def compute_reference(config: RunConfig, problem: FpkProblem, grid: GridSpec):
    """Reference values on ``grid`` plus the path ensemble if one was simulated."""
    settings = reference_settings(config)
    ensemble = None
    if problem.exact_solution is None or settings.force_monte_carlo:
        ensemble = simulate_for_grid(problem, grid.times, settings)
    ref = reference_grid(problem, grid.space_axes, grid.times, settings, ensemble=ensemble)
    return ref, ensemble


def load_or_compute_reference(config: RunConfig, problem: FpkProblem, grid: GridSpec,
                              *, use_cache: bool = True) -> np.ndarray:
    needs_mc = problem.exact_solution is None or config.reference.force_monte_carlo
    if not needs_mc:
        return compute_reference(config, problem, grid)[0]
    path = cache_path(config, problem, grid)
    if use_cache and path.exists():
        log.info("reference grid loaded from %s", path)
        return np.load(path)
    ref, _ = compute_reference(config, problem, grid)
    if use_cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, ref)
    return ref


def run_experiment(config: RunConfig, *, out_dir=None, write: bool = True,
                   reference: Optional[np.ndarray] = None,
                   use_cache: bool = True) -> RunResult:
    """Train one variant and evaluate it against the reference.

    A numeric abort still evaluates and exports the best checkpoint; the
    returned ``state.aborted`` tells the caller.
    """
    problem = build_problem(config)
    train_config = build_train_config(config)
    n = interior_budget(config, train_config)
    sa = config.sampling
    seeds = np.random.SeedSequence(config.run.seed).spawn(2)
    base = base_points(problem, n, sa.time_slices, sa.n_boundary, sa.n_initial, seeds[0])
    params = init_params(problem, config.network.hidden,
                         int(seeds[1].generate_state(1)[0]))
    start = time.perf_counter()
    state = dsn_loop(problem, train_config, base, params)
    wall = time.perf_counter() - start
    if not state.residual_history:
        # nothing trained or first round aborted: evaluate the initial network
        log.warning("no completed round; evaluating the initial parameters")

    grid = grid_spec(config, problem)
    if reference is None:
        reference = load_or_compute_reference(config, problem, grid, use_cache=use_cache)
    grid_eval, record, hard = evaluate_run(state.best_params, problem, grid, reference,
                                           variant=config.run.variant, seed=config.run.seed,
                                           wall_time=wall)
    run_dir = None
    if write:
        run_dir = Path(out_dir or Path(config.run.out_dir) / config.run.name)
        extra = {
            "n_per_slice": n,
            "rounds": state.iteration,
            "successes": state.success_count,
            "aborted": state.aborted,
            "abort_reason": state.abort_reason,
            "best_training_residual": state.best_residual
            if math.isfinite(state.best_residual) else None,
        }
        export(run_dir, grid_eval, record, hard, config.to_dict(), state.residual_history,
               state.accepted, state.best_params, extra)
    return RunResult(run_dir, state, grid_eval, record, hard, n)


def check_same_problem(records: list[dict]) -> None:
    problems = {r["problem"] for r in records}
    if len(problems) > 1:
        raise ConfigError(f"runs cover different problems: {sorted(problems)}")
