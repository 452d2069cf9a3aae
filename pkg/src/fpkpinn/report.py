"""Grid evaluation, error metrics and run artifacts."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .loss import hard_normalize
from .net import MlpParams, forward_batch
from .problems import FpkProblem
from .train import mean_pde_residual


def _pair(pred, ref):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.shape != ref.shape:
        raise ConfigError(f"prediction has {pred.size} values, reference {ref.size}")
    if pred.size == 0:
        raise ConfigError("metrics of an empty grid")
    return pred, ref


def mae(pred, ref) -> float:
    """Maximum absolute error."""
    pred, ref = _pair(pred, ref)
    return float(np.max(np.abs(pred - ref)))


def mse(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    diff = pred - ref
    return float(np.sum(diff * diff) / diff.size)


@dataclass
class MetricsRecord:
    mae: float
    mean_pde_residual: float
    mse: float
    variant: str
    problem: str
    seed: int
    wall_time: float = 0.0


@dataclass
class GridSpec:
    space_axes: list
    times: np.ndarray

    @classmethod
    def default(cls, problem: FpkProblem, space_points=None, time_points=None) -> "GridSpec":
        if space_points is None:
            space_points = 201 if problem.d == 1 else 101
        if time_points is None:
            time_points = 101 if problem.d == 1 else 21
        axes = [np.linspace(lo, hi, space_points)
                for lo, hi in zip(problem.space_lo, problem.space_hi)]
        return cls(axes, np.linspace(problem.t0, problem.t_end, time_points))

    def space_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.space_axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def inputs(self) -> np.ndarray:
        """All grid nodes in network order, time-major, shape ``(n_t * G, d+1)``."""
        space = self.space_points()
        g = len(space)
        out = np.empty((len(self.times) * g, space.shape[1] + 1))
        out[:, 0] = np.repeat(self.times, g)
        out[:, 1:] = np.tile(space, (len(self.times), 1))
        return out

    def interior_mask(self) -> np.ndarray:
        """Nodes off the spatial faces and after the initial time."""
        masks = [np.zeros(len(a), dtype=bool) for a in self.space_axes]
        for m in masks:
            m[1:-1] = True
        mesh = np.meshgrid(*masks, indexing="ij")
        space_ok = np.logical_and.reduce([m.ravel() for m in mesh])
        time_ok = np.zeros(len(self.times), dtype=bool)
        time_ok[1:] = True
        return (time_ok[:, None] & space_ok[None, :]).ravel()


@dataclass
class GridEval:
    grid: GridSpec
    pred: np.ndarray  # (n_t, G)
    ref: np.ndarray  # (n_t, G)
    residual: np.ndarray = field(default=None)  # (n_t, G)


def evaluate_run(params: MlpParams, problem: FpkProblem, grid: GridSpec, reference,
                 *, variant: str = "", seed: int = 0, wall_time: float = 0.0):
    """Predictions, reference and metrics on an evaluation grid.

    Returns ``(grid_eval, record, hard_record)`` where ``hard_record`` holds the
    same metrics for the mean-shifted output.
    """
    from .loss import residual_channel_coefficients
    from .net import Tape

    inputs = grid.inputs()
    n_t = len(grid.times)
    ref = np.asarray(reference, dtype=np.float64).reshape(n_t, -1)
    pred = forward_batch(params, inputs).reshape(n_t, -1)
    if ref.shape != pred.shape:
        raise ConfigError(f"reference shape {ref.shape} does not match grid {pred.shape}")
    residual = np.empty(len(inputs))
    c0 = np.empty(len(inputs))
    chunk = 16384
    for i in range(0, len(inputs), chunk):
        block = inputs[i:i + chunk]
        coef = residual_channel_coefficients(problem, block)
        residual[i:i + chunk] = np.sum(coef * Tape(params, block, order=2).out, axis=0)
        c0[i:i + chunk] = coef[0]
    interior = grid.interior_mask()
    record = MetricsRecord(
        mae=mae(pred, ref),
        mean_pde_residual=mean_pde_residual(params, problem, residuals=residual[interior]),
        mse=mse(pred, ref), variant=variant, problem=problem.name, seed=int(seed),
        wall_time=float(wall_time))

    p_bar = float(np.mean(pred))
    hard = hard_normalize(pred, p_bar, problem)
    shift = problem.target_mean - p_bar
    hard_residual = residual + c0 * shift
    hard_record = {
        "mae": mae(hard, ref),
        "mean_pde_residual": mean_pde_residual(params, problem,
                                               residuals=hard_residual[interior]),
        "mse": mse(hard, ref),
    }
    return GridEval(grid, pred, ref, residual.reshape(n_t, -1)), record, hard_record


# ---------------------------------------------------------------- artifacts

def _fmt(v) -> str:
    return repr(float(v))


def _space_names(d: int) -> list[str]:
    return ["x", "y"][:d] if d <= 2 else [f"x{i + 1}" for i in range(d)]


def _write_columns(path: Path, header, inputs, columns) -> None:
    lines = [",".join(header)]
    for k in range(len(inputs)):
        row = [_fmt(c) for c in inputs[k, 1:]] + [_fmt(inputs[k, 0])]
        row += [_fmt(col[k]) for col in columns]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def write_grid_csv(path: Path, grid_eval: GridEval) -> None:
    grid = grid_eval.grid
    pred = grid_eval.pred.ravel()
    ref = grid_eval.ref.ravel()
    header = _space_names(len(grid.space_axes)) + ["t", "pred", "ref", "abs_err"]
    _write_columns(path, header, grid.inputs(), [pred, ref, np.abs(pred - ref)])


def write_reference_csv(path: Path, grid: GridSpec, ref) -> None:
    header = _space_names(len(grid.space_axes)) + ["t", "ref"]
    _write_columns(path, header, grid.inputs(), [np.asarray(ref).ravel()])


def read_grid_csv(path: Path):
    """Return ``(inputs, pred, ref)`` with inputs in network order."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = data.shape[1] - 4
    inputs = np.column_stack([data[:, d], data[:, :d]])
    return inputs, data[:, d + 1], data[:, d + 2]


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def export(run_dir, grid_eval: GridEval, record: MetricsRecord, hard_record: dict,
           config: dict, residual_history, accepted=None, params: MlpParams = None,
           extra: dict = None) -> Path:
    """Write the run artifacts.

    Everything except ``timing.json`` is a pure function of the run inputs,
    so reruns with the same seed produce byte-identical files.
    """
    run_dir = Path(run_dir)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        write_grid_csv(run_dir / "grid.csv", grid_eval)
        metrics = {k: v for k, v in asdict(record).items() if k != "wall_time"}
        metrics["hard_normalized"] = hard_record
        metrics["config"] = config
        if extra:
            metrics.update(extra)
        _dump_json(run_dir / "metrics.json", metrics)
        _dump_json(run_dir / "config.json", config)
        _dump_json(run_dir / "timing.json", {"wall_time": record.wall_time})
        accepted = accepted if accepted is not None else [None] * len(residual_history)
        with open(run_dir / "residual_history.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "mean_residual", "accepted"])
            for k, (r, a) in enumerate(zip(residual_history, accepted)):
                writer.writerow([k, _fmt(r), "" if a is None else int(a)])
        if params is not None:
            _dump_json(run_dir / "params.json", params.to_dict())
    except OSError as exc:
        raise OSError(f"could not write run artifacts under {run_dir}: {exc}") from exc
    return run_dir


def load_metrics(run_dir) -> MetricsRecord:
    run_dir = Path(run_dir)
    data = json.loads((run_dir / "metrics.json").read_text())
    timing = run_dir / "timing.json"
    wall = json.loads(timing.read_text())["wall_time"] if timing.exists() else 0.0
    names = {f.name for f in fields(MetricsRecord)}
    kwargs = {k: v for k, v in data.items() if k in names}
    kwargs["wall_time"] = wall
    return MetricsRecord(**kwargs)
