"""Run configuration: validated sections, TOML I/O and shipped presets."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .problems import PROBLEMS, get_problem


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class RunSection(_Section):
    name: str = "run"
    variant: Literal["pinn", "n-pinn", "s-pinn", "d-pinn", "dsn-pinn"] = "dsn-pinn"
    seed: int = Field(0, ge=0)
    out_dir: str = "runs"


class ProblemSection(_Section):
    name: str = "example1"
    overrides: dict[str, float | list[float]] = Field(default_factory=dict)


class NetworkSection(_Section):
    hidden: list[int] = Field(default_factory=lambda: [20, 20, 20], min_length=1)

    @model_validator(mode="after")
    def _positive(self):
        if any(h <= 0 for h in self.hidden):
            raise ValueError("hidden layer widths must be positive")
        return self


class SamplingSection(_Section):
    n_per_slice: int = Field(50, gt=0)
    time_slices: int = Field(40, gt=0)
    n_boundary: int = Field(80, gt=0)
    n_initial: int = Field(160, gt=0)
    beta: float = Field(0.5, gt=0.0, lt=1.0)
    candidate_factor: int = Field(10, ge=1)
    snapshot_factor: int = Field(4, ge=1)


class LossSection(_Section):
    mask: Literal["identity", "sigmoid", "sqrt"] = "identity"
    mu: float = Field(1.0, ge=0.0)


class TrainSection(_Section):
    epochs_per_round: int = Field(5000, ge=0)
    lr: float = Field(0.005, gt=0.0)
    lambda_lr: Optional[float] = Field(None, gt=0.0)
    epsilon: float = Field(5e-5, gt=0.0)
    n_max: int = Field(5, ge=0)
    n_adap: int = Field(3, ge=0)
    # baseline variants get min(n_adap, n_a) * beta extra interior points
    augment_baseline: bool = True
    n_a: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _counters(self):
        if self.n_adap > self.n_max:
            raise ValueError(f"n_adap ({self.n_adap}) must not exceed n_max ({self.n_max})")
        return self


class ReferenceSection(_Section):
    n_paths: int = Field(200_000, gt=1)
    n_steps: int = Field(1000, gt=0)
    scheme: Literal["em", "milstein"] = "em"
    seed: int = Field(12345, ge=0)
    force_monte_carlo: bool = False
    cache_dir: Optional[str] = None


class EvalSection(_Section):
    space_points: Optional[int] = Field(None, ge=2)
    time_points: Optional[int] = Field(None, ge=2)


class RunConfig(_Section):
    run: RunSection = Field(default_factory=RunSection)
    problem: ProblemSection = Field(default_factory=ProblemSection)
    network: NetworkSection = Field(default_factory=NetworkSection)
    sampling: SamplingSection = Field(default_factory=SamplingSection)
    loss: LossSection = Field(default_factory=LossSection)
    train: TrainSection = Field(default_factory=TrainSection)
    reference: ReferenceSection = Field(default_factory=ReferenceSection)
    eval: EvalSection = Field(default_factory=EvalSection)

    @model_validator(mode="after")
    def _problem_resolves(self):
        if self.problem.name not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem.name!r}; "
                             f"choose from {sorted(PROBLEMS)}")
        try:
            problem = get_problem(self.problem.name, **self.problem.overrides)
        except ConfigError as exc:
            raise ValueError(str(exc)) from exc
        if self.reference.scheme == "milstein" and problem.d != 1:
            raise ValueError("scheme 'milstein' is only available for 1D problems")
        return self

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)

    def updated(self, **sections) -> "RunConfig":
        """Copy with some fields replaced, e.g. ``updated(train={"lr": 0.01})``."""
        data = self.to_dict()
        for name, values in sections.items():
            if name not in data:
                raise ConfigError(f"unknown config section {name!r}")
            data[name].update(values)
        return from_dict(data)


def _explain(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def from_dict(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_explain(exc)}") from None


def loads(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    return from_dict(data)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dumps(config: RunConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def save(config: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(dumps(config))
    return path


def preset_names() -> list[str]:
    root = resources.files("fpkpinn") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def preset_text(name: str) -> str:
    path = resources.files("fpkpinn") / "presets" / f"{name}.toml"
    if not path.is_file():
        raise ConfigError(f"no preset named {name!r}; see 'presets list'")
    return path.read_text()


def preset(name: str) -> RunConfig:
    return loads(preset_text(name))

