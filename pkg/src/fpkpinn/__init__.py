"""Normalized, density-resampled PINNs for Fokker-Planck-Kolmogorov equations."""

from .errors import (ConfigError, DegeneratePriorError, DegenerateSampleError, DomainError,
                     FpkError, NumericError, ShapeError)
from .net import Jet, MlpParams, forward, forward_jet, param_gradient, xavier_init
from .problems import FpkProblem, PROBLEMS, fpk_residual, get_problem
from .train import VARIANTS, TrainConfig, dsn_loop

__version__ = "0.1.0"
