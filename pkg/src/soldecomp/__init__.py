"""Subdomain solution-decomposition splitting schemes for 2D parabolic problems."""

from .decomposition import BlockOperator, BlockVector, Decomposition, decompose, extend, restrict
from .exceptions import (
    BootstrapRequiredError,
    CoefficientBoundError,
    InvalidArgumentError,
    NoConvergenceError,
    OperatorNotNonnegativeError,
    StabilityWarning,
)
from .grid import Grid, GridFunction, build_grid, energy_norm, inner_product, norm_inf
from .operator import CgConfig, CoefficientField, EllipticOperator, assemble, solve_shifted
from .problems import BoxForcing, Problem, model_problem
from .schemes import SchemeState, TimeGrid, Trajectory, run_scheme

__version__ = "0.1.0"
