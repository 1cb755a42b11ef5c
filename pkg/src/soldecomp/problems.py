"""Model problems and right-hand-side providers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import InvalidArgumentError
from .grid import Grid
from .operator import CoefficientField, EllipticOperator, assemble

__all__ = ["Box", "BoxForcing", "FunctionForcing", "Problem", "model_problem", "DEFAULT_BOXES"]


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[x1_min, x1_max] x [x2_min, x2_max]`` carrying a constant value."""

    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float
    value: float

    def __post_init__(self):
        if self.x1_min > self.x1_max or self.x2_min > self.x2_max:
            raise InvalidArgumentError(f"degenerate box {self}")

    def contains(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        return (x1 >= self.x1_min) & (x1 <= self.x1_max) & (x2 >= self.x2_min) & (x2 <= self.x2_max)


class BoxForcing:
    """Time-independent piecewise-constant forcing; later boxes override earlier ones."""

    def __init__(self, grid: Grid, boxes: Sequence[Box]):
        self.grid = grid
        self.boxes = tuple(boxes)
        x1, x2 = grid.coordinates()
        values = np.zeros(grid.size)
        for box in self.boxes:
            values[box.contains(x1, x2)] = box.value
        values.setflags(write=False)
        self._values = values

    time_dependent = False

    def __call__(self, t: float) -> np.ndarray:
        return self._values


class FunctionForcing:
    """Forcing sampled from a vectorised ``f(x1, x2, t)`` at the nodes."""

    time_dependent = True

    def __init__(self, grid: Grid, func: Callable[[np.ndarray, np.ndarray, float], np.ndarray]):
        self.grid = grid
        self.func = func
        self._x1, self._x2 = grid.coordinates()

    def __call__(self, t: float) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.func(self._x1, self._x2, t), dtype=float), (self.grid.size,))


# Heat source of the reference experiments on the unit square.
DEFAULT_BOXES = (Box(0.5, 0.75, 0.0, 0.75, 25.0),)


@dataclass
class Problem:
    """Semi-discrete Cauchy problem ``dv/dt + A v = phi``, ``v(0) = initial``."""

    grid: Grid
    coefficients: CoefficientField
    forcing: Callable[[float], np.ndarray]
    T: float
    initial: Optional[np.ndarray] = None
    operator: EllipticOperator = field(init=False, repr=False)

    def __post_init__(self):
        self.operator = assemble(self.grid, self.coefficients)
        if self.initial is None:
            self.initial = np.zeros(self.grid.size)


def model_problem(n: int = 64, T: float = 0.1) -> Problem:
    """Unit square, ``k = c = 1``, source 25 on ``[0.5, 0.75] x [0, 0.75]``, zero initial data."""
    grid = Grid(n, n, 1.0, 1.0)
    return Problem(grid, CoefficientField(1.0, 1.0, k1=1.0, k2=1.0, c1=1.0, c2=1.0), BoxForcing(grid, DEFAULT_BOXES), T)

