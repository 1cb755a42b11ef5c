"""Uniform cell-centred grids on a rectangle and grid functions over them.

Nodes are numbered row-major with the first index running fastest: the node
``(i, j)`` (1-based) has linear index ``(i - 1) + (j - 1) * n1`` and sits at
``((i - 0.5) * h1, (j - 0.5) * h2)``.  Boundary handling lives entirely in the
operator assembly; the grid carries no ghost nodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import InvalidArgumentError, OperatorNotNonnegativeError

__all__ = [
    "Grid",
    "GridFunction",
    "build_grid",
    "inner_product",
    "norm",
    "norm_inf",
    "energy_norm",
    "write_grid_function_csv",
    "read_grid_function_csv",
]


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid with ``n1 x n2`` nodes over ``[0, l1] x [0, l2]``."""

    n1: int
    n2: int
    l1: float = 1.0
    l2: float = 1.0

    def __post_init__(self):
        for name in ("n1", "n2"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("l1", "l2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidArgumentError(f"{name} must be a positive length, got {value!r}")
            object.__setattr__(self, name, float(value))

    @property
    def h1(self) -> float:
        return self.l1 / self.n1

    @property
    def h2(self) -> float:
        return self.l2 / self.n2

    @property
    def cell_area(self) -> float:
        return self.h1 * self.h2

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    @property
    def shape(self) -> tuple[int, int]:
        """Shape ``(n2, n1)`` that turns a flat value vector into a ``[j, i]`` array."""
        return (self.n2, self.n1)

    def index(self, i, j):
        """Linear index of the 1-based node ``(i, j)``."""
        return (np.asarray(i) - 1) + (np.asarray(j) - 1) * self.n1

    def node_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """1-based ``(i, j)`` of every node in linear order."""
        j, i = np.divmod(np.arange(self.size), self.n1)
        return i + 1, j + 1

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(x1, x2)`` in linear order."""
        i, j = self.node_indices()
        return (i - 0.5) * self.h1, (j - 0.5) * self.h2

    def inner(self, y: np.ndarray, v: np.ndarray) -> float:
        # np.sum uses pairwise summation, so the result does not depend on threading
        return float(np.sum(np.asarray(y) * np.asarray(v)) * self.cell_area)

    def norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(self.inner(v, v)))


def build_grid(n1: int, n2: int, l1: float = 1.0, l2: float = 1.0) -> Grid:
    """Create the ``n1 x n2`` cell-centred grid on ``[0, l1] x [0, l2]``."""
    return Grid(n1, n2, l1, l2)


@dataclass(frozen=True)
class GridFunction:
    """Real values attached to every node of a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise InvalidArgumentError(
                f"expected {self.grid.size} values for a {self.grid.n1}x{self.grid.n2} grid, "
                f"got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> GridFunction:
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> GridFunction:
        return cls(grid, np.full(grid.size, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, func) -> GridFunction:
        """Sample ``func(x1, x2)`` (vectorised over node arrays) at the nodes."""
        x1, x2 = grid.coordinates()
        return cls(grid, np.broadcast_to(func(x1, x2), (grid.size,)).astype(float))

    def as_array(self) -> np.ndarray:
        """Values reshaped to ``[j, i]`` for plotting."""
        return self.values.reshape(self.grid.shape)

    def __sub__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def __add__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values)


def _check_same_grid(y: GridFunction, v: GridFunction) -> None:
    if y.grid != v.grid:
        raise InvalidArgumentError(f"grid mismatch: {y.grid} vs {v.grid}")


def inner_product(y: GridFunction, v: GridFunction) -> float:
    """Discrete L2 product ``sum y(x) v(x) h1 h2`` over all nodes."""
    _check_same_grid(y, v)
    return y.grid.inner(y.values, v.values)


def norm(v: GridFunction) -> float:
    return v.grid.norm(v.values)


def norm_inf(v: GridFunction) -> float:
    return float(np.max(np.abs(v.values)))


def energy_norm(v: GridFunction, operator) -> float:
    """Energy norm ``(A v, v)^(1/2)`` for a symmetric non-negative operator.

    Round-off can push the quadratic form slightly below zero; such values are
    clamped.  Anything below ``-10 eps ||v||^2`` raises
    :class:`OperatorNotNonnegativeError`.
    """
    if operator.grid != v.grid:
        raise InvalidArgumentError(f"grid mismatch: {operator.grid} vs {v.grid}")
    energy = v.grid.inner(operator.apply(v.values), v.values)
    if energy < 0:
        if energy < -10 * np.finfo(float).eps * v.grid.inner(v.values, v.values):
            raise OperatorNotNonnegativeError(f"(Av, v) = {energy:.3e} is negative")
        energy = 0.0
    return float(np.sqrt(energy))


def write_grid_function_csv(path, v: GridFunction) -> None:
    """Write ``i,j,x1,x2,value`` rows, one node per line in linear order."""
    i, j = v.grid.node_indices()
    x1, x2 = v.grid.coordinates()
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "x1", "x2", "value"])
        for row in zip(i, j, x1, x2, v.values):
            writer.writerow([int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3])), repr(float(row[4]))])


def read_grid_function_csv(path, grid: Grid) -> GridFunction:
    values = np.zeros(grid.size)
    seen = np.zeros(grid.size, dtype=bool)
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            k = grid.index(int(row["i"]), int(row["j"]))
            values[k] = float(row["value"])
            seen[k] = True
    if not seen.all():
        raise InvalidArgumentError(f"{path}: {int((~seen).sum())} nodes missing")
    return GridFunction(grid, values)
