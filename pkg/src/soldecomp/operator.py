"""Five-point diffusion-reaction operator with Neumann closure and a CG solver.

The operator is assembled as the sum of two directional parts. Each part
couples neighbouring nodes through ``k`` sampled at the face midpoint and
carries half of the reaction term ``c`` on its diagonal.  Faces on the outer
boundary are dropped, which is the homogeneous Neumann closure and keeps each
part symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import LinearOperator, cg

from .exceptions import CoefficientBoundError, InvalidArgumentError, NoConvergenceError
from .grid import Grid, GridFunction

__all__ = [
    "CoefficientField",
    "EllipticOperator",
    "CgConfig",
    "assemble",
    "apply",
    "solve_shifted",
    "write_operator_coo",
]

Coefficient = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def _sample(coef: Coefficient, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    if callable(coef):
        values = coef(x1, x2)
    else:
        values = coef
    return np.broadcast_to(np.asarray(values, dtype=float), x1.shape).copy()


@dataclass(frozen=True)
class CoefficientField:
    """Diffusion ``k(x1, x2)`` and reaction ``c(x1, x2)`` with optional bounds.

    Coefficients may be constants or vectorised callables.  When a bound is
    left as ``None`` only positivity of the samples is enforced.
    """

    k: Coefficient = 1.0
    c: Coefficient = 1.0
    k1: Optional[float] = None
    k2: Optional[float] = None
    c1: Optional[float] = None
    c2: Optional[float] = None

    def sample_k(self, x1, x2) -> np.ndarray:
        values = _sample(self.k, x1, x2)
        _check_bounds("k", values, self.k1, self.k2)
        return values

    def sample_c(self, x1, x2) -> np.ndarray:
        values = _sample(self.c, x1, x2)
        _check_bounds("c", values, self.c1, self.c2)
        return values


def _check_bounds(name, values, lower, upper):
    if values.size == 0:
        return
    if not np.all(np.isfinite(values)) or values.min() <= 0:
        raise CoefficientBoundError(f"{name} must be positive, sampled minimum {values.min()!r}")
    if lower is not None and values.min() < lower:
        raise CoefficientBoundError(f"{name} sample {values.min()!r} below lower bound {lower!r}")
    if upper is not None and values.max() > upper:
        raise CoefficientBoundError(f"{name} sample {values.max()!r} above upper bound {upper!r}")


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """Symmetric grid operator ``A = A1 + A2`` stored in compressed-row form."""

    grid: Grid
    part1: sps.csr_matrix = field(repr=False)
    part2: sps.csr_matrix = field(repr=False)
    delta: float = 0.0
    """Lower bound ``min c`` of the spectrum."""

    @cached_property
    def matrix(self) -> sps.csr_matrix:
        total = (self.part1 + self.part2).tocsr()
        total.sort_indices()
        return total

    @cached_property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def apply_part(self, direction: int, v: np.ndarray) -> np.ndarray:
        if direction not in (1, 2):
            raise InvalidArgumentError(f"direction must be 1 or 2, got {direction!r}")
        return (self.part1 if direction == 1 else self.part2) @ v

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _directional_part(grid: Grid, coeff: CoefficientField, direction: int, c_nodes: np.ndarray):
    n, h = (grid.n1, grid.h1) if direction == 1 else (grid.n2, grid.h2)
    i, j = grid.node_indices()
    left = np.flatnonzero((i if direction == 1 else j) < n)
    right = left + (1 if direction == 1 else grid.n1)
    x1, x2 = grid.coordinates()
    if direction == 1:
        fx1, fx2 = x1[left] + 0.5 * h, x2[left]
    else:
        fx1, fx2 = x1[left], x2[left] + 0.5 * h
    a = coeff.sample_k(fx1, fx2) / h**2
    rows = np.concatenate([left, right, left, right, np.arange(grid.size)])
    cols = np.concatenate([left, right, right, left, np.arange(grid.size)])
    vals = np.concatenate([a, a, -a, -a, 0.5 * c_nodes])
    part = sps.coo_matrix((vals, (rows, cols)), shape=(grid.size, grid.size)).tocsr()
    part.sum_duplicates()
    part.sort_indices()
    return part


def assemble(grid: Grid, coeff: CoefficientField) -> EllipticOperator:
    """Assemble both directional parts of the five-point operator on ``grid``."""
    x1, x2 = grid.coordinates()
    c_nodes = coeff.sample_c(x1, x2)
    part1 = _directional_part(grid, coeff, 1, c_nodes)
    part2 = _directional_part(grid, coeff, 2, c_nodes)
    delta = coeff.c1 if coeff.c1 is not None else float(c_nodes.min())
    return EllipticOperator(grid, part1, part2, delta)


def apply(operator: EllipticOperator, v: GridFunction) -> GridFunction:
    if operator.grid != v.grid:
        raise InvalidArgumentError(f"grid mismatch: {operator.grid} vs {v.grid}")
    return GridFunction(v.grid, operator.apply(v.values))


@dataclass(frozen=True)
class CgConfig:
    rel_tolerance: float = 1e-10
    abs_tolerance: float = 1e-14
    max_iterations: int = 10000

    def __post_init__(self):
        if not (self.rel_tolerance > 0 and self.abs_tolerance > 0):
            raise InvalidArgumentError("CG tolerances must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be a positive integer")


def solve_shifted(
    apply_op: Callable[[np.ndarray], np.ndarray],
    gamma: float,
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    cfg: Optional[CgConfig] = None,
    diagonal: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Solve ``(I + gamma * A) x = b`` by (Jacobi-preconditioned) conjugate gradients.

    Parameters
    ----------
    apply_op : callable
        Symmetric positive semi-definite action ``v -> A v``.
    gamma : float
        Non-negative shift scale; ``gamma == 0`` returns ``b`` unchanged.
    b : ndarray
        Right-hand side.
    x0 : ndarray, optional
        Initial guess, usually the previous time level.
    cfg : CgConfig, optional
        Stopping rule ``||b - (I + gamma A) x|| < max(rel_tolerance ||b||, abs_tolerance)``
        in the Euclidean norm of the value vector.
    diagonal : ndarray, optional
        Diagonal of ``A``; enables Jacobi preconditioning.

    Returns
    -------
    ndarray
        The approximate solution.

    Raises
    ------
    NoConvergenceError
        If ``cfg.max_iterations`` is reached first.
    """
    if gamma < 0:
        raise InvalidArgumentError(f"gamma must be non-negative, got {gamma!r}")
    cfg = cfg or CgConfig()
    b = np.asarray(b, dtype=float)
    if gamma == 0:
        return b.copy()
    n = b.shape[0]
    system = LinearOperator((n, n), matvec=lambda v: v + gamma * apply_op(v), dtype=float)
    precond = None
    if diagonal is not None:
        inv = 1.0 / (1.0 + gamma * np.asarray(diagonal, dtype=float))
        precond = LinearOperator((n, n), matvec=lambda r: inv * r, dtype=float)
    x, info = cg(
        system,
        b,
        x0=None if x0 is None else np.array(x0, dtype=float),
        rtol=cfg.rel_tolerance,
        atol=cfg.abs_tolerance,
        maxiter=cfg.max_iterations,
        M=precond,
    )
    if info != 0:
        residual = float(np.linalg.norm(b - system.matvec(x)))
        raise NoConvergenceError(
            f"CG did not converge in {cfg.max_iterations} iterations (residual {residual:.3e})",
            residual=residual,
            iterations=cfg.max_iterations,
        )
    return x


def write_operator_coo(path, operator: EllipticOperator) -> None:
    """Dump ``row col value`` triples sorted by ``(row, col)``."""
    coo = operator.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
