"""Reference solutions, error measurement, energy monitors and dense operator checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .decomposition import BlockOperator, Decomposition
from .exceptions import InvalidArgumentError
from .grid import Grid, GridFunction
from .operator import CgConfig, EllipticOperator
from .problems import Problem
from .schemes import BLOCK_SCHEMES, TimeGrid, Trajectory, run_scheme

__all__ = [
    "ErrorRecord",
    "ErrorReport",
    "ConvergenceRow",
    "ConvergenceTable",
    "EnergyMonitorResult",
    "OperatorReport",
    "reference_solution",
    "error_norms",
    "error_field",
    "error_report",
    "convergence_study",
    "energy_monitor",
    "ESTIMATES",
    "dense_matrix",
    "check_operator_inequalities",
    "interface_mass_fraction",
    "REFERENCE_OVERSAMPLING",
    "REFERENCE_CG",
    "MAX_DENSE_NODES",
]

REFERENCE_OVERSAMPLING = 64
# Solve errors of the reference accumulate over 64 N_max steps, so it gets a
# tighter tolerance than the schemes under test.
REFERENCE_CG = CgConfig(rel_tolerance=1e-13, abs_tolerance=1e-16)


def _steps_for(times: Iterable[float], tau: float, what: str) -> list[int]:
    steps = []
    for t in times:
        n = round(t / tau)
        if abs(n * tau - t) > 1e-9 * max(1.0, abs(t)) or n < 0:
            raise InvalidArgumentError(f"{what} time {t!r} is not a multiple of the step {tau!r}")
        steps.append(int(n))
    return steps


def reference_solution(
    operator: EllipticOperator,
    forcing: Callable[[float], np.ndarray],
    initial: np.ndarray,
    T: float,
    checkpoints: Sequence[float],
    n_steps: int,
    cfg: Optional[CgConfig] = None,
) -> list[GridFunction]:
    """Semi-discrete solution at ``checkpoints`` from ``n_steps`` Crank-Nicolson steps over ``[0, T]``.

    Callers choose ``n_steps = 64 * N_max`` (``REFERENCE_OVERSAMPLING``) so that
    the reference time error sits far below the errors being measured.  The
    solves use ``REFERENCE_CG`` unless ``cfg`` is given.
    """
    cfg = cfg or REFERENCE_CG
    tg = TimeGrid(T, n_steps, 0.5)
    steps = _steps_for(checkpoints, tg.tau, "checkpoint")
    if max(steps, default=0) > n_steps:
        raise InvalidArgumentError("checkpoint beyond the final time")
    traj = run_scheme("cn", operator, forcing, initial, tg, record=set(steps), cfg=cfg)
    return [GridFunction(operator.grid, traj.at_step(n)) for n in steps]


def _check_pair(y: GridFunction, v_ref: GridFunction) -> None:
    if y.grid != v_ref.grid:
        raise InvalidArgumentError(f"grid mismatch: {y.grid} vs {v_ref.grid}")


def error_norms(y: GridFunction, v_ref: GridFunction) -> tuple[float, float]:
    """``(||v - y||, ||v - y||_inf)`` with the grid L2 norm."""
    _check_pair(y, v_ref)
    diff = v_ref.values - y.values
    return y.grid.norm(diff), float(np.max(np.abs(diff)))


def error_field(y: GridFunction, v_ref: GridFunction) -> GridFunction:
    _check_pair(y, v_ref)
    return GridFunction(y.grid, v_ref.values - y.values)


@dataclass(frozen=True)
class ErrorRecord:
    t: float
    eps2: float
    epsinf: float


@dataclass
class ErrorReport:
    records: list[ErrorRecord]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        times = [r.t for r in self.records]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidArgumentError("checkpoints must be strictly increasing")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "eps2", "epsinf"])
            for r in self.records:
                writer.writerow([repr(float(r.t)), repr(float(r.eps2)), repr(float(r.epsinf))])


def error_report(trajectory: Trajectory, references: dict[int, GridFunction], metadata=None) -> ErrorReport:
    """Error records at every recorded step that has a reference."""
    records = []
    for k, n in enumerate(trajectory.steps):
        if n in references:
            ref = references[n]
            eps2, epsinf = error_norms(GridFunction(ref.grid, trajectory.global_values(k)), ref)
            records.append(ErrorRecord(trajectory.time_grid.t(n), eps2, epsinf))
    return ErrorReport(records, dict(metadata or {}))


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    tau: float
    eps2: float
    epsinf: float
    order2: float = math.nan
    orderinf: float = math.nan


@dataclass
class ConvergenceTable:
    """Final-time errors for a sequence of halving steps.

    ``order2`` of a row is ``log2(eps(2 tau) / eps(tau))`` against the previous
    row; :attr:`fitted_order2` is the least-squares slope of ``log eps`` over
    ``log tau`` across all rows.
    """

    rows: list[ConvergenceRow]
    metadata: dict = field(default_factory=dict)

    @staticmethod
    def from_errors(ns, taus, eps2, epsinf, metadata=None) -> ConvergenceTable:
        rows = []
        for k, (n, tau, e2, ei) in enumerate(zip(ns, taus, eps2, epsinf)):
            o2 = oi = math.nan
            if k > 0:
                o2 = _order(eps2[k - 1], e2, taus[k - 1] / tau)
                oi = _order(epsinf[k - 1], ei, taus[k - 1] / tau)
            rows.append(ConvergenceRow(int(n), float(tau), float(e2), float(ei), o2, oi))
        return ConvergenceTable(rows, dict(metadata or {}))

    @property
    def orders2(self) -> list[float]:
        return [r.order2 for r in self.rows[1:]]

    @property
    def fitted_order2(self) -> float:
        return _fit([r.tau for r in self.rows], [r.eps2 for r in self.rows])

    @property
    def fitted_orderinf(self) -> float:
        return _fit([r.tau for r in self.rows], [r.epsinf for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["N", "tau", "eps2", "epsinf", "order2", "orderinf"])
            for r in self.rows:
                writer.writerow(
                    [int(r.N), repr(float(r.tau)), repr(float(r.eps2)), repr(float(r.epsinf))]
                    + ["" if math.isnan(o) else repr(float(o)) for o in (r.order2, r.orderinf)]
                )


def _order(coarse: float, fine: float, ratio: float) -> float:
    if coarse <= 0 or fine <= 0:
        return math.nan
    return math.log(coarse / fine) / math.log(ratio)


def _fit(taus, errs) -> float:
    taus, errs = np.asarray(taus, float), np.asarray(errs, float)
    if len(taus) < 2 or np.any(errs <= 0):
        return math.nan
    return float(np.polyfit(np.log(taus), np.log(errs), 1)[0])


def convergence_study(
    problem: Problem,
    scheme: str,
    n_list: Sequence[int],
    sigma: Optional[float] = None,
    decomposition: Optional[Decomposition] = None,
    oversample: int = REFERENCE_OVERSAMPLING,
    reference: Optional[GridFunction] = None,
    cfg: Optional[CgConfig] = None,
    executor=None,
) -> ConvergenceTable:
    """Run ``scheme`` for every step count in ``n_list`` and measure errors at ``T``.

    The reference is the Crank-Nicolson solution with ``oversample * max(n_list)``
    steps unless one is supplied; ``cfg`` only applies to the scheme runs.
    """
    n_list = [int(n) for n in n_list]
    if any(b != 2 * a for a, b in zip(n_list, n_list[1:])):
        raise InvalidArgumentError(f"step counts must double down the table, got {n_list}")
    if reference is None:
        (reference,) = reference_solution(
            problem.operator, problem.forcing, problem.initial, problem.T, [problem.T], oversample * max(n_list)
        )
    taus, eps2, epsinf = [], [], []
    for n in n_list:
        tg = TimeGrid(problem.T, n, sigma)
        traj = run_scheme(
            scheme, problem.operator, problem.forcing, problem.initial, tg,
            decomposition=decomposition, cfg=cfg, record=[n], executor=executor,
        )
        e2, ei = error_norms(GridFunction(problem.grid, traj.at_step(n)), reference)
        taus.append(tg.tau)
        eps2.append(e2)
        epsinf.append(ei)
    meta = {"scheme": scheme, "sigma": sigma, "grid": [problem.grid.n1, problem.grid.n2], "T": problem.T}
    if decomposition is not None:
        meta["p"] = decomposition.p
    return ConvergenceTable.from_errors(n_list, taus, eps2, epsinf, meta)


# Which a-priori estimate applies to which scheme.
ESTIMATES = {
    "implicit": "weighted",
    "cn": "weighted",
    "weighted": "weighted",
    "vector": "vector",
    "ei_diag": "ei_diag",
    "atm": "atm",
    "three_level": "three_level",
    "three_level_diag": "three_level_diag",
}


@dataclass
class EnergyMonitorResult:
    """Both sides of an energy estimate; entry ``k`` refers to level ``k + 1``."""

    estimate: str
    passed: bool
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs


def energy_monitor(
    trajectory: Trajectory,
    operator: EllipticOperator,
    forcing: Callable[[float], np.ndarray],
    estimate: Optional[str] = None,
    rtol: float = 1e-8,
    atol: float = 1e-12,
) -> EnergyMonitorResult:
    """Evaluate both sides of the energy estimate of ``trajectory``'s scheme at every level.

    Two-level estimates bound ``||y^{n+1}||_A^2`` by ``||y^0||_A^2`` plus half
    the accumulated ``tau ||phi||^2`` (the forcing sampled as the scheme does).
    Three-level estimates bound a two-level energy of ``(y^{n+1}, y^n)`` by the
    same energy of ``(y^1, y^0)`` plus half of ``sum_{k=1}^n tau ||phi^k||^2``.
    The check passes iff ``lhs <= rhs (1 + rtol) + atol`` for every ``n``.
    """
    estimate = estimate or ESTIMATES.get(trajectory.kind)
    if estimate not in set(ESTIMATES.values()):
        raise InvalidArgumentError(f"unknown estimate {estimate!r}")
    tg = trajectory.time_grid
    if trajectory.steps != list(range(tg.N + 1)):
        raise InvalidArgumentError("energy monitoring needs every level of the trajectory")
    tau = tg.tau
    block = estimate in BLOCK_SCHEMES
    if block:
        d = trajectory.decomposition
        if d is None:
            raise InvalidArgumentError(f"estimate {estimate!r} needs a block trajectory")
        op = BlockOperator(d, operator)
        apply_full, apply_diag, inner = op.full, op.diag, d.inner

        def phi(t):
            return d.restrict(np.asarray(forcing(t)))
    else:
        apply_full, apply_diag, inner = operator.apply, None, operator.grid.inner

        def phi(t):
            return np.asarray(forcing(t))

    levels = trajectory.levels

    def energy(v):
        return inner(apply_full(v), v)

    lhs, rhs = [], []
    if estimate in ("weighted", "vector", "ei_diag", "atm"):
        shift = {"weighted": tg.sigma, "vector": tg.sigma, "ei_diag": 1.0, "atm": 0.5}[estimate]
        total = energy(levels[0])
        for n in range(tg.N):
            f = shift * phi(tg.t(n + 1)) + (1 - shift) * phi(tg.t(n))
            total += 0.5 * tau * inner(f, f)
            lhs.append(energy(levels[n + 1]))
            rhs.append(total)
    else:
        sigma = tg.sigma

        def three_level_energy(new, old):
            diff = new - old
            mean = 0.5 * (new + old)
            if estimate == "three_level":
                inertia = (sigma - 0.25) * energy(diff)
            else:
                inertia = sigma * inner(apply_diag(diff), diff) - 0.25 * energy(diff)
            return inertia + energy(mean)

        total = three_level_energy(levels[1], levels[0])
        lhs.append(total)
        rhs.append(total)
        for n in range(1, tg.N):
            f = phi(tg.t(n))
            total += 0.5 * tau * inner(f, f)
            lhs.append(three_level_energy(levels[n + 1], levels[n]))
            rhs.append(total)

    lhs, rhs = np.array(lhs), np.array(rhs)
    passed = bool(np.all(lhs <= rhs * (1 + rtol) + atol))
    return EnergyMonitorResult(estimate, passed, lhs, rhs)


MAX_DENSE_NODES = 36


def dense_matrix(apply_op: Callable[[np.ndarray], np.ndarray], n: int) -> np.ndarray:
    """Columns ``apply_op(e_k)`` for the unit vectors of ``R^n``."""
    eye = np.eye(n)
    return np.column_stack([apply_op(eye[:, k]) for k in range(n)])


@dataclass
class OperatorReport:
    """Dense spectral checks of the grid and block operators.

    ``min_eig_*`` are smallest eigenvalues of the symmetric parts; ``*_asymmetry``
    are max-abs entries of ``M - M^T`` (or of ``A_1^T - A_2``).
    """

    p: int
    operator_asymmetry: float
    min_eig_operator_minus_delta: float
    block_asymmetry: float
    min_eig_block: float
    block_rank_deficiency: int
    min_eig_diag_minus_block_over_p: float
    sigma_two_level: float
    min_eig_two_level_c: float
    sigma_three_level: float
    tau: float
    min_eig_three_level_c: float
    triangular_asymmetry: float
    triangular_sum_error: float
    matrices: dict = field(default_factory=dict, repr=False)


def _min_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])


def check_operator_inequalities(
    operator: EllipticOperator,
    decomposition: Decomposition,
    sigma_two_level: Optional[float] = None,
    sigma_three_level: Optional[float] = None,
    tau: float = 1.0,
) -> OperatorReport:
    """Dense eigen-checks of the operator inequalities behind the stability estimates.

    Only for grids of at most 36 nodes.  Builds ``A``, the block matrix ``A``,
    its diagonal part ``A_0`` and triangular halves ``A_1``, ``A_2`` by applying
    the matrix-free operators to unit vectors, then reports the smallest
    eigenvalues of ``A - delta I``, the block matrix, ``A_0 - A/p``,
    ``sigma A_0 - A/2`` (``sigma = p/2`` by default) and
    ``sigma tau^2 A_0 - tau^2 A / 4`` (``sigma = p/4`` by default).
    """
    grid = operator.grid
    if grid.size > MAX_DENSE_NODES:
        raise InvalidArgumentError(f"dense checks are limited to {MAX_DENSE_NODES} nodes, grid has {grid.size}")
    if decomposition.grid != grid:
        raise InvalidArgumentError("decomposition and operator live on different grids")
    p = decomposition.p
    s2 = p / 2 if sigma_two_level is None else float(sigma_two_level)
    s3 = p / 4 if sigma_three_level is None else float(sigma_three_level)
    op = BlockOperator(decomposition, operator)
    n = decomposition.total_size
    a = dense_matrix(operator.apply, grid.size)
    big = dense_matrix(op.full, n)
    a0 = dense_matrix(op.diag, n)
    a1 = dense_matrix(op.lower, n)
    a2 = dense_matrix(op.upper, n)
    eig_big = np.linalg.eigvalsh(0.5 * (big + big.T))
    tol = 1e-10 * max(1.0, float(np.abs(eig_big).max()))
    return OperatorReport(
        p=p,
        operator_asymmetry=float(np.abs(a - a.T).max()),
        min_eig_operator_minus_delta=_min_eig(a - operator.delta * np.eye(grid.size)),
        block_asymmetry=float(np.abs(big - big.T).max()),
        min_eig_block=float(eig_big[0]),
        block_rank_deficiency=int(np.sum(eig_big <= tol)),
        min_eig_diag_minus_block_over_p=_min_eig(a0 - big / p),
        sigma_two_level=s2,
        min_eig_two_level_c=_min_eig(s2 * a0 - 0.5 * big),
        sigma_three_level=s3,
        tau=tau,
        min_eig_three_level_c=_min_eig(tau**2 * (s3 * a0 - 0.25 * big)),
        triangular_asymmetry=float(np.abs(a1.T - a2).max()),
        triangular_sum_error=float(np.abs(a1 + a2 - big).max()),
        matrices={"A": a, "block": big, "diag": a0, "lower": a1, "upper": a2},
    )


def interface_mass_fraction(error: GridFunction, decomposition: Decomposition, layers: int = 4) -> float:
    """Share of ``sum |e| h1 h2`` on nodes within ``layers`` node layers of a block interface."""
    grid = error.grid
    i, j = grid.node_indices()
    i0, j0 = i - 1, j - 1
    near = np.zeros(grid.size, dtype=bool)
    cuts1 = sorted({b.i0 for b in decomposition.blocks if b.i0 > 0} | {b.i1 for b in decomposition.blocks if b.i1 < grid.n1})
    cuts2 = sorted({b.j0 for b in decomposition.blocks if b.j0 > 0} | {b.j1 for b in decomposition.blocks if b.j1 < grid.n2})
    for s in cuts1:
        near |= (i0 >= s - layers) & (i0 < s + layers)
    for s in cuts2:
        near |= (j0 >= s - layers) & (j0 < s + layers)
    mass = np.abs(error.values)
    total = mass.sum()
    return float(mass[near].sum() / total) if total > 0 else 0.0
