"""Two- and three-level time stepping for ``dv/dt + A v = phi``.

Homogeneous schemes act on global grid vectors.  Decomposition schemes act on
flat block data (see :mod:`soldecomp.decomposition`) and differ in which part
of the operator matrix goes to the new time level:

* ``vector``            the whole matrix, one coupled CG solve;
* ``ei_diag``           only the diagonal blocks, p independent solves;
* ``atm``               factorised lower/upper triangular halves;
* ``three_level_diag``  diagonal blocks in a three-level scheme.

Every step is a pure function ``state -> state``.  The implicit operator of
the diagonal schemes is exactly ``I + gamma * A_0``, so the subdomain solves
never talk to each other within a step.
"""

from __future__ import annotations

import warnings
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .decomposition import BlockOperator, Decomposition
from .exceptions import BootstrapRequiredError, InvalidArgumentError, NoConvergenceError, StabilityWarning
from .operator import CgConfig, EllipticOperator, solve_shifted

__all__ = [
    "SCHEMES",
    "BLOCK_SCHEMES",
    "THREE_LEVEL_SCHEMES",
    "TimeGrid",
    "SchemeState",
    "Trajectory",
    "default_sigma",
    "stability_threshold",
    "step_two_level_weighted",
    "step_three_level_weighted",
    "bootstrap_first_level",
    "step_vector_weighted",
    "step_explicit_implicit_diag",
    "step_alternating_triangular",
    "step_three_level_diag",
    "initial_state",
    "run_scheme",
]

Forcing = Callable[[float], np.ndarray]

SCHEMES = ("implicit", "cn", "weighted", "three_level", "vector", "ei_diag", "atm", "three_level_diag")
BLOCK_SCHEMES = frozenset({"vector", "ei_diag", "atm", "three_level_diag"})
THREE_LEVEL_SCHEMES = frozenset({"three_level", "three_level_diag"})


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time levels ``t_n = n * T / N`` and the scheme weight ``sigma``."""

    T: float
    N: int
    sigma: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidArgumentError(f"final time must be positive, got {self.T!r}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidArgumentError(f"step count must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def weight(self) -> float:
        if self.sigma is None:
            raise InvalidArgumentError("this scheme needs an explicit weight sigma")
        return float(self.sigma)

    def t(self, n: float) -> float:
        return n * self.tau


@dataclass(frozen=True)
class SchemeState:
    """Solution level ``n`` (and ``n - 1`` for three-level schemes).

    ``current`` and ``previous`` are global grid vectors for homogeneous schemes
    and flat block data for decomposition schemes.  ``forcing`` always returns
    the global right-hand side at a given time.
    """

    kind: str
    n: int
    current: np.ndarray = field(repr=False)
    forcing: Forcing = field(repr=False)
    previous: Optional[np.ndarray] = field(default=None, repr=False)

    def advance(self, new: np.ndarray) -> SchemeState:
        keep = self.current if self.kind in THREE_LEVEL_SCHEMES else None
        return replace(self, n=self.n + 1, current=new, previous=keep)


def default_sigma(kind: str, p: int = 1) -> Optional[float]:
    """Weight used when none is given: the weights of the reference experiments."""
    return {
        "implicit": 1.0,
        "cn": 0.5,
        "weighted": 1.0,
        "three_level": 0.25,
        "vector": 1.0,
        "ei_diag": p / 2,
        "atm": None,
        "three_level_diag": p / 4,
    }[_check_kind(kind)]


def stability_threshold(kind: str, p: int = 1) -> Optional[float]:
    """Smallest weight with a proven unconditional energy estimate (``None``: always stable)."""
    return {
        "implicit": 0.5,
        "cn": 0.5,
        "weighted": 0.5,
        "three_level": 0.25,
        "vector": 0.5,
        "ei_diag": p / 2,
        "atm": None,
        "three_level_diag": p / 4,
    }[_check_kind(kind)]


def _check_kind(kind: str) -> str:
    if kind not in SCHEMES:
        raise InvalidArgumentError(f"unknown scheme {kind!r}; expected one of {', '.join(SCHEMES)}")
    return kind


def _weighted_forcing(forcing: Forcing, tg: TimeGrid, n: int, sigma: float) -> np.ndarray:
    if sigma == 0:
        return np.asarray(forcing(tg.t(n)))
    if sigma == 1:
        return np.asarray(forcing(tg.t(n + 1)))
    return sigma * np.asarray(forcing(tg.t(n + 1))) + (1 - sigma) * np.asarray(forcing(tg.t(n)))


def _require_history(state: SchemeState) -> None:
    if state.previous is None:
        raise BootstrapRequiredError(
            f"three-level step at level {state.n} needs two history levels; bootstrap the first level"
        )


def step_two_level_weighted(
    state: SchemeState, A: EllipticOperator, tg: TimeGrid, cfg: Optional[CgConfig] = None
) -> SchemeState:
    """``(y' - y)/tau + A(sigma y' + (1 - sigma) y) = phi^{n+sigma}``."""
    sigma, tau, y = tg.weight, tg.tau, state.current
    rhs = y - (1 - sigma) * tau * A.apply(y) + tau * _weighted_forcing(state.forcing, tg, state.n, sigma)
    new = solve_shifted(A.apply, sigma * tau, rhs, x0=y, cfg=cfg, diagonal=A.diagonal)
    return state.advance(new)


def bootstrap_first_level(
    state: SchemeState, A: EllipticOperator, tg: TimeGrid, cfg: Optional[CgConfig] = None
) -> SchemeState:
    """One Crank-Nicolson step from level 0, giving a second-order first level."""
    if state.n != 0:
        raise InvalidArgumentError(f"bootstrap starts from level 0, state is at level {state.n}")
    cn = replace(state, kind="cn")
    stepped = step_two_level_weighted(cn, A, replace(tg, sigma=0.5), cfg)
    return replace(state, n=1, current=stepped.current, previous=state.current)


def step_three_level_weighted(
    state: SchemeState, A: EllipticOperator, tg: TimeGrid, cfg: Optional[CgConfig] = None
) -> SchemeState:
    """``(y' - y_)/(2 tau) + A(sigma y' + (1 - 2 sigma) y + sigma y_) = phi^n``."""
    _require_history(state)
    sigma, tau = tg.weight, tg.tau
    y, y_prev = state.current, state.previous
    phi = np.asarray(state.forcing(tg.t(state.n)))
    rhs = y_prev - 2 * tau * A.apply((1 - 2 * sigma) * y + sigma * y_prev) + 2 * tau * phi
    new = solve_shifted(A.apply, 2 * tau * sigma, rhs, x0=y, cfg=cfg, diagonal=A.diagonal)
    return state.advance(new)


def step_vector_weighted(
    state: SchemeState, op: BlockOperator, tg: TimeGrid, cfg: Optional[CgConfig] = None
) -> SchemeState:
    """Weighted scheme for the coupled block system, one CG solve with the full matrix."""
    sigma, tau, w = tg.weight, tg.tau, state.current
    phi = op.decomposition.restrict(_weighted_forcing(state.forcing, tg, state.n, sigma))
    rhs = w - (1 - sigma) * tau * op.full(w) + tau * phi
    new = solve_shifted(op.full, sigma * tau, rhs, x0=w, cfg=cfg, diagonal=op.full_diagonal())
    return state.advance(new)


def step_explicit_implicit_diag(
    state: SchemeState,
    op: BlockOperator,
    tg: TimeGrid,
    cfg: Optional[CgConfig] = None,
    executor: Optional[Executor] = None,
) -> SchemeState:
    """``(w' - w)/tau + A_0(sigma w' + (1 - sigma) w) + (A - A_0) w = phi^{n+1}``."""
    sigma, tau, w = tg.weight, tg.tau, state.current
    phi = op.decomposition.restrict(np.asarray(state.forcing(tg.t(state.n + 1))))
    rhs = w - tau * op.full(w) + sigma * tau * op.diag(w) + tau * phi
    new = op.solve_diag(sigma * tau, rhs, x0=w, cfg=cfg, executor=executor)
    return state.advance(new)


def step_alternating_triangular(
    state: SchemeState,
    op: BlockOperator,
    tg: TimeGrid,
    cfg: Optional[CgConfig] = None,
    executor: Optional[Executor] = None,
) -> SchemeState:
    """``(I + tau/2 A_1)(I + tau/2 A_2)(w' - w)/tau + A w = phi^{n+1/2}``.

    The lower factor is inverted by a forward sweep over subdomains and the
    upper one by a backward sweep; each sweep solves one diagonal block at a
    time.
    """
    d, tau, w = op.decomposition, tg.tau, state.current
    phi = d.restrict(_weighted_forcing(state.forcing, tg, state.n, 0.5))
    rhs = phi - op.full(w)

    u = np.empty_like(rhs)
    partial = np.zeros(d.grid.size)
    for a in range(d.p):
        b = d.component(rhs, a) - 0.5 * tau * op.coupling(a, partial)
        ua = op.solve_diag_component(a, 0.25 * tau, b, x0=b, cfg=cfg, executor=executor)
        u[d.offsets[a] : d.offsets[a + 1]] = ua
        partial += d.extend_component(ua, a)

    z = np.empty_like(rhs)
    partial = np.zeros(d.grid.size)
    for a in reversed(range(d.p)):
        b = d.component(u, a) - 0.5 * tau * op.coupling(a, partial)
        za = op.solve_diag_component(a, 0.25 * tau, b, x0=b, cfg=cfg, executor=executor)
        z[d.offsets[a] : d.offsets[a + 1]] = za
        partial += d.extend_component(za, a)

    return state.advance(w + tau * z)


def step_three_level_diag(
    state: SchemeState,
    op: BlockOperator,
    tg: TimeGrid,
    cfg: Optional[CgConfig] = None,
    executor: Optional[Executor] = None,
) -> SchemeState:
    """Three-level scheme with only ``A_0`` weighted over the three levels.

    ``(w' - w_)/(2 tau) + A_0(sigma w' + (1 - 2 sigma) w + sigma w_) + (A - A_0) w = phi^n``.
    """
    _require_history(state)
    sigma, tau = tg.weight, tg.tau
    w, w_prev = state.current, state.previous
    phi = op.decomposition.restrict(np.asarray(state.forcing(tg.t(state.n))))
    explicit = op.full(w) - 2 * sigma * op.diag(w) + sigma * op.diag(w_prev)
    rhs = w_prev - 2 * tau * explicit + 2 * tau * phi
    new = op.solve_diag(2 * tau * sigma, rhs, x0=w, cfg=cfg, executor=executor)
    return state.advance(new)


def bootstrap_block_first_level(
    state: SchemeState, op: BlockOperator, tg: TimeGrid, cfg: Optional[CgConfig] = None
) -> SchemeState:
    """First level of a block three-level scheme: restriction of one Crank-Nicolson step."""
    if state.n != 0:
        raise InvalidArgumentError(f"bootstrap starts from level 0, state is at level {state.n}")
    d = op.decomposition
    scalar = SchemeState("cn", 0, d.extend(state.current), state.forcing)
    stepped = step_two_level_weighted(scalar, op.operator, replace(tg, sigma=0.5), cfg)
    return replace(state, n=1, current=d.restrict(stepped.current), previous=state.current)


@dataclass
class Trajectory:
    """Recorded levels of one run.

    ``levels[k]`` is the solution at step ``steps[k]``: a global vector, or flat
    block data when ``decomposition`` is set (use :meth:`global_values`).
    """

    kind: str
    time_grid: TimeGrid
    steps: list[int]
    levels: list[np.ndarray]
    decomposition: Optional[Decomposition] = None
    warnings: list[str] = field(default_factory=list)

    @property
    def times(self) -> list[float]:
        return [self.time_grid.t(n) for n in self.steps]

    def global_values(self, k: int) -> np.ndarray:
        level = self.levels[k]
        return level if self.decomposition is None else self.decomposition.extend(level)

    def at_step(self, n: int) -> np.ndarray:
        return self.global_values(self.steps.index(n))


def initial_state(
    kind: str, initial: np.ndarray, forcing: Forcing, decomposition: Optional[Decomposition] = None
) -> SchemeState:
    initial = np.asarray(initial, dtype=float)
    if kind in BLOCK_SCHEMES:
        if decomposition is None:
            raise InvalidArgumentError(f"scheme {kind!r} needs a decomposition")
        return SchemeState(kind, 0, decomposition.restrict(initial), forcing)
    return SchemeState(kind, 0, initial.copy(), forcing)


def run_scheme(
    kind: str,
    operator: EllipticOperator,
    forcing: Forcing,
    initial: np.ndarray,
    time_grid: TimeGrid,
    decomposition: Optional[Decomposition] = None,
    cfg: Optional[CgConfig] = None,
    record: Optional[Iterable[int]] = None,
    executor: Optional[Executor] = None,
) -> Trajectory:
    """Advance ``kind`` from ``initial`` over ``time_grid`` and record levels.

    Parameters
    ----------
    kind : str
        One of :data:`SCHEMES`.  A ``time_grid`` without a weight gets
        :func:`default_sigma` (``implicit``: 1, ``cn``: 1/2, ...).
    record : iterable of int, optional
        Step indices to keep; all levels by default.

    A weight below :func:`stability_threshold` is accepted with a
    :class:`StabilityWarning`.
    """
    _check_kind(kind)
    p = decomposition.p if decomposition is not None else 1
    if time_grid.sigma is None:
        time_grid = replace(time_grid, sigma=default_sigma(kind, p))
    sigma = time_grid.sigma
    notes = []
    threshold = stability_threshold(kind, p)
    if threshold is not None and sigma is not None and sigma < threshold - 1e-15:
        msg = f"sigma = {sigma:g} below the unconditional-stability threshold {threshold:g} of scheme {kind!r}"
        warnings.warn(msg, StabilityWarning, stacklevel=2)
        notes.append(msg)

    keep = set(range(time_grid.N + 1)) if record is None else set(record)
    state = initial_state(kind, initial, forcing, decomposition)
    op = BlockOperator(decomposition, operator) if kind in BLOCK_SCHEMES else None

    if kind in ("implicit", "cn", "weighted"):
        def step(s):
            return step_two_level_weighted(s, operator, time_grid, cfg)
    elif kind == "three_level":
        def step(s):
            if s.n == 0:
                return bootstrap_first_level(s, operator, time_grid, cfg)
            return step_three_level_weighted(s, operator, time_grid, cfg)
    elif kind == "vector":
        def step(s):
            return step_vector_weighted(s, op, time_grid, cfg)
    elif kind == "ei_diag":
        def step(s):
            return step_explicit_implicit_diag(s, op, time_grid, cfg, executor)
    elif kind == "atm":
        def step(s):
            return step_alternating_triangular(s, op, time_grid, cfg, executor)
    else:
        def step(s):
            if s.n == 0:
                return bootstrap_block_first_level(s, op, time_grid, cfg)
            return step_three_level_diag(s, op, time_grid, cfg, executor)

    steps, levels = [], []
    if 0 in keep:
        steps.append(0)
        levels.append(state.current.copy())
    while state.n < time_grid.N:
        try:
            state = step(state)
        except NoConvergenceError as exc:
            raise NoConvergenceError(
                f"scheme {kind!r}, step {state.n} -> {state.n + 1}: {exc}", exc.residual, exc.iterations
            ) from exc
        if state.n in keep:
            steps.append(state.n)
            levels.append(state.current)
    return Trajectory(kind, time_grid, steps, levels, decomposition if op is not None else None, notes)
