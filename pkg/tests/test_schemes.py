import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_block_parts, dense_restriction
from soldecomp import (
    BootstrapRequiredError,
    CgConfig,
    CoefficientField,
    Grid,
    InvalidArgumentError,
    NoConvergenceError,
    StabilityWarning,
    TimeGrid,
    assemble,
    decompose,
    run_scheme,
)
from soldecomp.decomposition import BlockOperator
from soldecomp.schemes import (
    SCHEMES,
    SchemeState,
    default_sigma,
    stability_threshold,
    step_three_level_diag,
    step_three_level_weighted,
)

TIGHT = CgConfig(1e-14, 1e-16, 5000)
GRID = Grid(6, 5, 1.0, 0.8)


def k_var(x1, x2):
    return 1.0 + x1 + 0.5 * x2**2


def forcing_for(grid):
    x1, x2 = grid.coordinates()

    def f(t):
        return np.sin(3 * x1 + 2 * t) * np.exp(-x2) + 4 * t

    return f


def dense_oracle(kind, A, f, y0, T, N, sigma, d=None):
    """Scheme equations applied with dense linear algebra; returns global levels."""
    tau = T / N
    n = A.shape[0]
    I = np.eye(n)
    if d is None:
        levels = [y0.copy()]
        if kind == "three_level":
            y1 = np.linalg.solve(I + 0.5 * tau * A, y0 - 0.5 * tau * A @ y0 + tau * 0.5 * (f(0) + f(tau)))
            levels.append(y1)
            for k in range(1, N):
                y, yp = levels[-1], levels[-2]
                rhs = yp - 2 * tau * A @ ((1 - 2 * sigma) * y + sigma * yp) + 2 * tau * f(k * tau)
                levels.append(np.linalg.solve(I + 2 * tau * sigma * A, rhs))
            return levels
        for k in range(N):
            y = levels[-1]
            phi = sigma * f((k + 1) * tau) + (1 - sigma) * f(k * tau)
            levels.append(np.linalg.solve(I + sigma * tau * A, y - (1 - sigma) * tau * A @ y + tau * phi))
        return levels

    R = dense_restriction(d)
    full, diag, lower, upper = dense_block_parts(d, A)
    J = np.eye(d.total_size)
    ws = [R @ y0]
    if kind == "three_level_diag":
        y1 = np.linalg.solve(I + 0.5 * tau * A, y0 - 0.5 * tau * A @ y0 + tau * 0.5 * (f(0) + f(tau)))
        ws.append(R @ y1)
    for k in range(len(ws) - 1, N):
        w = ws[-1]
        if kind == "vector":
            phi = R @ (sigma * f((k + 1) * tau) + (1 - sigma) * f(k * tau))
            new = np.linalg.solve(J + sigma * tau * full, w - (1 - sigma) * tau * full @ w + tau * phi)
        elif kind == "ei_diag":
            rhs = w - tau * full @ w + sigma * tau * diag @ w + tau * R @ f((k + 1) * tau)
            new = np.linalg.solve(J + sigma * tau * diag, rhs)
        elif kind == "atm":
            phi = R @ (0.5 * (f(k * tau) + f((k + 1) * tau)))
            B = (J + 0.5 * tau * lower) @ (J + 0.5 * tau * upper)
            new = w + tau * np.linalg.solve(B, phi - full @ w)
        else:
            wp = ws[-2]
            rhs = wp - 2 * tau * (full @ w - 2 * sigma * diag @ w + sigma * diag @ wp) + 2 * tau * R @ f(k * tau)
            new = np.linalg.solve(J + 2 * tau * sigma * diag, rhs)
        ws.append(new)
    return [R.T @ w for w in ws]


CASES = [
    ("implicit", 1.0, None),
    ("cn", 0.5, None),
    ("weighted", 0.7, None),
    ("three_level", 0.25, None),
    ("three_level", 0.4, None),
    ("vector", 0.6, dict(parts1=2, parts2=2, flavor="overlapping", layers=1)),
    ("vector", 1.0, dict(parts1=3, parts2=1)),
    ("ei_diag", 1.0, dict(parts1=2, parts2=2, coloring="red_black")),
    ("ei_diag", 2.0, dict(parts1=2, parts2=2)),
    ("ei_diag", 2.5, dict(parts1=2, parts2=2, flavor="overlapping", layers=1)),
    ("atm", None, dict(parts1=2, parts2=2)),
    ("atm", None, dict(parts1=3, parts2=2, coloring="red_black")),
    ("three_level_diag", 0.5, dict(parts1=2, parts2=2, coloring="red_black")),
    ("three_level_diag", 1.0, dict(parts1=2, parts2=2)),
]


@pytest.mark.parametrize("kind,sigma,dkw", CASES)
def test_against_dense_oracle(kind, sigma, dkw, rng):
    A = assemble(GRID, CoefficientField(k_var, 1.0))
    d = decompose(GRID, **dkw) if dkw else None
    f = forcing_for(GRID)
    y0 = rng.normal(size=GRID.size)
    T, N = 0.3, 7
    traj = run_scheme(kind, A, f, y0, TimeGrid(T, N, sigma), decomposition=d, cfg=TIGHT)
    expected = dense_oracle(kind, A.to_dense(), f, y0, T, N, sigma, d)
    for k in range(N + 1):
        np.testing.assert_allclose(traj.global_values(k), expected[k], rtol=1e-9, atol=1e-10)


@pytest.mark.parametrize("kind", SCHEMES)
def test_discrete_steady_state_is_preserved(kind):
    A = assemble(GRID, CoefficientField(k_var, 2.0))
    d = decompose(GRID, 2, 2, coloring="red_black")
    phi = np.linspace(-1, 3, GRID.size)
    steady = np.linalg.solve(A.to_dense(), phi)
    traj = run_scheme(kind, A, lambda t: phi, steady, TimeGrid(1.0, 9), decomposition=d, cfg=TIGHT)
    for k in range(len(traj.steps)):
        np.testing.assert_allclose(traj.global_values(k), steady, rtol=1e-9, atol=1e-10)


def test_weights_and_thresholds():
    assert [default_sigma(k, 2) for k in SCHEMES] == [1.0, 0.5, 1.0, 0.25, 1.0, 1.0, None, 0.5]
    assert [stability_threshold(k, 4) for k in SCHEMES] == [0.5, 0.5, 0.5, 0.25, 0.5, 2.0, None, 1.0]
    with pytest.raises(InvalidArgumentError):
        default_sigma("leapfrog")


def test_weight_below_threshold_warns():
    A = assemble(GRID, CoefficientField())
    d = decompose(GRID, 2, 2, coloring="red_black")
    with pytest.warns(StabilityWarning, match="threshold 1"):
        traj = run_scheme("ei_diag", A, lambda t: np.zeros(GRID.size), np.ones(GRID.size), TimeGrid(0.1, 2, 0.5), d)
    assert traj.warnings and "ei_diag" in traj.warnings[0]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_scheme("ei_diag", A, lambda t: np.zeros(GRID.size), np.ones(GRID.size), TimeGrid(0.1, 2, 1.0), d)


def test_time_grid_validation():
    for args in [(0.0, 10), (1.0, 0), (1.0, 2.5), (float("inf"), 3)]:
        with pytest.raises(InvalidArgumentError):
            TimeGrid(*args)
    tg = TimeGrid(0.5, 4)
    assert tg.tau == 0.125 and tg.t(3) == 0.375
    with pytest.raises(InvalidArgumentError):
        tg.weight


def test_three_level_steps_need_history():
    A = assemble(GRID, CoefficientField())
    state = SchemeState("three_level", 0, np.ones(GRID.size), lambda t: np.zeros(GRID.size))
    with pytest.raises(BootstrapRequiredError):
        step_three_level_weighted(state, A, TimeGrid(1.0, 4, 0.25))
    d = decompose(GRID, 2, 2)
    op = BlockOperator(d, A)
    block_state = SchemeState("three_level_diag", 0, d.restrict(np.ones(GRID.size)), lambda t: np.zeros(GRID.size))
    with pytest.raises(BootstrapRequiredError):
        step_three_level_diag(block_state, op, TimeGrid(1.0, 4, 1.0))


def test_argument_errors():
    A = assemble(GRID, CoefficientField())
    zero = np.zeros(GRID.size)
    with pytest.raises(InvalidArgumentError):
        run_scheme("ei_diag", A, lambda t: zero, zero, TimeGrid(1.0, 2))
    with pytest.raises(InvalidArgumentError):
        run_scheme("leapfrog", A, lambda t: zero, zero, TimeGrid(1.0, 2))


def test_recording_subset_and_times():
    A = assemble(GRID, CoefficientField())
    traj = run_scheme("implicit", A, lambda t: np.ones(GRID.size), np.zeros(GRID.size), TimeGrid(1.0, 10), record=[0, 5, 10])
    assert traj.steps == [0, 5, 10]
    assert traj.times == [0.0, 0.5, 1.0]
    with pytest.raises(ValueError):
        traj.at_step(3)


def test_solver_failure_names_scheme_and_step():
    A = assemble(Grid(16, 16), CoefficientField())
    f = forcing_for(A.grid)
    with pytest.raises(NoConvergenceError, match=r"scheme 'implicit', step 0 -> 1"):
        run_scheme("implicit", A, f, np.zeros(A.grid.size), TimeGrid(1.0, 2), cfg=CgConfig(1e-14, 1e-16, 1))


@pytest.mark.parametrize("kind", ["ei_diag", "atm", "three_level_diag"])
def test_threads_do_not_change_results(kind):
    g = Grid(16, 12)
    A = assemble(g, CoefficientField(k_var, 1.0))
    d = decompose(g, 4, 3, coloring="red_black")
    f = forcing_for(g)
    tg = TimeGrid(0.1, 5)
    serial = run_scheme(kind, A, f, np.zeros(g.size), tg, d)
    with ThreadPoolExecutor(4) as pool:
        threaded = run_scheme(kind, A, f, np.zeros(g.size), tg, d, executor=pool)
    for a, b in zip(serial.levels, threaded.levels):
        assert np.array_equal(a, b)


@settings(max_examples=20, deadline=None)
@given(
    st.sampled_from(["weighted", "vector", "ei_diag", "atm"]),
    st.floats(0.0, 1.0),
    st.floats(1e-3, 2.0),
    st.integers(0, 2**32 - 1),
)
def test_homogeneous_energy_does_not_grow(kind, extra, tau, seed):
    """Above the threshold weight the energy norm of a free solution never increases."""
    g = Grid(6, 6)
    A = assemble(g, CoefficientField(k_var, 1.0))
    d = decompose(g, 2, 2, coloring="red_black")
    threshold = stability_threshold(kind, d.p)
    if threshold is None:
        sigma = None
    elif kind == "ei_diag":
        sigma = threshold + extra
    else:
        sigma = min(1.0, threshold + extra)
    y0 = np.random.default_rng(seed).normal(size=g.size)
    traj = run_scheme(kind, A, lambda t: np.zeros(g.size), y0, TimeGrid(5 * tau, 5, sigma), d, cfg=TIGHT)
    if kind == "weighted":
        energies = [g.inner(A.apply(v), v) for v in traj.levels]
    else:
        op = BlockOperator(d, A)
        energies = [d.inner(op.full(w), w) for w in traj.levels]
    assert all(b <= a * (1 + 1e-9) + 1e-14 for a, b in zip(energies, energies[1:]))
