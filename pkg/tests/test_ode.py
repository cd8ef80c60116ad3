import numpy as np
import pytest
from scipy.linalg import expm

from vppwiener.errors import DataError, IntegrationError, InvalidParameterError
from vppwiener.model import PUBLISHED_FINAL, STATE_NAMES, system_matrices, wiener_derivative
from vppwiener.ode import TimeGrid, TimeSeries, rk4_step, simulate


def linear_rate(A, B):
    return lambda x, u: A @ x + B @ u


def test_time_grid_validation():
    assert TimeGrid.from_duration(1.0, 0.004).n_steps == 250
    with pytest.raises(InvalidParameterError):
        TimeGrid(dt=0.0, n_steps=3)
    with pytest.raises(InvalidParameterError):
        TimeGrid(dt=0.1, n_steps=0)


def test_timeseries_checks():
    g = TimeGrid(0.1, 4)
    ts = TimeSeries(g, {"a": [1, 2, 3, 4]})
    assert ts.names == ["t", "a"] and len(ts) == 4
    with pytest.raises(DataError):
        TimeSeries(g, {"a": [1, 2, 3]})
    with pytest.raises(DataError):
        TimeSeries(g, {"t": [0, 0.1, 0.3, 0.4]})
    with pytest.raises(DataError):
        ts["missing"]
    w = ts.window(1, 3)
    assert np.allclose(w.t, [0.1, 0.2]) and np.allclose(w["a"], [2, 3])


def test_zoh_linear_system_matches_matrix_exponential():
    A, B = system_matrices(PUBLISHED_FINAL)
    dt = 0.004
    grid = TimeGrid(dt, 500)
    rng = np.random.default_rng(0)
    u = np.repeat(rng.uniform(0, 1, (25, 2)), 20, axis=0)
    res = simulate(linear_rate(A, B), np.zeros(4), u, grid, STATE_NAMES)
    # exact discretization of the ZOH system
    M = expm(np.block([[A, B], [np.zeros((2, 6))]]) * dt)
    Ad, Bd = M[:4, :4], M[:4, 4:]
    x = np.zeros(4)
    for i in range(grid.n_steps - 1):
        x = Ad @ x + Bd @ u[i]
    final = np.array([res[n][-1] for n in STATE_NAMES])
    assert np.allclose(final, x, atol=1e-9)


def test_rk4_fourth_order():
    A, B = system_matrices(PUBLISHED_FINAL)
    f = linear_rate(A, B)
    x0 = np.array([0.1, 0.2, 0.9, 0.8])
    u = np.array([0.5, 0.5])
    exact_M = expm(np.block([[A, B], [np.zeros((2, 6))]]) * 0.2)
    exact = exact_M[:4, :4] @ x0 + exact_M[:4, 4:] @ u
    errs = []
    for n in (4, 8, 16):
        x = x0.copy()
        for _ in range(n):
            x = rk4_step(f, x, u, 0.2 / n)
        errs.append(np.max(np.abs(x - exact)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.7)


def test_simulate_equilibrium_stays_put():
    grid = TimeGrid(0.004, 100)
    x0 = np.array([0.5, 0.4, 0.5, 0.4])
    res = simulate(lambda x, u: np.asarray(wiener_derivative(x, u, PUBLISHED_FINAL)),
                   x0, np.tile([0.5, 0.4], (100, 1)), grid)
    assert np.allclose(res["x0"], 0.5) and np.allclose(res["x1"], 0.4)


def test_simulate_reports_nonfinite_with_time():
    grid = TimeGrid(0.1, 50)

    def blow(x, u):
        with np.errstate(over="ignore"):
            return np.array([x[0] ** 2 * 1e3])

    with pytest.raises(IntegrationError) as info:
        simulate(blow, [1.0], np.zeros(50), grid)
    assert info.value.time is not None


def test_simulate_with_timeseries_input():
    grid = TimeGrid(0.01, 10)
    inp = TimeSeries(grid, {"u": np.ones(10)})
    res = simulate(lambda x, u: u - x, [0.0], inp, grid, ["y"], input_names=["u"])
    assert res["y"][-1] == pytest.approx(1 - np.exp(-0.09), rel=1e-8)
    with pytest.raises(InvalidParameterError):
        simulate(lambda x, u: u, [0.0], inp, grid)
    with pytest.raises(DataError):
        simulate(lambda x, u: u, [0.0], np.ones(5), grid)
