import numpy as np
import pytest

from vppwiener import kernels
from vppwiener.model import Normalization, PUBLISHED_FINAL
from vppwiener.ode import TimeGrid, TimeSeries
from vppwiener.plant import AeroMaps, LowLevelGains, PlantParams
from vppwiener.protocols import default_open_loop_schedule


@pytest.fixture(scope="session")
def rig():
    return PlantParams(), AeroMaps(), LowLevelGains()


def wiener_dataset(params, schedule=None, dt=0.004, norm=Normalization()):
    """Open-loop record produced by the Wiener model itself (physical units)."""
    schedule = schedule or default_open_loop_schedule()
    w, b = schedule.sample(dt)
    uw, ub = norm.omega(w), norm.beta(b)
    x0 = np.array([uw[0], ub[0], uw[0], ub[0]])
    states, y = kernels.wiener_run(params.taus, params.coeffs, x0, uw, ub, dt)
    return TimeSeries(TimeGrid(dt, w.size), {
        "omega_ref": w, "beta_ref": b, "omega": norm.omega_inv(states[:, 0]),
        "beta": norm.beta_inv(states[:, 1]), "thrust": norm.thrust_inv(y)})


@pytest.fixture(scope="session")
def short_schedule():
    return default_open_loop_schedule(seed=3, n_per_part=3, hold=1.5)


@pytest.fixture(scope="session")
def model_data(short_schedule):
    return wiener_dataset(PUBLISHED_FINAL, short_schedule)
