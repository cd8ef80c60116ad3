"""Fixed-step RK4 integration with zero-order-hold inputs."""
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, IntegrationError, InvalidParameterError

DEFAULT_DT = 0.004  # 250 Hz acquisition rate


@dataclass(frozen=True)
class TimeGrid:
    dt: float = DEFAULT_DT
    n_steps: int = 1
    t0: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise InvalidParameterError(f"dt must be positive, got {self.dt!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidParameterError(f"n_steps must be an integer >= 1, got {self.n_steps!r}")

    @classmethod
    def from_duration(cls, duration, dt=DEFAULT_DT, t0=0.0):
        return cls(dt, int(round(duration / dt)), t0)

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(self.n_steps)

    @property
    def duration(self):
        return self.dt * self.n_steps


@dataclass
class TimeSeries:
    """Uniformly sampled multi-channel record.

    ``channels`` maps names to 1-D arrays of length ``grid.n_steps``; the time
    channel ``t`` is always present and derived from the grid when omitted.
    """

    grid: TimeGrid
    channels: dict = field(default_factory=dict)

    def __post_init__(self):
        chans = {"t": self.grid.t}
        for name, values in self.channels.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != (self.grid.n_steps,):
                raise DataError(
                    f"channel {name!r} has shape {arr.shape}, expected ({self.grid.n_steps},)")
            chans[name] = arr
        t = chans["t"]
        if self.grid.n_steps > 1:
            steps = np.diff(t)
            if np.any(steps <= 0) or not np.allclose(steps, self.grid.dt, rtol=1e-6, atol=1e-9):
                raise DataError("time channel is not uniformly spaced at dt")
        self.channels = chans

    def __getitem__(self, name):
        try:
            return self.channels[name]
        except KeyError:
            raise DataError(f"missing channel {name!r}") from None

    def __contains__(self, name):
        return name in self.channels

    def __len__(self):
        return self.grid.n_steps

    @property
    def t(self):
        return self.channels["t"]

    @property
    def names(self):
        return list(self.channels)

    def require(self, *names):
        missing = [n for n in names if n not in self.channels]
        if missing:
            raise DataError(f"missing channel(s): {', '.join(missing)}")

    def with_channels(self, **new):
        chans = dict(self.channels)
        chans.update(new)
        return TimeSeries(self.grid, chans)

    def window(self, start, stop):
        """Sub-record of samples ``[start, stop)`` (indices)."""
        n = len(range(*slice(start, stop).indices(self.grid.n_steps)))
        grid = TimeGrid(self.grid.dt, n, float(self.t[start]))
        return TimeSeries(grid, {k: v[start:stop] for k, v in self.channels.items()})


def rk4_step(rate_fn, x, u, dt, step=None):
    """One classical RK4 step with the input held constant over ``dt``."""
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = _checked(rate_fn(x, u), step)
    k2 = _checked(rate_fn(x + 0.5 * dt * k1, u), step)
    k3 = _checked(rate_fn(x + 0.5 * dt * k2, u), step)
    k4 = _checked(rate_fn(x + dt * k3, u), step)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _checked(rate, step):
    rate = np.asarray(rate, dtype=float)
    if not np.all(np.isfinite(rate)):
        raise IntegrationError(f"non-finite state rate at step {step}", step=step)
    return rate


def simulate(rate_fn, x0, inputs, grid, state_names=None, input_names=None):
    """Integrate ``x' = rate_fn(x, u)`` over ``grid``.

    ``inputs`` is either an array of shape ``(n_steps, m)`` / ``(n_steps,)``
    or a :class:`TimeSeries` together with ``input_names``.  Sample ``i`` of
    the result is the state at ``t0 + i*dt``; input sample ``i`` is held over
    ``[t_i, t_{i+1})``.
    """
    if isinstance(inputs, TimeSeries):
        if input_names is None:
            raise InvalidParameterError("input_names required with a TimeSeries input")
        inputs.require(*input_names)
        u = np.column_stack([inputs[n] for n in input_names])
    else:
        u = np.asarray(inputs, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
    if u.shape[0] != grid.n_steps:
        raise DataError(f"input has {u.shape[0]} samples, grid has {grid.n_steps}")
    x = np.array(x0, dtype=float)
    traj = np.empty((grid.n_steps, x.size))
    traj[0] = x
    for i in range(grid.n_steps - 1):
        try:
            x = rk4_step(rate_fn, x, u[i], grid.dt, step=i)
        except IntegrationError as exc:
            raise IntegrationError(f"{exc} (t = {grid.t0 + i * grid.dt:.6g} s)",
                                   step=i, time=grid.t0 + i * grid.dt) from None
        traj[i + 1] = x
    names = state_names or [f"x{k}" for k in range(x.size)]
    return TimeSeries(grid, {n: traj[:, k] for k, n in enumerate(names)})
