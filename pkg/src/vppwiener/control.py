"""Dual-PID thrust control of the Wiener model and gain tuning.

Both controllers see the same normalized thrust error.  Each has its own
trapezoidal integrator and clamp flag; the filtered derivative is shared.
Outputs are absolute normalized references: a feedforward bias equal to the
initial operating point is added so that zero error holds that point.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import IntegrationError, InvalidParameterError, OptimizerError
from .model import WienerParams, thrust_output
from .ode import TimeGrid, TimeSeries, DEFAULT_DT

MODES = ("combined", "rpm_only")
GAIN_NAMES = ("kp_omega", "ki_omega", "kd_omega", "kp_beta", "ki_beta", "kd_beta")


@dataclass(frozen=True)
class PidGains:
    kp_omega: float = 0.0
    ki_omega: float = 0.0
    kd_omega: float = 0.0
    kp_beta: float = 0.0
    ki_beta: float = 0.0
    kd_beta: float = 0.0

    def __post_init__(self):
        for name in GAIN_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"gain {name} must be finite")

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float).ravel()
        if v.size != 6:
            raise InvalidParameterError(f"expected 6 gains, got {v.size}")
        return cls(*(float(g) for g in v))

    def to_vector(self):
        return np.array([getattr(self, n) for n in GAIN_NAMES])

    def as_dict(self):
        return {n: getattr(self, n) for n in GAIN_NAMES}


# Gains reported for the bench rig.
PUBLISHED_RPM_ONLY = PidGains(7.47, 67.7, 0.15)
PUBLISHED_COMBINED = PidGains(9.82, 115.3, 0.318, 9.0, 70.44, 0.25)


@dataclass
class ControllerState:
    e_int: np.ndarray = field(default_factory=lambda: np.zeros(2))
    e_prev: float = 0.0
    d_filt: float = 0.0
    clamp: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=bool))

    def copy(self):
        return ControllerState(self.e_int.copy(), self.e_prev, self.d_filt, self.clamp.copy())


@dataclass(frozen=True)
class ControlRunConfig:
    """Setpoint profile and loop settings (normalized units).

    The default profile steps ``levels[0] -> levels[1]`` at ``t_opt/3`` and
    ``levels[1] -> levels[2]`` at ``2 t_opt/3``.  ``setpoint`` overrides it
    with an explicit array on the grid.
    """

    t_opt: float = 10.0
    alpha: float = 1e-7
    dt: float = DEFAULT_DT
    t_filter: float = 0.02
    omega_limits: tuple = (1.0 / 3.0, 1.0)
    beta_limits: tuple = (0.0, 1.0)
    levels: tuple = (0.1, 0.8, 0.3)
    setpoint: tuple = None
    rpm_only_beta: float = 1.0

    def __post_init__(self):
        if not self.t_opt > 0:
            raise InvalidParameterError("t_opt must be positive")
        if not self.alpha >= 0:
            raise InvalidParameterError("alpha must be non-negative")
        if not self.dt > 0:
            raise InvalidParameterError("dt must be positive")
        if self.t_filter < self.dt:
            raise InvalidParameterError("derivative filter constant must be >= dt")
        for lo, hi in (self.omega_limits, self.beta_limits):
            if not 0.0 <= lo <= hi <= 1.0:
                raise InvalidParameterError("actuator limits must be ordered within [0, 1]")
        if self.setpoint is not None and len(self.setpoint) != self.n_steps:
            raise InvalidParameterError("explicit setpoint must have n_steps samples")

    @property
    def n_steps(self):
        return int(round(self.t_opt / self.dt))

    @property
    def grid(self):
        return TimeGrid(self.dt, self.n_steps)

    @property
    def step_times(self):
        return (self.t_opt / 3.0, 2.0 * self.t_opt / 3.0)

    def setpoint_array(self):
        if self.setpoint is not None:
            return np.asarray(self.setpoint, dtype=float)
        t = self.grid.t
        t1, t2 = self.step_times
        sp = np.full(t.size, float(self.levels[0]))
        sp[t >= t1 - 1e-9] = self.levels[1]
        sp[t >= t2 - 1e-9] = self.levels[2]
        return sp

    def limits(self, mode="combined"):
        b = self.beta_limits
        if mode == "rpm_only":
            b = (self.rpm_only_beta, self.rpm_only_beta)
        elif mode not in MODES:
            raise InvalidParameterError(f"unknown control mode {mode!r}")
        return np.array([*self.omega_limits, *b], dtype=float)

    def replace(self, **changes):
        return replace(self, **changes)


def pid_step(e, state, gains, config, dt=None, bias=(0.0, 0.0), mode="combined"):
    """One controller sample.  Returns ``(omega_ref, beta_ref, next_state)``."""
    dt = config.dt if dt is None else dt
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    new = state.copy()
    out = np.empty(2)
    new.d_filt = kernels.pid_update(float(e), new.e_int, float(state.e_prev), float(state.d_filt),
                                    new.clamp, np.asarray(bias, dtype=float),
                                    _as_gains(gains).to_vector(), config.limits(mode),
                                    dt, dt / config.t_filter, out)
    new.e_prev = float(e)
    return float(out[0]), float(out[1]), new


def _as_gains(g):
    return g if isinstance(g, PidGains) else PidGains.from_vector(g)


def _effective(gains, mode):
    g = _as_gains(gains).to_vector()
    if mode == "rpm_only":
        g[3:] = 0.0
    return g


def initial_references(model, config, mode="combined", target=None):
    """Steady references matching the initial setpoint.

    Both modes start from the same point: pitch at ``config.rpm_only_beta``
    and the RPM reference solved by bisection for the target thrust.  If the
    target lies below the thrust at minimum RPM, the pitch is lowered instead
    (combined mode only).  Unreachable targets give the nearest range end.
    """
    lim = config.limits(mode)
    w_lo, w_hi, b_lo, b_hi = lim
    b0 = min(max(config.rpm_only_beta, b_lo), b_hi)
    target = config.setpoint_array()[0] if target is None else float(target)
    coeffs = model.coeffs

    def h(w, b):
        return float(thrust_output(w, b, coeffs))

    def bisect(fn, a, b):
        # fn increasing on [a, b]
        if fn(a) >= target:
            return a
        if fn(b) <= target:
            return b
        for _ in range(200):
            m = 0.5 * (a + b)
            if fn(m) < target:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    if h(w_lo, b0) > target and b_lo < b0:
        return np.array([w_lo, bisect(lambda b: h(w_lo, b), b_lo, b0)])
    return np.array([bisect(lambda w: h(w, b0), w_lo, w_hi), b0])


def closed_loop_simulate(model, gains, config=ControlRunConfig(), mode="combined", x0=None):
    """Closed loop around the Wiener model; returns a :class:`TimeSeries`."""
    if not isinstance(model, WienerParams):
        raise InvalidParameterError("model must be WienerParams")
    g = _effective(gains, mode)
    sp = config.setpoint_array()
    bias = initial_references(model, config, mode)
    if x0 is None:
        x0 = np.array([bias[0], bias[1], bias[0], bias[1]])
    thrust, refs, states, ints, flags, ise = kernels.closed_loop_run(
        model.taus, model.coeffs, np.asarray(x0, dtype=float), sp, g, bias,
        config.limits(mode), config.dt, config.t_filter)
    if not math.isfinite(ise):
        raise IntegrationError("closed-loop simulation became non-finite")
    return TimeSeries(config.grid, {
        "setpoint": sp, "thrust": thrust,
        "omega_ref": refs[:, 0], "beta_ref": refs[:, 1],
        "omega": states[:, 0], "beta": states[:, 1],
        "x_omega": states[:, 2], "x_beta": states[:, 3],
        "e_int_omega": ints[:, 0], "e_int_beta": ints[:, 1],
        "clamp_omega": flags[:, 0].astype(float), "clamp_beta": flags[:, 1].astype(float),
    })


def control_cost(gains, model, config=ControlRunConfig(), mode="combined"):
    """Squared tracking error over ``[0, t_opt]`` plus ``alpha * |p_c|^2``.

    Returns ``inf`` when the closed loop diverges.
    """
    g = _effective(gains, mode)
    bias = initial_references(model, config, mode)
    x0 = np.array([bias[0], bias[1], bias[0], bias[1]])
    ise = kernels.closed_loop_ise(model.taus, model.coeffs, x0, config.setpoint_array(),
                                  g, bias, config.limits(mode), config.dt, config.t_filter)
    if not math.isfinite(ise):
        return math.inf
    return float(ise + config.alpha * float(g @ g))


def segment_error_integral(series, t_start, t_stop=None):
    """Rectangle-rule squared-error integral over ``[t_start, t_stop)``."""
    t = series.t
    sel = t >= t_start - 1e-9
    if t_stop is not None:
        sel &= t < t_stop - 1e-9
    e = series["setpoint"][sel] - series["thrust"][sel]
    return float(e @ e * series.grid.dt)


@dataclass
class StepMetrics:
    settling_time: float
    overshoot: float
    final_value: float


def step_metrics(series, t_step, t_end, band=0.05):
    """Settling time into ``+-band`` of the step amplitude and overshoot.

    Both are relative to the setpoint change at ``t_step``; the window ends
    at ``t_end`` (e.g. the next setpoint change).
    """
    t = series.t
    sp = series["setpoint"]
    k0 = int(np.searchsorted(t, t_step - 1e-9))
    k1 = int(np.searchsorted(t, t_end - 1e-9))
    before, after = sp[k0 - 1], sp[k0]
    amp = after - before
    if amp == 0:
        raise InvalidParameterError("no setpoint change at t_step")
    y = series["thrust"][k0:k1]
    dev = np.abs(y - after) > band * abs(amp)
    outside = np.nonzero(dev)[0]
    settle = 0.0 if outside.size == 0 else (outside[-1] + 1) * series.grid.dt
    over = float(np.max((y - after) * np.sign(amp))) / abs(amp)
    return StepMetrics(float(settle), max(over, 0.0), float(y[-1]))


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------

NM_DEFAULTS = {"xtol": 1e-6, "ftol": 1e-10, "max_evals": 2000,
               "rel_step": 0.05, "zero_step": 0.00025}


def nelder_mead(objective, x0, options=None):
    """Minimize ``objective`` with the Nelder-Mead simplex method.

    Coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5.
    Stops when the simplex size (max distance to the best vertex) drops
    below ``xtol``, the spread of vertex values below ``ftol``, or after
    ``max_evals`` objective calls.  Non-finite values count as ``+inf``.

    Returns
    -------
    x_best, f_best, trace
        ``trace`` holds ``f`` (best value per iteration), ``nfev`` and the
        stop ``reason``.
    """
    opt = dict(NM_DEFAULTS)
    if options:
        unknown = set(options) - set(opt)
        if unknown:
            raise InvalidParameterError(f"unknown Nelder-Mead options: {sorted(unknown)}")
        opt.update(options)
    x0 = np.asarray(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x0)):
        raise OptimizerError("starting point is not finite")
    n = x0.size
    nfev = 0

    def f(x):
        nonlocal nfev
        nfev += 1
        v = objective(x)
        v = float(v)
        return v if math.isfinite(v) else math.inf

    f0 = f(x0)
    if not math.isfinite(f0):
        raise OptimizerError("objective is not finite at the starting point")
    sim = np.empty((n + 1, n))
    sim[0] = x0
    for i in range(n):
        x = x0.copy()
        x[i] = x[i] * (1.0 + opt["rel_step"]) if x[i] != 0 else opt["zero_step"]
        sim[i + 1] = x
    fs = np.empty(n + 1)
    fs[0] = f0
    for i in range(1, n + 1):
        fs[i] = f(sim[i])
    trace = {"f": [], "nfev": 0, "reason": "max_evals"}
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        trace["f"].append(float(fs[0]))
        size = float(np.max(np.linalg.norm(sim[1:] - sim[0], axis=1)))
        if size < opt["xtol"]:
            trace["reason"] = "xtol"
            break
        if math.isfinite(fs[-1]) and fs[-1] - fs[0] < opt["ftol"]:
            trace["reason"] = "ftol"
            break
        if nfev >= opt["max_evals"]:
            break
        c = sim[:-1].mean(axis=0)
        xr = c + (c - sim[-1])
        fr = f(xr)
        if fs[0] <= fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[0]:
            xe = c + 2.0 * (xr - c)
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = c + 0.5 * (xr - c)
            fc = f(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = c + 0.5 * (sim[-1] - c)
            fc = f(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
            fs[i] = f(sim[i])
    trace["nfev"] = nfev
    return sim[0].copy(), float(fs[0]), trace


# ---------------------------------------------------------------------------
# Gain tuning
# ---------------------------------------------------------------------------

DEFAULT_START = PidGains(5.0, 50.0, 0.1, 5.0, 50.0, 0.1)


@dataclass
class TuningResult:
    gains: PidGains
    cost: float
    mode: str
    stage_costs: list = field(default_factory=list)
    stage_gains: list = field(default_factory=list)
    nfev: int = 0


def tune_gains(model, config=ControlRunConfig(), mode="combined", start=DEFAULT_START,
               options=None):
    """Two-stage Nelder-Mead gain optimization.

    Stage 1 optimizes the P and I gains with derivative gains at zero; stage 2
    optimizes the derivative gains with P and I frozen.  ``rpm_only`` pins the
    pitch reference and tunes the three RPM gains only.  Negative gains are
    rejected as infeasible.
    """
    if mode not in MODES:
        raise InvalidParameterError(f"unknown control mode {mode!r}")
    base = _as_gains(start).to_vector()
    loops = (0,) if mode == "rpm_only" else (0, 3)
    pi_idx = [j + k for j in loops for k in (0, 1)]
    d_idx = [j + 2 for j in loops]
    full = np.zeros(6)
    full[pi_idx] = base[pi_idx]
    result = TuningResult(PidGains(), math.inf, mode)

    def run_stage(idx, frozen):
        def obj(x):
            if np.any(x < 0):
                return math.inf
            g = frozen.copy()
            g[idx] = x
            return control_cost(g, model, config, mode)

        x, fx, tr = nelder_mead(obj, frozen[idx], options)
        g = frozen.copy()
        g[idx] = x
        result.nfev += tr["nfev"]
        result.stage_costs.append(fx)
        result.stage_gains.append(PidGains.from_vector(g))
        return g, fx

    full, _ = run_stage(pi_idx, full)
    start_d = full.copy()
    start_d[d_idx] = base[d_idx]
    if control_cost(start_d, model, config, mode) == math.inf:
        start_d[d_idx] = 0.0
    full, cost = run_stage(d_idx, start_d)
    result.gains = PidGains.from_vector(full)
    result.cost = cost
    return result
