"""Nonlinear electromechanical-aerodynamic plant with its low-level loops.

This is the synthetic ground truth: inflow lag, rotor torque balance with the
motor circuit, and a pitch actuator with its own circuit.  Internally
everything is SI (rad/s, rad, A); the dataset generators convert to RPM and
degrees at the boundary.

State vector ``[omega, I_m, lam, beta, beta_dot, I_a, z_omega]``.
"""
import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DataError, IntegrationError, InvalidParameterError
from .ode import DEFAULT_DT, TimeGrid, TimeSeries
from .protocols import (BETA_BOX, OMEGA_BOX, OpenLoopSchedule, StaticGridSpec,
                        StepProtocol)

RPM = 2.0 * math.pi / 60.0
DEG = math.pi / 180.0

PLANT_FIELDS = ("rho", "R", "tau_lambda", "J", "k_Q", "k_omega", "L_m", "R_m",
                "V_in", "k_i", "J_a", "D_a", "k_a", "L_a", "R_a", "k_ia",
                "V_in_actuator")


@dataclass(frozen=True)
class PlantParams:
    """Physical parameters (SI).  Defaults are the documented desk rig."""

    rho: float = 1.225
    R: float = 0.127
    tau_lambda: float = 0.005
    J: float = 9.48e-4
    k_Q: float = 6.584e-3
    k_omega: float = 1.0e-5
    L_m: float = 2.0e-6
    R_m: float = 0.002
    V_in: float = 24.0
    k_i: float = 6.584e-3
    J_a: float = 9.24e-3
    D_a: float = 0.0268
    k_a: float = 0.02
    L_a: float = 0.01
    R_a: float = 10.0
    k_ia: float = 0.02
    V_in_actuator: float = 15.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParameterError(f"plant parameter {f.name} must be positive, got {v!r}")

    @property
    def area(self):
        return math.pi * self.R ** 2

    def packed(self):
        return np.array([getattr(self, n) for n in PLANT_FIELDS], dtype=float)

    def replace(self, **changes):
        return replace(self, **changes)

    def electrical_time_constants(self):
        return self.L_m / self.R_m, self.L_a / self.R_a


def _desk_ct():
    # C_T(lam, beta) = 0.0712 + 0.335 beta - 0.447 lam   (beta in rad)
    return ((0.0712, 0.335), (-0.447, 0.0))


def _desk_cq():
    # C_Q = 0.004 + 0.05 beta^2 + lam * C_T(lam, beta)
    return ((0.004, 0.0, 0.05), (0.0712, 0.335, 0.0), (-0.447, 0.0, 0.0))


@dataclass(frozen=True)
class AeroMaps:
    """Quasi-steady coefficient maps as polynomials.

    ``ct[i][j]`` and ``cq[i][j]`` multiply ``lam**i * beta**j``;
    ``lambda_qs[j]`` multiplies ``beta**j``.  ``beta`` is in radians.
    """

    ct: tuple = field(default_factory=_desk_ct)
    cq: tuple = field(default_factory=_desk_cq)
    lambda_qs: tuple = (0.084, 0.275)

    def arrays(self):
        ct = np.atleast_2d(np.asarray(self.ct, dtype=float))
        cq = np.atleast_2d(np.asarray(self.cq, dtype=float))
        lq = np.atleast_1d(np.asarray(self.lambda_qs, dtype=float))
        if not (np.all(np.isfinite(ct)) and np.all(np.isfinite(cq)) and np.all(np.isfinite(lq))):
            raise InvalidParameterError("aero map coefficients must be finite")
        return ct, cq, lq

    def C_T(self, lam, beta):
        return _poly2(self.arrays()[0], lam, beta)

    def C_Q(self, lam, beta):
        return _poly2(self.arrays()[1], lam, beta)

    def lam_qs(self, beta):
        return np.polynomial.polynomial.polyval(beta, self.arrays()[2])


def _poly2(c, lam, beta):
    return np.polynomial.polynomial.polyval2d(lam, beta, c)


@dataclass(frozen=True)
class LowLevelGains:
    """RPM PI and pitch PD gains.

    PI acts on the speed error in rad/s and outputs motor duty in [0, 1];
    the proportional path uses setpoint weight ``pi_setpoint_weight``
    (0 gives the I-P form).  PD acts on pitch in rad and outputs a signed
    actuator duty in [-1, 1] with the derivative on measured pitch rate.
    """

    pi_kp: float = 1e-4
    pi_ki: float = 2e-3
    pi_setpoint_weight: float = 0.0
    pd_kp: float = 10.0
    pd_kd: float = 3.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidParameterError(f"gain {f.name} must be non-negative")

    def packed(self):
        return np.array([self.pi_kp, self.pi_ki, self.pi_setpoint_weight,
                         self.pd_kp, self.pd_kd], dtype=float)


class PlantState(NamedTuple):
    omega: float = 0.0
    I_m: float = 0.0
    lam: float = 0.0
    beta: float = 0.0
    beta_dot: float = 0.0
    I_a: float = 0.0
    z_omega: float = 0.0


def plant_derivative(state, duty, params, maps, reduced=False):
    """Open-loop state rate for duty cycles ``(u_omega, u_beta)``.

    ``u_omega`` is clipped to [0, 1], ``u_beta`` to [-1, 1].  The integrator
    entry of the returned rate is zero.
    """
    _, cq, lq = maps.arrays()
    u_w = min(max(float(duty[0]), 0.0), 1.0)
    u_b = min(max(float(duty[1]), -1.0), 1.0)
    x = np.asarray(state, dtype=float)
    out = np.zeros(7)
    kernels.plant_rates(x, u_w, u_b, params.packed(), cq, lq, bool(reduced), out)
    return PlantState(*out)


def thrust_from_state(state, params, maps):
    """Instantaneous thrust (N) from speed, inflow and pitch."""
    ct = maps.arrays()[0]
    return float(kernels.aero_thrust(params.packed(), ct, float(state[0]),
                                     float(state[2]), float(state[3])))


def static_thrust(omega, beta, params, maps):
    """Quasi-steady thrust (N) at ``omega`` rad/s, ``beta`` rad (arrays ok)."""
    lam = maps.lam_qs(beta)
    return 0.5 * params.rho * params.area * (omega * params.R) ** 2 * maps.C_T(lam, beta)


def static_torque(omega, beta, params, maps):
    lam = maps.lam_qs(beta)
    return 0.5 * params.rho * params.area * (omega * params.R) ** 2 * params.R * maps.C_Q(lam, beta)


def closed_loop_duty(state, refs, gains):
    out = np.empty(2)
    kernels.lowlevel_duty(np.asarray(state, dtype=float), float(refs[0]), float(refs[1]),
                          gains.packed(), out)
    return out


def closed_loop_plant_derivative(state, refs, params, maps, gains, reduced=False):
    """Rate with the low-level loops closed; ``refs = (omega_ref rad/s, beta_ref rad)``."""
    _, cq, lq = maps.arrays()
    out = np.zeros(7)
    duty = np.empty(2)
    kernels.closed_plant_rates(np.asarray(state, dtype=float), float(refs[0]), float(refs[1]),
                               params.packed(), cq, lq, gains.packed(), bool(reduced),
                               duty, out)
    return PlantState(*out)


def equilibrium(params, maps, gains, omega, beta):
    """Fixed point with references equal to ``(omega rad/s, beta rad)``.

    Solved in closed form: quasi-steady inflow, zero pitch current, motor
    current balancing viscous and aerodynamic torque, integrator holding the
    required duty.  Raises if the required duty is outside [0, 1].
    """
    lam = float(maps.lam_qs(beta))
    q = float(static_torque(omega, beta, params, maps))
    i_m = (params.k_omega * omega + q) / params.k_Q
    u_w = (params.R_m * i_m + params.k_i * omega) / params.V_in
    if not 0.0 <= u_w <= 1.0:
        raise InvalidParameterError(
            f"operating point needs motor duty {u_w:.3f} outside [0, 1]")
    if gains.pi_ki <= 0:
        raise InvalidParameterError("pi_ki must be positive to hold an equilibrium")
    z = (u_w - gains.pi_kp * (gains.pi_setpoint_weight * omega - omega)) / gains.pi_ki
    return PlantState(float(omega), i_m, lam, float(beta), 0.0, 0.0, z)


@dataclass(frozen=True)
class LinearizationPoint:
    omega0: float
    beta0: float
    C_Q_omega: float
    C_Q_beta: float
    damping: float
    torque_gain: float
    tau_omega: float
    K_P: float
    K_I: float
    K_beta: float
    a_beta: float
    b_beta: float
    omega_sum: float
    omega_product: float
    beta_sum: float
    beta_product: float
    tau_omega_pair: tuple = None
    tau_beta_pair: tuple = None
    diagnostic: str = ""

    @property
    def ok(self):
        return self.tau_omega_pair is not None and self.tau_beta_pair is not None


def lag_pair(total, product):
    """Roots ``(t1 >= t2)`` of ``t^2 - total t + product``; None if complex."""
    disc = total * total - 4.0 * product
    if disc < 0.0 or product <= 0.0 or total <= 0.0:
        return None
    root = math.sqrt(disc)
    t1 = 0.5 * (total + root)
    return t1, product / t1


def linearize(params, maps, gains, omega0, beta0, rel_step=1e-5):
    """Reduce the closed low-level loops to two-lag time constants.

    The motor is driven by duty, so the current-loop gain of the reduction is
    ``k_Q V_in / R_m`` per unit duty and the back-EMF damping
    ``k_Q k_i / R_m`` joins the viscous and aerodynamic damping.  Torque
    Jacobians are central differences on the quasi-steady torque.
    """
    hw = rel_step * max(abs(omega0), 1.0)
    hb = rel_step * max(abs(beta0), 1.0)
    cqw = (static_torque(omega0 + hw, beta0, params, maps)
           - static_torque(omega0 - hw, beta0, params, maps)) / (2 * hw)
    cqb = (static_torque(omega0, beta0 + hb, params, maps)
           - static_torque(omega0, beta0 - hb, params, maps)) / (2 * hb)
    damping = params.k_omega + params.k_Q * params.k_i / params.R_m + cqw
    if damping == 0:
        raise InvalidParameterError("zero effective rotor damping")
    k_g = params.k_Q * params.V_in / params.R_m
    tau_w = params.J / damping
    K_P = k_g * gains.pi_kp / damping
    K_I = k_g * gains.pi_ki / damping
    K_beta = cqb / damping
    a_b = (params.D_a + params.k_a * params.k_ia / params.R_a) / params.J_a
    b_b = params.k_a * params.V_in_actuator / (params.J_a * params.R_a)
    if K_I == 0 or b_b * gains.pd_kp == 0:
        raise InvalidParameterError("loop gains vanish; no closed-loop time constants")
    w_sum, w_prod = (1.0 + K_P) / K_I, tau_w / K_I
    b_sum, b_prod = (a_b + b_b * gains.pd_kd) / (b_b * gains.pd_kp), 1.0 / (b_b * gains.pd_kp)
    w_pair, b_pair = lag_pair(w_sum, w_prod), lag_pair(b_sum, b_prod)
    notes = []
    if w_pair is None:
        notes.append("RPM loop has complex poles (oscillatory); no real lag pair")
    if b_pair is None:
        notes.append("pitch loop has complex poles (oscillatory); no real lag pair")
    return LinearizationPoint(float(omega0), float(beta0), float(cqw), float(cqb),
                              float(damping), float(k_g), tau_w, K_P, K_I, K_beta,
                              a_b, b_b, w_sum, w_prod, b_sum, b_prod,
                              w_pair, b_pair, "; ".join(notes))


def default_substeps(params, dt, reduced=False):
    """RK4 substeps per sample keeping ``h <= 0.5 * fastest time constant``."""
    fast = [params.tau_lambda]
    if not reduced:
        fast += list(params.electrical_time_constants())
    return max(1, int(math.ceil(dt / (0.5 * min(fast)))))


def apply_deadband(beta_ref, width):
    """Hold the pitch command until it moves more than ``width`` (same units)."""
    beta_ref = np.asarray(beta_ref, dtype=float)
    if width <= 0:
        return beta_ref.copy()
    out = np.empty_like(beta_ref)
    held = beta_ref[0]
    for i, b in enumerate(beta_ref):
        if abs(b - held) > width:
            held = b
        out[i] = held
    return out


def simulate_plant(params, maps, gains, omega_ref_rpm, beta_ref_deg, dt=DEFAULT_DT,
                   x0=None, reduced=False, n_sub=None, t0=0.0):
    """Closed-loop plant response to sampled references (RPM, deg).

    Starts from the equilibrium at the first references unless ``x0`` is
    given.  Returns a :class:`TimeSeries` with the standard channels plus
    plant internals (``lambda``, ``I_m``, ``I_a``, ``u_omega``, ``u_beta``).
    """
    w_ref = np.asarray(omega_ref_rpm, dtype=float) * RPM
    b_ref = np.asarray(beta_ref_deg, dtype=float) * DEG
    if w_ref.shape != b_ref.shape or w_ref.ndim != 1:
        raise DataError("reference arrays must be 1-D and of equal length")
    if x0 is None:
        x0 = equilibrium(params, maps, gains, w_ref[0], b_ref[0])
    ct, cq, lq = maps.arrays()
    n_sub = default_substeps(params, dt, reduced) if n_sub is None else int(n_sub)
    states, duty, thrust, ok = kernels.plant_run(
        params.packed(), ct, cq, lq, gains.packed(), np.asarray(x0, dtype=float),
        w_ref, b_ref, float(dt), n_sub, bool(reduced))
    if not ok:
        k = states.shape[0] - 1
        raise IntegrationError(f"plant state became non-finite at t = {t0 + k * dt:.6g} s",
                               step=k, time=t0 + k * dt)
    grid = TimeGrid(dt, w_ref.size, t0)
    return TimeSeries(grid, {
        "omega_ref": np.asarray(omega_ref_rpm, dtype=float),
        "beta_ref": np.asarray(beta_ref_deg, dtype=float),
        "omega": states[:, 0] / RPM,
        "beta": states[:, 3] / DEG,
        "thrust": thrust,
        "lambda": states[:, 2],
        "I_m": states[:, 1],
        "I_a": states[:, 5],
        "u_omega": duty[:, 0],
        "u_beta": duty[:, 1],
    })


def _add_noise(series, sigma, rng):
    if sigma < 0:
        raise InvalidParameterError("noise sigma must be non-negative")
    if sigma == 0:
        return series
    return series.with_channels(thrust=series["thrust"] + rng.normal(0.0, sigma, len(series)))


STANDARD_CHANNELS = ("omega_ref", "beta_ref", "omega", "beta", "thrust")


def generate_step_record(protocol, level, params, maps, gains, dt=DEFAULT_DT,
                         noise=0.0, rng=None, deadband=0.0):
    """One pre/post step record (steady at the start level, step at ``pre_step``)."""
    n_pre = int(round(protocol.pre_step / dt))
    n_post = int(round(protocol.post_step / dt))
    if protocol.channel == "omega":
        w = np.r_[np.full(n_pre, protocol.start_level), np.full(n_post, level)]
        b = np.full(n_pre + n_post, protocol.hold_level)
    else:
        w = np.full(n_pre + n_post, protocol.hold_level)
        b = np.r_[np.full(n_pre, protocol.start_level), np.full(n_post, level)]
    b_cmd = apply_deadband(b, deadband)
    series = simulate_plant(params, maps, gains, w, b_cmd, dt)
    series = series.with_channels(beta_ref=b)
    return _add_noise(series, noise, rng if rng is not None else np.random.default_rng(0))


def generate_step_campaign(protocols, params, maps, gains, dt=DEFAULT_DT, noise=0.0,
                           seed=0, deadband=0.0):
    """All records of a campaign as ``[(protocol, level, TimeSeries), ...]``."""
    rng = np.random.default_rng(seed)
    out = []
    for proto in protocols:
        for level in proto.end_levels:
            out.append((proto, float(level),
                        generate_step_record(proto, level, params, maps, gains, dt,
                                             noise, rng, deadband)))
    return out


def generate_open_loop(schedule, params, maps, gains, dt=DEFAULT_DT, noise=0.0, seed=0,
                       deadband=0.0):
    """Plant response to a piecewise-constant reference schedule."""
    if not isinstance(schedule, OpenLoopSchedule):
        schedule = OpenLoopSchedule(tuple(tuple(s) for s in schedule))
    w, b = schedule.sample(dt)
    series = simulate_plant(params, maps, gains, w, apply_deadband(b, deadband), dt)
    series = series.with_channels(beta_ref=b)
    return _add_noise(series, noise, np.random.default_rng(seed))


def generate_static_grid(spec, params, maps, gains, noise=0.0, seed=0):
    """Static thrust map acquisition.

    Iterates RPM (outer) and pitch (inner) through the grid as one continuous
    run; at each point waits ``settle_time`` then records ``n_samples`` at
    ``sample_rate`` and averages.  Returns a dict of flat arrays
    ``omega`` (RPM), ``beta`` (deg), ``thrust`` (mean N), ``thrust_std``.
    """
    if not isinstance(spec, StaticGridSpec):
        raise InvalidParameterError("spec must be a StaticGridSpec")
    dt = 1.0 / spec.sample_rate
    n_settle = int(round(spec.settle_time / dt))
    per_point = n_settle + spec.n_samples
    pts = [(w, b) for w in spec.omegas for b in spec.betas]
    w_ref = np.repeat([p[0] for p in pts], per_point)
    b_ref = np.repeat([p[1] for p in pts], per_point)
    series = simulate_plant(params, maps, gains, w_ref, b_ref, dt)
    thrust = series["thrust"]
    if noise > 0:
        thrust = thrust + np.random.default_rng(seed).normal(0.0, noise, thrust.size)
    blocks = thrust.reshape(len(pts), per_point)[:, n_settle:]
    return {
        "omega": np.array([p[0] for p in pts]),
        "beta": np.array([p[1] for p in pts]),
        "thrust": blocks.mean(axis=1),
        "thrust_std": blocks.std(axis=1),
    }


def generate_synthetic_dataset(protocol, params, maps, gains, dt=DEFAULT_DT, noise=0.0,
                               seed=0, deadband=0.0):
    """Simulate a step protocol (list of 5 records) or an open-loop schedule."""
    if isinstance(protocol, StepProtocol):
        rng = np.random.default_rng(seed)
        return [generate_step_record(protocol, lvl, params, maps, gains, dt, noise, rng, deadband)
                for lvl in protocol.end_levels]
    return generate_open_loop(protocol, params, maps, gains, dt, noise, seed, deadband)


def check_in_box(omega_rpm, beta_deg):
    w = np.asarray(omega_rpm)
    b = np.asarray(beta_deg)
    if np.any(w < OMEGA_BOX[0] - 1e-9) or np.any(w > OMEGA_BOX[1] + 1e-9):
        raise InvalidParameterError(f"omega reference leaves the box {OMEGA_BOX} RPM")
    if np.any(b < BETA_BOX[0] - 1e-9) or np.any(b > BETA_BOX[1] + 1e-9):
        raise InvalidParameterError(f"beta reference leaves the box {BETA_BOX} deg")
