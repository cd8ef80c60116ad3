"""Gradient-descent refinement of the Wiener parameters.

The cost is the mean tracking error of the simulated thrust against an
open-loop record,

    J(p) = (1/N) sum_i 0.5 (T_hat_i(p) - T_i)^2 dt,

and its gradient comes from forward sensitivities ``s = dx/dp`` integrated
alongside the state with the same RK4 stages.
"""
import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DataError, DivergenceError, InvalidParameterError
from .model import (PARAM_NAMES, Normalization, WienerParams,
                    output_jacobians)
from .ode import TimeSeries

TAU_LIMITS = (1e-3, 2.0)


@dataclass(frozen=True)
class FineTuneConfig:
    """Descent settings.

    ``eta_tau`` and ``eta_coeff`` are the learning rates of the two parameter
    groups.  With ``scaling="gauss-newton"`` each component step is further
    divided by the Gauss-Newton curvature diagonal, so that ``eta = 1`` is a
    full diagonal Newton step; ``scaling="none"`` is the plain update rule.
    ``momentum`` adds an optional heavy-ball term (0 disables it).
    ``freeze`` names parameters that are held fixed and ``overrides`` sets
    values before the descent starts.
    """

    eta_tau: float = 0.5
    eta_coeff: float = 0.5
    stop_threshold: float = 1e-14
    max_iters: int = 350
    max_halvings: int = 10
    momentum: float = 0.0
    scaling: str = "gauss-newton"
    tau_limits: tuple = TAU_LIMITS
    divergence_factor: float = 10.0
    freeze: tuple = ()
    overrides: tuple = ()  # (name, value) pairs

    def __post_init__(self):
        if not (self.eta_tau > 0 and self.eta_coeff > 0):
            raise InvalidParameterError("learning rates must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidParameterError("max_iters must be an integer >= 1")
        if self.max_halvings < 0 or self.stop_threshold < 0:
            raise InvalidParameterError("max_halvings and stop_threshold must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError("momentum must lie in [0, 1)")
        if self.scaling not in ("gauss-newton", "none"):
            raise InvalidParameterError(f"unknown scaling {self.scaling!r}")
        if not 0 < self.tau_limits[0] < self.tau_limits[1]:
            raise InvalidParameterError("tau_limits must be ordered and positive")
        for name in (*self.freeze, *(k for k, _ in self.overrides)):
            if name not in PARAM_NAMES:
                raise InvalidParameterError(f"unknown parameter {name!r}")

    @property
    def eta_vector(self):
        return np.array([self.eta_tau] * 4 + [self.eta_coeff] * 5)

    @property
    def free_mask(self):
        return np.array([n not in self.freeze for n in PARAM_NAMES])


class SensitivityState(NamedTuple):
    s: np.ndarray   # (4, 9) dx/dp
    z: np.ndarray   # (9,) dT_hat/dp


@dataclass
class LearningCurve:
    costs: list = field(default_factory=list)
    etas: list = field(default_factory=list)      # step scale accepted per iteration
    halvings: list = field(default_factory=list)

    def __len__(self):
        return len(self.costs)

    @property
    def reduction(self):
        return 1.0 - self.costs[-1] / self.costs[0] if self.costs and self.costs[0] else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "cost", "step_scale", "halvings"])
            for i, c in enumerate(self.costs):
                eta = self.etas[i - 1] if i else 1.0
                hv = self.halvings[i - 1] if i else 0
                w.writerow([i, repr(float(c)), repr(float(eta)), hv])


@dataclass
class FineTuneResult:
    params: WienerParams
    curve: LearningCurve
    initial: WienerParams
    stop_reason: str


class Dataset(NamedTuple):
    """Normalized arrays used by the cost kernel."""

    u_w: np.ndarray
    u_b: np.ndarray
    y: np.ndarray
    dt: float
    x0: np.ndarray


def prepare(dataset, norm=Normalization()):
    """Normalize a physical-unit record (RPM, deg, N) for the cost kernel.

    The initial state is the steady state of the first references.
    """
    if isinstance(dataset, Dataset):
        return dataset
    if not isinstance(dataset, TimeSeries):
        raise DataError("dataset must be a TimeSeries")
    dataset.require("omega_ref", "beta_ref", "thrust")
    if len(dataset) < 2:
        raise DataError("dataset needs at least two samples")
    u_w = np.ascontiguousarray(norm.omega(dataset["omega_ref"]), dtype=float)
    u_b = np.ascontiguousarray(norm.beta(dataset["beta_ref"]), dtype=float)
    y = np.ascontiguousarray(norm.thrust(dataset["thrust"]), dtype=float)
    if not (np.all(np.isfinite(u_w)) and np.all(np.isfinite(u_b)) and np.all(np.isfinite(y))):
        raise DataError("dataset contains non-finite samples")
    x0 = np.array([u_w[0], u_b[0], u_w[0], u_b[0]])
    return Dataset(u_w, u_b, y, float(dataset.grid.dt), x0)


def _params(p):
    return p if isinstance(p, WienerParams) else WienerParams.from_vector(p)


def _evaluate(params, data, want_grad):
    p = _params(params)
    cost_, grad, diag = kernels.wiener_cost_grad(p.taus, p.coeffs, data.x0, data.u_w,
                                                 data.u_b, data.y, data.dt, want_grad)
    return float(cost_), grad, diag


def cost(params, dataset, norm=Normalization()):
    """Discretized tracking cost; ``nan`` if the simulation blew up."""
    return _evaluate(params, prepare(dataset, norm), False)[0]


def gradient(params, dataset, norm=Normalization()):
    """Forward-sensitivity gradient of :func:`cost` (9-vector)."""
    return _evaluate(params, prepare(dataset, norm), True)[1]


def cost_and_gradient(params, dataset, norm=Normalization()):
    c, g, _ = _evaluate(params, prepare(dataset, norm), True)
    return c, g


def sensitivity_rhs(state, sens, inp, params):
    """Sensitivity rates and output sensitivity at one instant.

    Parameters
    ----------
    state : (4,) array, ``[omega, beta, x_omega, x_beta]``
    sens : (4, 9) array or :class:`SensitivityState`
    inp : ``(omega_ref, beta_ref)``
    params : WienerParams or 9-vector

    Returns
    -------
    (sdot, z)
        ``sdot`` is ``A s + dA/dp x + dB/dp u`` column-wise (zero for the
        coefficient columns); ``z = dh/dx s + dh/dc``.
    """
    p = _params(params)
    s = sens.s if isinstance(sens, SensitivityState) else np.asarray(sens, dtype=float)
    x = np.asarray(state, dtype=float)
    _, sdot = kernels.sensitivity_rates(x, np.ascontiguousarray(s), float(inp[0]),
                                        float(inp[1]), p.taus)
    dh_dw, dh_db, mono = output_jacobians(x[0], x[1], p.coeffs)
    z = dh_dw * s[0] + dh_db * s[1]
    z[4:] += mono
    return SensitivityState(sdot, z)


def finite_difference_gradient(params, dataset, rel_step=1e-6, norm=Normalization()):
    """Central differences of :func:`cost`, step ``rel_step * max(|p_k|, 1e-3)``."""
    data = prepare(dataset, norm)
    p = _params(params).to_vector()
    g = np.zeros(9)
    for k in range(9):
        h = rel_step * max(abs(p[k]), 1e-3)
        up, dn = p.copy(), p.copy()
        up[k] += h
        dn[k] -= h
        g[k] = (_evaluate(up, data, False)[0] - _evaluate(dn, data, False)[0]) / (2 * h)
    return g


def _project(p, config):
    q = p.copy()
    q[:4] = np.clip(q[:4], *config.tau_limits)
    return q


def gradient_descent(p0, dataset, config=FineTuneConfig(), norm=Normalization()):
    """Fixed-rate descent with step halving on cost increase.

    With ``config.momentum > 0`` a heavy-ball term is added; a momentum step
    that would raise the cost is discarded and the velocity reset before the
    plain step is tried.  Stops when two consecutive costs differ by less
    than ``config.stop_threshold``, when no step size out of
    ``max_halvings`` halvings reduces the cost, or after ``max_iters``
    iterations.
    """
    data = prepare(dataset, norm)
    p = _params(p0).replace(**dict(config.overrides)).to_vector()
    p = _project(p, config)
    initial = WienerParams.from_vector(p)
    free = config.free_mask
    eta = config.eta_vector
    j, g, d = _evaluate(p, data, True)
    if not math.isfinite(j):
        raise DivergenceError("cost is not finite at the starting parameters")
    j0 = j
    curve = LearningCurve([j])
    reason = "max_iters"
    velocity = np.zeros(9)
    for _ in range(config.max_iters):
        step = eta * g
        if config.scaling == "gauss-newton":
            step = step / np.maximum(d, 1e-12 * max(float(d.max()), 1e-300))
        step = np.where(free, step, 0.0)
        scale, halving, accepted = 1.0, 0, False
        if config.momentum > 0:
            velocity = config.momentum * velocity - step
            q = _project(p + velocity, config)
            jq = _evaluate(q, data, False)[0]
            accepted = math.isfinite(jq) and jq <= j
            if not accepted:
                velocity[:] = 0.0
        if not accepted:
            for halving in range(config.max_halvings + 1):
                q = _project(p - scale * step, config)
                jq = _evaluate(q, data, False)[0]
                if math.isfinite(jq) and jq <= j:
                    accepted = True
                    break
                scale *= 0.5
            if not accepted:
                if config.max_halvings > 0:
                    reason = "no_descent"
                    break
                # plain update rule: the step is taken regardless
                scale = 1.0
            if config.momentum > 0:
                velocity = -scale * step
        if not math.isfinite(jq) or jq > config.divergence_factor * j0:
            raise DivergenceError(
                f"cost diverged ({jq:.3g} > {config.divergence_factor} x {j0:.3g}); "
                "reduce the learning rate")
        p = q
        prev = j
        j, g, d = _evaluate(p, data, True)
        curve.costs.append(j)
        curve.etas.append(scale)
        curve.halvings.append(halving)
        if abs(prev - j) < config.stop_threshold:
            reason = "converged"
            break
    return FineTuneResult(WienerParams.from_vector(p), curve, initial, reason)
