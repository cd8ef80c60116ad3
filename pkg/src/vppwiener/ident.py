"""Initial Wiener model identification.

Two independent pieces: a least-squares fit of the static thrust polynomial
on a grid of settled operating points, and two-lag time-constant fits of
normalized thrust step responses.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (DataError, DegenerateGridError, InvalidParameterError,
                     NoValidExperimentsError, StepTooSmallError)
from .model import Normalization, WienerParams, monomials

MONOMIAL_LABELS = ("w^2", "w*b", "w^2*b", "w*b^2", "w^3")


@dataclass
class StaticMapFit:
    coeffs: np.ndarray
    adjusted_r2: float
    r2: float
    residuals: np.ndarray
    n_points: int
    units: str = "physical"

    def predict(self, omega, beta):
        return monomials(omega, beta) @ self.coeffs


def adjusted_r2(y, residuals, k=5):
    """Adjusted R^2 with ``k`` regressors (no intercept), centred total sum."""
    y = np.asarray(y, dtype=float)
    n = y.size
    ss_res = float(np.sum(np.asarray(residuals) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_res == 0.0:
        return 1.0, 1.0
    if ss_tot == 0.0 or n - k - 1 <= 0:
        return float("nan"), float("nan")
    r2 = 1.0 - ss_res / ss_tot
    return r2, 1.0 - (1.0 - r2) * (n - 1) / (n - k - 1)


def fit_static_map(omega, beta, thrust, beta_range=None, units="physical"):
    """Ordinary least squares on ``[w^2, w b, w^2 b, w b^2, w^3]``.

    Inputs are RPM / degrees / newtons for ``units="physical"`` or already
    normalized for ``units="normalized"``.  ``beta_range`` truncates the
    grid (inclusive) before fitting.
    """
    omega = np.asarray(omega, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float).ravel()
    thrust = np.asarray(thrust, dtype=float).ravel()
    if not (omega.size == beta.size == thrust.size):
        raise DataError("omega, beta and thrust must have equal length")
    if beta_range is not None:
        keep = (beta >= beta_range[0] - 1e-9) & (beta <= beta_range[1] + 1e-9)
        omega, beta, thrust = omega[keep], beta[keep], thrust[keep]
    X = monomials(omega, beta)
    if len(set(zip(omega, beta))) < 5:
        raise DegenerateGridError("need at least 5 distinct grid points")
    scale = np.linalg.norm(X, axis=0)
    if np.any(scale == 0) or np.linalg.matrix_rank(X / scale) < 5:
        raise DegenerateGridError("static-map design matrix is rank deficient")
    sol, *_ = np.linalg.lstsq(X / scale, thrust, rcond=None)
    coeffs = sol / scale
    resid = thrust - X @ coeffs
    r2, adj = adjusted_r2(thrust, resid)
    return StaticMapFit(coeffs, adj, r2, resid, thrust.size, units)


def fit_static_map_normalized(grid, norm=Normalization(), beta_range=(-5.0, 10.0)):
    """Fit the normalized-basis coefficients directly from a physical grid."""
    keep = (grid["beta"] >= beta_range[0] - 1e-9) & (grid["beta"] <= beta_range[1] + 1e-9)
    return fit_static_map(norm.omega(grid["omega"][keep]), norm.beta(grid["beta"][keep]),
                          norm.thrust(grid["thrust"][keep]), units="normalized")


def thrust_coefficient(thrust, omega_rpm, rho=1.225, diameter=0.254):
    """``C_T = T / (rho n^2 D^4)`` with ``n`` in rev/s (``n = RPM / 60``)."""
    omega_rpm = np.asarray(omega_rpm, dtype=float)
    if np.any(omega_rpm == 0):
        raise InvalidParameterError("thrust coefficient undefined at zero speed")
    n = omega_rpm / 60.0
    ct = np.asarray(thrust, dtype=float) / (rho * n ** 2 * diameter ** 4)
    return float(ct) if ct.ndim == 0 else ct


def second_order_step_response(t, tau_1, tau_2):
    """Unit step response of ``1 / ((tau_1 s + 1)(tau_2 s + 1))``; zero for t < 0."""
    if not (tau_1 > 0 and tau_2 > 0):
        raise InvalidParameterError("time constants must be positive")
    t = np.asarray(t, dtype=float)
    tp = np.maximum(t, 0.0)
    if abs(tau_1 - tau_2) <= 1e-9 * max(tau_1, tau_2):
        tau = 0.5 * (tau_1 + tau_2)
        y = 1.0 - (1.0 + tp / tau) * np.exp(-tp / tau)
    else:
        y = 1.0 - (tau_1 * np.exp(-tp / tau_1) - tau_2 * np.exp(-tp / tau_2)) / (tau_1 - tau_2)
    y = np.where(t > 0, y, 0.0)
    return float(y) if y.ndim == 0 else y


@dataclass
class StepResponse:
    t: np.ndarray          # seconds since the step
    y: np.ndarray          # normalized response
    pre_level: float
    post_level: float
    noise_sigma: float

    @property
    def amplitude(self):
        return self.post_level - self.pre_level


def normalize_step_response(series, step_time, channel="thrust", window=1.0):
    """Scale a step record to start at 0 and settle at 1.

    Baselines are means over the final ``window`` seconds before the step
    and before the end of the record.  Raises :class:`StepTooSmallError`
    when the amplitude does not exceed three per-sample noise deviations.
    """
    series.require(channel)
    t = series.t
    v = series[channel]
    dt = series.grid.dt
    k_step = int(round((step_time - series.grid.t0) / dt))
    n_win = max(1, int(round(window / dt)))
    if k_step < n_win or len(series) - k_step < n_win:
        raise DataError("record too short around the step for the baseline windows")
    pre = v[k_step - n_win:k_step]
    post = v[-n_win:]
    sigma = math.sqrt(0.5 * (np.var(pre) + np.var(post)))
    lo, hi = float(pre.mean()), float(post.mean())
    if abs(hi - lo) <= 3.0 * sigma:
        raise StepTooSmallError(
            f"step amplitude {hi - lo:.4g} within noise floor (3 sigma = {3 * sigma:.4g})")
    y = (v[k_step:] - lo) / (hi - lo)
    return StepResponse(t[k_step:] - t[k_step], y, lo, hi, sigma)


@dataclass
class TimeConstantFit:
    tau_1: float
    tau_2: float
    residual: float
    warning: str = ""

    @property
    def poor(self):
        return bool(self.warning)


POOR_FIT_RMS = 0.2
TAU_BOUNDS = (1e-3, 2.0)


def _sse(y, t, t1, t2):
    r = y - second_order_step_response(t, t1, t2)
    return float(r @ r)


def fit_time_constants(t, y, grid_size=20, bounds=TAU_BOUNDS):
    """Least-squares two-lag fit with grid-seeded Nelder-Mead refinement.

    The search runs in log-time-constant space; the best grid point of a
    ``grid_size`` x ``grid_size`` log grid over ``bounds`` is refined.
    Returns ``tau_1 >= tau_2``.
    """
    from .control import nelder_mead

    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.size < 4:
        raise DataError("need matching t and y with at least 4 samples")
    taus = np.geomspace(bounds[0], bounds[1], grid_size)
    best = (math.inf, None)
    for i, a in enumerate(taus):
        for b in taus[: i + 1]:
            f = _sse(y, t, a, b)
            if f < best[0]:
                best = (f, (a, b))
    lo, hi = math.log(1e-5), math.log(20.0)

    def objective(q):
        if q[0] < lo or q[1] < lo or q[0] > hi or q[1] > hi:
            return math.inf
        return _sse(y, t, math.exp(q[0]), math.exp(q[1]))

    x0 = np.log(np.array(best[1]))
    x, f, _ = nelder_mead(objective, x0, {"xtol": 1e-9, "ftol": 1e-14, "max_evals": 2000})
    t1, t2 = sorted(np.exp(x), reverse=True)
    rms = math.sqrt(f / t.size)
    msg = ""
    if rms > POOR_FIT_RMS:
        msg = f"poor two-lag fit (residual RMS {rms:.3f} > {POOR_FIT_RMS})"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if t[-1] < 5.0 * (t1 + t2):
        msg = (msg + "; " if msg else "") + "record shorter than 5 (tau_1 + tau_2)"
    return TimeConstantFit(float(t1), float(t2), rms, msg)


@dataclass
class StepExperiment:
    raw: object
    channel: str
    direction: str
    start_level: float
    end_level: float
    hold_level: float
    response: StepResponse = None
    fit: TimeConstantFit = None
    excluded: str = ""

    @property
    def fitted(self):
        return None if self.fit is None else (self.fit.tau_1, self.fit.tau_2)

    @property
    def valid(self):
        return not self.excluded and self.fit is not None


def analyse_step(raw, channel, direction, start_level, end_level, hold_level,
                 step_time=5.0):
    """Normalize and fit one record, recording an exclusion reason if needed."""
    exp = StepExperiment(raw, channel, direction, start_level, end_level, hold_level)
    try:
        exp.response = normalize_step_response(raw, raw.grid.t0 + step_time)
    except StepTooSmallError as exc:
        exp.excluded = str(exc)
        return exp
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        exp.fit = fit_time_constants(exp.response.t, exp.response.y)
    if exp.fit.residual > POOR_FIT_RMS:
        exp.excluded = exp.fit.warning
    return exp


def analyse_campaign(records, step_time=None):
    """Fit every ``(protocol, level, series)`` triple of a step campaign."""
    out = []
    for proto, level, series in records:
        st = proto.pre_step if step_time is None else step_time
        out.append(analyse_step(series, proto.channel, proto.direction,
                                proto.start_level, level, proto.hold_level, st))
    return out


def average_time_constants(experiments, channel=None):
    """Arithmetic mean of the fitted pairs of all valid experiments."""
    pairs = [e.fitted for e in experiments
             if e.valid and (channel is None or e.channel == channel)]
    if not pairs:
        raise NoValidExperimentsError(
            f"no valid step experiments{'' if channel is None else ' for ' + channel}")
    arr = np.array(pairs)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def initial_model(static_fit_normalized, experiments):
    """Combine averaged time constants with the normalized static map."""
    if static_fit_normalized.units != "normalized":
        raise InvalidParameterError("static map must be fitted in normalized units")
    tw = average_time_constants(experiments, "omega")
    tb = average_time_constants(experiments, "beta")
    return WienerParams(tw[0], tw[1], tb[0], tb[1], *static_fit_normalized.coeffs)
