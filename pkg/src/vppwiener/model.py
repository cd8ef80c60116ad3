"""Wiener model of a variable-pitch propeller powertrain.

Linear part: two decoupled two-lag chains (RPM and pitch) with unity DC gain,
state ordering ``[omega, beta, x_omega, x_beta]``.  Static part: a degree-3
bivariate polynomial thrust map.  All quantities here are normalized
(see :class:`Normalization`); physical units only appear at API boundaries.
"""
from dataclasses import dataclass, replace, fields
from typing import NamedTuple

import numpy as np

from .errors import InvalidParameterError

PARAM_NAMES = ("tau_omega_1", "tau_omega_2", "tau_beta_1", "tau_beta_2",
               "c20", "c11", "c21", "c12", "c30")
TAU_NAMES = PARAM_NAMES[:4]
COEFF_NAMES = PARAM_NAMES[4:]
STATE_NAMES = ("omega", "beta", "x_omega", "x_beta")


@dataclass(frozen=True)
class WienerParams:
    """Identifiable parameters, vector order fixed by ``PARAM_NAMES``."""

    tau_omega_1: float
    tau_omega_2: float
    tau_beta_1: float
    tau_beta_2: float
    c20: float = 0.0
    c11: float = 0.0
    c21: float = 0.0
    c12: float = 0.0
    c30: float = 0.0

    def __post_init__(self):
        for name in TAU_NAMES:
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise InvalidParameterError(
                    f"{name} must be a positive finite time constant, got {value!r}")
        for name in COEFF_NAMES:
            if not np.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")

    @classmethod
    def from_vector(cls, p):
        p = np.asarray(p, dtype=float).ravel()
        if p.size != 9:
            raise InvalidParameterError(f"expected 9 parameters, got {p.size}")
        return cls(*(float(v) for v in p))

    def to_vector(self):
        return np.array([getattr(self, name) for name in PARAM_NAMES], dtype=float)

    @property
    def taus(self):
        return np.array([self.tau_omega_1, self.tau_omega_2,
                         self.tau_beta_1, self.tau_beta_2])

    @property
    def coeffs(self):
        return np.array([self.c20, self.c11, self.c21, self.c12, self.c30])

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


# Fine-tuned model reported for the bench rig (normalized units).
PUBLISHED_FINAL = WienerParams(0.172, 0.053, 0.207, 0.374,
                               0.355, 0.064, 0.8, -0.16, -0.081)


class WienerState(NamedTuple):
    omega: float
    beta: float
    x_omega: float
    x_beta: float


class RefInput(NamedTuple):
    omega_ref: float
    beta_ref: float


def equilibrium_state(omega_ref, beta_ref):
    """Steady state for constant references (unity DC gain on both chains)."""
    return WienerState(omega_ref, beta_ref, omega_ref, beta_ref)


def wiener_derivative(state, inp, params):
    """State rate ``A x + B u`` of the fourth-order two-lag realization."""
    w, b, xw, xb = state
    rw, rb = inp
    tw1, tw2, tb1, tb2 = params.taus
    return WienerState((xw - w) / tw1, (xb - b) / tb1,
                       (rw - xw) / tw2, (rb - xb) / tb2)


def system_matrices(params):
    """Return ``(A, B)`` of the linear part."""
    tw1, tw2, tb1, tb2 = params.taus
    A = np.array([[-1 / tw1, 0.0, 1 / tw1, 0.0],
                  [0.0, -1 / tb1, 0.0, 1 / tb1],
                  [0.0, 0.0, -1 / tw2, 0.0],
                  [0.0, 0.0, 0.0, -1 / tb2]])
    B = np.array([[0.0, 0.0], [0.0, 0.0], [1 / tw2, 0.0], [0.0, 1 / tb2]])
    return A, B


def monomials(omega_n, beta_n):
    """Thrust-map regressors ``[w^2, w b, w^2 b, w b^2, w^3]`` (last axis)."""
    w = np.asarray(omega_n, dtype=float)
    b = np.asarray(beta_n, dtype=float)
    return np.stack([w * w, w * b, w * w * b, w * b * b, w * w * w], axis=-1)


def thrust_output(omega_n, beta_n, params):
    """Normalized thrust ``h(w, b)``; accepts scalars or arrays."""
    c20, c11, c21, c12, c30 = params.coeffs if isinstance(params, WienerParams) \
        else np.asarray(params, dtype=float)
    w = np.asarray(omega_n, dtype=float)
    b = np.asarray(beta_n, dtype=float)
    out = w * (c20 * w + c11 * b + c21 * w * b + c12 * b * b + c30 * w * w)
    return float(out) if out.ndim == 0 else out


def output_jacobians(omega_n, beta_n, params):
    """Analytic ``(dh/dw, dh/db, dh/dc)`` of the thrust polynomial."""
    c20, c11, c21, c12, c30 = params.coeffs if isinstance(params, WienerParams) \
        else np.asarray(params, dtype=float)
    w = np.asarray(omega_n, dtype=float)
    b = np.asarray(beta_n, dtype=float)
    dh_dw = 2 * c20 * w + c11 * b + 2 * c21 * w * b + c12 * b * b + 3 * c30 * w * w
    dh_db = c11 * w + c21 * w * w + 2 * c12 * w * b
    if dh_dw.ndim == 0:
        dh_dw, dh_db = float(dh_dw), float(dh_db)
    return dh_dw, dh_db, monomials(w, b)


@dataclass(frozen=True)
class Normalization:
    """Affine scaling between physical and normalized channels.

    ``w = omega / omega_scale``, ``b = (beta + beta_offset) / beta_span``,
    ``T = thrust / thrust_scale`` with omega in RPM, beta in degrees and
    thrust in newtons.
    """

    omega_scale: float = 6000.0
    beta_offset: float = 5.0
    beta_span: float = 15.0
    thrust_scale: float = 15.0

    def __post_init__(self):
        for name in ("omega_scale", "beta_span", "thrust_scale"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        if not np.isfinite(self.beta_offset):
            raise InvalidParameterError("beta_offset must be finite")

    def omega(self, omega_rpm):
        return np.asarray(omega_rpm, dtype=float) / self.omega_scale

    def beta(self, beta_deg):
        return (np.asarray(beta_deg, dtype=float) + self.beta_offset) / self.beta_span

    def thrust(self, thrust_n):
        return np.asarray(thrust_n, dtype=float) / self.thrust_scale

    def omega_inv(self, omega_n):
        return np.asarray(omega_n, dtype=float) * self.omega_scale

    def beta_inv(self, beta_n):
        return np.asarray(beta_n, dtype=float) * self.beta_span - self.beta_offset

    def thrust_inv(self, thrust_norm):
        return np.asarray(thrust_norm, dtype=float) * self.thrust_scale


def normalize(omega, beta, thrust, norm=Normalization()):
    """Map (RPM, deg, N) to normalized ``(w, b, T)``."""
    return _squeeze(norm.omega(omega), norm.beta(beta), norm.thrust(thrust))


def denormalize(omega_n, beta_n, thrust_n, norm=Normalization()):
    return _squeeze(norm.omega_inv(omega_n), norm.beta_inv(beta_n),
                    norm.thrust_inv(thrust_n))


def _squeeze(*arrays):
    return tuple(float(a) if a.ndim == 0 else a for a in arrays)


# Six-term basis closed under the affine change of variables: the five
# thrust monomials plus a linear omega term that the beta offset creates.
def _expansion_matrix(norm):
    """Matrix M with ``c_norm_ext = M @ c_phys_ext`` (both 6-vectors)."""
    s, o, d, k = norm.omega_scale, norm.beta_offset, norm.beta_span, norm.thrust_scale
    # physical -> normalized: omega = s w, beta = d b - o
    # order: [w^2, w b, w^2 b, w b^2, w^3, w]
    M = np.zeros((6, 6))
    M[0, 0] = s * s                    # omega^2
    M[1, 1] = s * d                    # omega beta -> w b
    M[5, 1] = -s * o                   #            -> w
    M[2, 2] = s * s * d                # omega^2 beta -> w^2 b
    M[0, 2] = -s * s * o               #              -> w^2
    M[3, 3] = s * d * d                # omega beta^2 -> w b^2
    M[1, 3] = -2 * s * d * o           #              -> w b
    M[5, 3] = s * o * o                #              -> w
    M[4, 4] = s ** 3                   # omega^3
    M[5, 5] = s                        # omega
    return M / k


def coefficients_to_normalized(coeffs_phys, norm=Normalization()):
    """Convert physical-unit map coefficients to the normalized basis.

    Returns ``(coeffs_norm, linear_residual)`` where ``linear_residual`` is the
    coefficient of the pure ``w`` term produced by the beta offset.  The
    conversion is exact iff that residual is zero.
    """
    ext = np.append(np.asarray(coeffs_phys, dtype=float), 0.0)
    out = _expansion_matrix(norm) @ ext
    return out[:5], float(out[5])


def coefficients_to_physical(coeffs_norm, norm=Normalization()):
    """Inverse of :func:`coefficients_to_normalized`; same residual contract."""
    ext = np.append(np.asarray(coeffs_norm, dtype=float), 0.0)
    out = np.linalg.solve(_expansion_matrix(norm), ext)
    return out[:5], float(out[5])
