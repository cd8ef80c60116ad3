"""Hot inner loops.

Every function here is written in scalar, numba-compatible Python and wrapped
with :func:`vppwiener._accel.kernel`.  Callers pass plain float64 arrays; the
public, validated API lives in the other modules.

Packed layouts
--------------
taus      ``[tau_omega_1, tau_omega_2, tau_beta_1, tau_beta_2]``
coeffs    ``[c20, c11, c21, c12, c30]``
plant     see ``PLANT_FIELDS`` in :mod:`vppwiener.plant`
lowlevel  ``[pi_kp, pi_ki, pi_setpoint_weight, pd_kp, pd_kd]``
gains     ``[kp_w, ki_w, kd_w, kp_b, ki_b, kd_b]``
limits    ``[w_min, w_max, b_min, b_max]``
"""
import math

import numpy as np

from ._accel import kernel


@kernel
def thrust_poly(w, b, c):
    return w * (c[0] * w + c[1] * b + c[2] * w * b + c[3] * b * b + c[4] * w * w)


@kernel
def _wiener_rates(x, rw, rb, tw1, tw2, tb1, tb2, out):
    out[0] = (x[2] - x[0]) / tw1
    out[1] = (x[3] - x[1]) / tb1
    out[2] = (rw - x[2]) / tw2
    out[3] = (rb - x[3]) / tb2


@kernel
def wiener_rk4(x, rw, rb, taus, dt, k1, k2, k3, k4, tmp):
    """Advance ``x`` (length 4) in place by one RK4 step."""
    tw1, tw2, tb1, tb2 = taus[0], taus[1], taus[2], taus[3]
    _wiener_rates(x, rw, rb, tw1, tw2, tb1, tb2, k1)
    for j in range(4):
        tmp[j] = x[j] + 0.5 * dt * k1[j]
    _wiener_rates(tmp, rw, rb, tw1, tw2, tb1, tb2, k2)
    for j in range(4):
        tmp[j] = x[j] + 0.5 * dt * k2[j]
    _wiener_rates(tmp, rw, rb, tw1, tw2, tb1, tb2, k3)
    for j in range(4):
        tmp[j] = x[j] + dt * k3[j]
    _wiener_rates(tmp, rw, rb, tw1, tw2, tb1, tb2, k4)
    for j in range(4):
        x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])


@kernel
def wiener_run(taus, coeffs, x0, u_w, u_b, dt):
    """Open-loop Wiener rollout; returns ``(states (n, 4), thrust (n,))``."""
    n = u_w.shape[0]
    states = np.empty((n, 4))
    thrust = np.empty(n)
    x = x0.copy()
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    for i in range(n):
        for j in range(4):
            states[i, j] = x[j]
        thrust[i] = thrust_poly(x[0], x[1], coeffs)
        if i < n - 1:
            wiener_rk4(x, u_w[i], u_b[i], taus, dt, k1, k2, k3, k4, tmp)
    return states, thrust


@kernel
def _aug_rates(z, rw, rb, tw1, tw2, tb1, tb2, out):
    # z[0:4] state, z[4 + 4*i + k] = d x_i / d tau_k
    x0, x1, x2, x3 = z[0], z[1], z[2], z[3]
    out[0] = (x2 - x0) / tw1
    out[1] = (x3 - x1) / tb1
    out[2] = (rw - x2) / tw2
    out[3] = (rb - x3) / tb2
    for k in range(4):
        s0 = z[4 + k]
        s1 = z[8 + k]
        s2 = z[12 + k]
        s3 = z[16 + k]
        out[4 + k] = (s2 - s0) / tw1
        out[8 + k] = (s3 - s1) / tb1
        out[12 + k] = -s2 / tw2
        out[16 + k] = -s3 / tb2
    out[4 + 0] -= (x2 - x0) / (tw1 * tw1)
    out[12 + 1] -= (rw - x2) / (tw2 * tw2)
    out[8 + 2] -= (x3 - x1) / (tb1 * tb1)
    out[16 + 3] -= (rb - x3) / (tb2 * tb2)


@kernel
def wiener_cost_grad(taus, coeffs, x0, u_w, u_b, y, dt, want_grad):
    """Tracking cost ``(1/N) sum 0.5 (T_hat - y)^2 dt`` and its gradient.

    The gradient is obtained from forward sensitivities integrated with the
    same RK4 stages as the state, so it is the exact derivative of the
    discrete cost.  Returns ``(cost, grad(9), gn_diag(9))`` where ``gn_diag``
    is the Gauss-Newton curvature diagonal ``(1/N) sum z_k^2 dt``; ``cost``
    is NaN if the trajectory became non-finite.
    """
    n = y.shape[0]
    tw1, tw2, tb1, tb2 = taus[0], taus[1], taus[2], taus[3]
    c20, c11, c21, c12, c30 = coeffs[0], coeffs[1], coeffs[2], coeffs[3], coeffs[4]
    m = 20 if want_grad else 4
    z = np.zeros(20)
    for j in range(4):
        z[j] = x0[j]
    k1 = np.empty(20)
    k2 = np.empty(20)
    k3 = np.empty(20)
    k4 = np.empty(20)
    tmp = np.empty(20)
    grad = np.zeros(9)
    diag = np.zeros(9)
    acc = 0.0
    for i in range(n):
        w = z[0]
        b = z[1]
        that = w * (c20 * w + c11 * b + c21 * w * b + c12 * b * b + c30 * w * w)
        r = that - y[i]
        acc += 0.5 * r * r
        if want_grad:
            dh_dw = 2.0 * c20 * w + c11 * b + 2.0 * c21 * w * b + c12 * b * b \
                + 3.0 * c30 * w * w
            dh_db = c11 * w + c21 * w * w + 2.0 * c12 * w * b
            for k in range(4):
                zk = dh_dw * z[4 + k] + dh_db * z[8 + k]
                grad[k] += r * zk
                diag[k] += zk * zk
            m0 = w * w
            m1 = w * b
            m2 = w * w * b
            m3 = w * b * b
            m4 = w * w * w
            grad[4] += r * m0
            grad[5] += r * m1
            grad[6] += r * m2
            grad[7] += r * m3
            grad[8] += r * m4
            diag[4] += m0 * m0
            diag[5] += m1 * m1
            diag[6] += m2 * m2
            diag[7] += m3 * m3
            diag[8] += m4 * m4
        if i == n - 1:
            break
        rw = u_w[i]
        rb = u_b[i]
        if want_grad:
            _aug_rates(z, rw, rb, tw1, tw2, tb1, tb2, k1)
            for j in range(m):
                tmp[j] = z[j] + 0.5 * dt * k1[j]
            _aug_rates(tmp, rw, rb, tw1, tw2, tb1, tb2, k2)
            for j in range(m):
                tmp[j] = z[j] + 0.5 * dt * k2[j]
            _aug_rates(tmp, rw, rb, tw1, tw2, tb1, tb2, k3)
            for j in range(m):
                tmp[j] = z[j] + dt * k3[j]
            _aug_rates(tmp, rw, rb, tw1, tw2, tb1, tb2, k4)
        else:
            _wiener_rates(z, rw, rb, tw1, tw2, tb1, tb2, k1)
            for j in range(m):
                tmp[j] = z[j] + 0.5 * dt * k1[j]
            _wiener_rates(tmp, rw, rb, tw1, tw2, tb1, tb2, k2)
            for j in range(m):
                tmp[j] = z[j] + 0.5 * dt * k2[j]
            _wiener_rates(tmp, rw, rb, tw1, tw2, tb1, tb2, k3)
            for j in range(m):
                tmp[j] = z[j] + dt * k3[j]
            _wiener_rates(tmp, rw, rb, tw1, tw2, tb1, tb2, k4)
        for j in range(m):
            z[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        if not math.isfinite(z[0] + z[1]):
            return math.nan, grad, diag
    scale = dt / n
    for k in range(9):
        grad[k] *= scale
        diag[k] *= scale
    return acc * scale, grad, diag


@kernel
def sensitivity_rates(x, s, rw, rb, taus):
    """State rate (4,) and sensitivity rate (4, 9) of the Wiener dynamics."""
    z = np.zeros(20)
    for j in range(4):
        z[j] = x[j]
        for k in range(4):
            z[4 + 4 * j + k] = s[j, k]
    out = np.empty(20)
    _aug_rates(z, rw, rb, taus[0], taus[1], taus[2], taus[3], out)
    xdot = out[:4].copy()
    sdot = np.zeros((4, 9))
    for j in range(4):
        for k in range(4):
            sdot[j, k] = out[4 + 4 * j + k]
    return xdot, sdot


@kernel
def pid_update(e, e_int, e_prev, d_filt, clamp, bias, gains, limits, dt, delta, out):
    """Dual PID update; mutates ``e_int``, ``clamp``, writes refs to ``out``.

    Returns the new filtered derivative.  ``e_prev`` is the previous error.
    """
    d_raw = (e - e_prev) / dt
    d_new = (1.0 - delta) * d_filt + delta * d_raw
    for j in range(2):
        if not clamp[j]:
            e_int[j] += 0.5 * (e_prev + e) * dt
        kp = gains[3 * j]
        ki = gains[3 * j + 1]
        kd = gains[3 * j + 2]
        v = bias[j] + kp * e + ki * e_int[j] + kd * d_new
        lo = limits[2 * j]
        hi = limits[2 * j + 1]
        u = v
        if u > hi:
            u = hi
        if u < lo:
            u = lo
        out[j] = u
        clamp[j] = (v > hi and e > 0.0) or (v < lo and e < 0.0)
    return d_new


@kernel
def closed_loop_run(taus, coeffs, x0, t_set, gains, bias, limits, dt, t_filter):
    """Thrust PID loop around the Wiener model.

    Returns ``(thrust, refs (n, 2), states (n, 4), e_int (n, 2), clamp (n, 2),
    sq_err_integral)``; the integral uses the rectangle rule on the grid.
    """
    n = t_set.shape[0]
    thrust = np.empty(n)
    refs = np.empty((n, 2))
    states = np.empty((n, 4))
    ints = np.empty((n, 2))
    flags = np.zeros((n, 2), dtype=np.bool_)
    x = x0.copy()
    e_int = np.zeros(2)
    clamp = np.zeros(2, dtype=np.bool_)
    u = np.empty(2)
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    delta = dt / t_filter
    d_filt = 0.0
    e_prev = t_set[0] - thrust_poly(x[0], x[1], coeffs)
    ise = 0.0
    for i in range(n):
        that = thrust_poly(x[0], x[1], coeffs)
        e = t_set[i] - that
        d_filt = pid_update(e, e_int, e_prev, d_filt, clamp, bias, gains,
                            limits, dt, delta, u)
        e_prev = e
        thrust[i] = that
        refs[i, 0] = u[0]
        refs[i, 1] = u[1]
        ints[i, 0] = e_int[0]
        ints[i, 1] = e_int[1]
        flags[i, 0] = clamp[0]
        flags[i, 1] = clamp[1]
        for j in range(4):
            states[i, j] = x[j]
        ise += e * e * dt
        if i < n - 1:
            wiener_rk4(x, u[0], u[1], taus, dt, k1, k2, k3, k4, tmp)
            if not math.isfinite(x[0] + x[1]):
                return thrust, refs, states, ints, flags, math.nan
    return thrust, refs, states, ints, flags, ise


@kernel
def closed_loop_ise(taus, coeffs, x0, t_set, gains, bias, limits, dt, t_filter):
    """Squared-error integral only (no trajectory storage)."""
    n = t_set.shape[0]
    x = x0.copy()
    e_int = np.zeros(2)
    clamp = np.zeros(2, dtype=np.bool_)
    u = np.empty(2)
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    delta = dt / t_filter
    d_filt = 0.0
    e_prev = t_set[0] - thrust_poly(x[0], x[1], coeffs)
    ise = 0.0
    for i in range(n):
        e = t_set[i] - thrust_poly(x[0], x[1], coeffs)
        d_filt = pid_update(e, e_int, e_prev, d_filt, clamp, bias, gains,
                            limits, dt, delta, u)
        e_prev = e
        ise += e * e * dt
        if i < n - 1:
            wiener_rk4(x, u[0], u[1], taus, dt, k1, k2, k3, k4, tmp)
            if not math.isfinite(x[0] + x[1]):
                return math.nan
    return ise


# ---------------------------------------------------------------------------
# Full nonlinear plant
# ---------------------------------------------------------------------------

@kernel
def poly2(c, lam, beta):
    """Evaluate ``sum c[i, j] lam**i beta**j``."""
    acc = 0.0
    li = 1.0
    for i in range(c.shape[0]):
        bj = 1.0
        for j in range(c.shape[1]):
            acc += c[i, j] * li * bj
            bj *= beta
        li *= lam
    return acc


@kernel
def poly1(c, beta):
    acc = 0.0
    bj = 1.0
    for j in range(c.shape[0]):
        acc += c[j] * bj
        bj *= beta
    return acc


@kernel
def aero_torque(p, cq, omega, lam, beta):
    rho, radius = p[0], p[1]
    area = math.pi * radius * radius
    v = omega * radius
    return 0.5 * rho * area * v * v * radius * poly2(cq, lam, beta)


@kernel
def aero_thrust(p, ct, omega, lam, beta):
    rho, radius = p[0], p[1]
    area = math.pi * radius * radius
    v = omega * radius
    return 0.5 * rho * area * v * v * poly2(ct, lam, beta)


@kernel
def plant_rates(x, u_w, u_b, p, cq, lq, reduced, out):
    """Open-loop plant rates for ``x = [omega, I_m, lam, beta, beta_dot, I_a]``.

    With ``reduced`` the currents are replaced by their algebraic steady
    values and their rates are zero.
    """
    omega, i_m, lam, beta, beta_dot, i_a = x[0], x[1], x[2], x[3], x[4], x[5]
    tau_l, J, k_q, k_w = p[2], p[3], p[4], p[5]
    L_m, R_m, V_m, k_i = p[6], p[7], p[8], p[9]
    J_a, D_a, k_a, L_a, R_a, k_ia, V_a = p[10], p[11], p[12], p[13], p[14], p[15], p[16]
    if reduced:
        i_m = (u_w * V_m - k_i * omega) / R_m
        i_a = (u_b * V_a - k_ia * beta_dot) / R_a
        out[1] = 0.0
        out[5] = 0.0
    else:
        out[1] = (u_w * V_m - R_m * i_m - k_i * omega) / L_m
        out[5] = (u_b * V_a - R_a * i_a - k_ia * beta_dot) / L_a
    out[0] = (k_q * i_m - k_w * omega - aero_torque(p, cq, omega, lam, beta)) / J
    out[2] = (poly1(lq, beta) - lam) / tau_l
    out[3] = beta_dot
    out[4] = (k_a * i_a - D_a * beta_dot) / J_a


@kernel
def lowlevel_duty(x, w_ref, b_ref, lowlevel, out):
    """PI (RPM, setpoint-weighted) and PD (pitch) duty cycles, clipped."""
    kp, ki, wsp, pkp, pkd = lowlevel[0], lowlevel[1], lowlevel[2], lowlevel[3], lowlevel[4]
    u_w = kp * (wsp * w_ref - x[0]) + ki * x[6]
    u_b = pkp * (b_ref - x[3]) - pkd * x[4]
    out[0] = min(max(u_w, 0.0), 1.0)
    out[1] = min(max(u_b, -1.0), 1.0)


@kernel
def closed_plant_rates(x, w_ref, b_ref, p, cq, lq, lowlevel, reduced, duty, out):
    """Closed-loop plant rates; ``x`` has the PI integrator appended at index 6."""
    lowlevel_duty(x, w_ref, b_ref, lowlevel, duty)
    plant_rates(x, duty[0], duty[1], p, cq, lq, reduced, out)
    out[6] = w_ref - x[0]


@kernel
def plant_run(p, ct, cq, lq, lowlevel, x0, w_ref, b_ref, dt, n_sub, reduced):
    """Simulate the closed-loop plant sampled every ``dt`` (``n_sub`` RK4 substeps).

    Returns ``(states (n, 7), duty (n, 2), thrust (n,), ok)``.  In reduced mode
    the current columns report the algebraic currents.
    """
    n = w_ref.shape[0]
    nx = 7
    states = np.empty((n, nx))
    duties = np.empty((n, 2))
    thrust = np.empty(n)
    x = x0.copy()
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    tmp = np.empty(nx)
    duty = np.empty(2)
    h = dt / n_sub
    for i in range(n):
        wr = w_ref[i]
        br = b_ref[i]
        lowlevel_duty(x, wr, br, lowlevel, duty)
        if reduced:
            x[1] = (duty[0] * p[8] - p[9] * x[0]) / p[7]
            x[5] = (duty[1] * p[16] - p[15] * x[4]) / p[14]
        for j in range(nx):
            states[i, j] = x[j]
        duties[i, 0] = duty[0]
        duties[i, 1] = duty[1]
        thrust[i] = aero_thrust(p, ct, x[0], x[2], x[3])
        if i == n - 1:
            break
        for _ in range(n_sub):
            closed_plant_rates(x, wr, br, p, cq, lq, lowlevel, reduced, duty, k1)
            for j in range(nx):
                tmp[j] = x[j] + 0.5 * h * k1[j]
            closed_plant_rates(tmp, wr, br, p, cq, lq, lowlevel, reduced, duty, k2)
            for j in range(nx):
                tmp[j] = x[j] + 0.5 * h * k2[j]
            closed_plant_rates(tmp, wr, br, p, cq, lq, lowlevel, reduced, duty, k3)
            for j in range(nx):
                tmp[j] = x[j] + h * k3[j]
            closed_plant_rates(tmp, wr, br, p, cq, lq, lowlevel, reduced, duty, k4)
            for j in range(nx):
                x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        ok = True
        for j in range(nx):
            if not math.isfinite(x[j]):
                ok = False
        if not ok:
            return states[: i + 1], duties[: i + 1], thrust[: i + 1], False
    return states, duties, thrust, True
