import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vppwiener.errors import (DataError, DegenerateGridError, NoValidExperimentsError,
                              StepTooSmallError)
from vppwiener.ident import (StepExperiment, TimeConstantFit, adjusted_r2, analyse_campaign,
                             average_time_constants, fit_static_map,
                             fit_static_map_normalized, fit_time_constants, initial_model,
                             normalize_step_response, second_order_step_response)
from vppwiener.model import monomials
from vppwiener.ode import TimeGrid, TimeSeries, simulate
from vppwiener.plant import DEG, RPM, generate_step_campaign, linearize
from vppwiener.protocols import default_step_protocols

PRINTED = np.array([0.21, -5.7, 0.023, -1.25, -2.15e-6]) * 1e-6
T = 0.004 * np.arange(1250)


def _grid():
    w, b = np.meshgrid(np.linspace(2000, 6000, 10), np.linspace(-10, 10, 10))
    return w.ravel(), b.ravel()


def test_static_map_recovers_printed_model():
    w, b = _grid()
    fit = fit_static_map(w, b, monomials(w, b) @ PRINTED)
    assert np.allclose(fit.coeffs, PRINTED, rtol=1e-9, atol=0)
    assert fit.adjusted_r2 == 1.0
    assert np.max(np.abs(fit.residuals)) < 1e-9 * np.max(np.abs(monomials(w, b) @ PRINTED))


def test_static_map_zero_thrust():
    w, b = _grid()
    fit = fit_static_map(w, b, np.zeros_like(w))
    assert np.all(fit.coeffs == 0) and np.all(fit.residuals == 0)


def test_static_map_truncation_and_degenerate_grid():
    w, b = _grid()
    fit = fit_static_map(w, b, monomials(w, b) @ PRINTED, beta_range=(-5, 10))
    assert fit.n_points == 70
    with pytest.raises(DegenerateGridError):
        fit_static_map(w[:4], b[:4], np.ones(4))
    with pytest.raises(DegenerateGridError):
        # one pitch level only: w*b columns are collinear with w^2-type terms
        fit_static_map(np.linspace(2000, 6000, 10), np.zeros(10), np.ones(10))
    with pytest.raises(DataError):
        fit_static_map(w, b, np.ones(3))


def test_adjusted_r2_formula():
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
    r = np.array([0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 0.1, -0.1])
    r2, adj = adjusted_r2(y, r, k=5)
    assert r2 == pytest.approx(1 - 0.08 / 42)
    assert adj == pytest.approx(1 - (1 - r2) * 7 / 2)
    assert adj <= 1


def test_two_lag_closed_forms():
    assert second_order_step_response(0.0, 0.15, 0.04) == 0.0
    assert second_order_step_response(100.0, 0.15, 0.04) == pytest.approx(1.0)
    assert second_order_step_response(0.1, 0.1, 0.1) == pytest.approx(1 - 2 * math.exp(-1), abs=1e-12)
    assert second_order_step_response(-1.0, 0.1, 0.2) == 0.0
    # continuity across the equal-tau branch
    assert second_order_step_response(0.1, 0.1, 0.1 * (1 + 1e-7)) == pytest.approx(
        1 - 2 * math.exp(-1), abs=1e-6)


@given(st.floats(0.001, 2.0), st.floats(0.001, 2.0))
def test_two_lag_symmetric(a, b):
    assert np.allclose(second_order_step_response(T, a, b), second_order_step_response(T, b, a),
                       atol=1e-9)


def test_two_lag_matches_cascade_simulation():
    t1, t2 = 0.15, 0.04
    grid = TimeGrid(0.004, 1250)
    res = simulate(lambda x, u: np.array([(x[1] - x[0]) / t1, (u[0] - x[1]) / t2]),
                   [0.0, 0.0], np.ones(grid.n_steps), grid, ["y", "x"])
    assert np.max(np.abs(res["y"] - second_order_step_response(grid.t, t1, t2))) < 1e-6


def _step_series(amp=2.0, sigma=0.0, seed=0, taus=(0.15, 0.04), base=3.0):
    grid = TimeGrid(0.004, 2500)
    t = grid.t
    y = base + amp * second_order_step_response(t - 5.0, *taus)
    y = y + np.random.default_rng(seed).normal(0, sigma, t.size) if sigma else y
    return TimeSeries(grid, {"thrust": y})


def test_normalize_noiseless():
    r = normalize_step_response(_step_series(), 5.0)
    assert r.y[0] == pytest.approx(0.0, abs=1e-12)
    assert r.y[-1] == pytest.approx(1.0, abs=1e-9)
    assert r.amplitude == pytest.approx(2.0, rel=1e-6)


def test_normalize_noisy_end_level():
    r = normalize_step_response(_step_series(sigma=0.05, seed=4), 5.0)
    assert abs(np.mean(r.y[-250:]) - 1) < 0.05


def test_normalize_zero_amplitude():
    with pytest.raises(StepTooSmallError):
        normalize_step_response(_step_series(amp=0.0), 5.0)
    with pytest.raises(StepTooSmallError):
        normalize_step_response(_step_series(amp=0.05, sigma=0.05), 5.0)
    with pytest.raises(DataError):
        normalize_step_response(_step_series(), 0.5)


def test_fit_noiseless():
    y = second_order_step_response(T, 0.15, 0.04)
    fit = fit_time_constants(T, y)
    assert fit.tau_1 == pytest.approx(0.15, rel=0.01)
    assert fit.tau_2 == pytest.approx(0.04, rel=0.01)
    assert fit.tau_1 >= fit.tau_2 and not fit.poor


def test_fit_noise_median_error():
    y0 = second_order_step_response(T, 0.15, 0.04)
    errs = []
    for seed in range(20):
        y = y0 + np.random.default_rng(seed).normal(0, 0.02, T.size)
        f = fit_time_constants(T, y)
        errs.append(max(abs(f.tau_1 / 0.15 - 1), abs(f.tau_2 / 0.04 - 1)))
    assert np.median(errs) < 0.10


def test_fit_consistency_with_decreasing_noise():
    y0 = second_order_step_response(T, 0.15, 0.04)
    medians = []
    for sigma in (0.05, 0.01, 0.001):
        errs = []
        for seed in range(20):
            y = y0 + np.random.default_rng(100 + seed).normal(0, sigma, T.size)
            f = fit_time_constants(T, y)
            errs.append(max(abs(f.tau_1 / 0.15 - 1), abs(f.tau_2 / 0.04 - 1)))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


def test_fit_first_order_limit():
    y = 1 - np.exp(-T / 0.2)
    f = fit_time_constants(T, y)
    assert f.tau_2 <= 0.004
    assert f.tau_1 == pytest.approx(0.2, rel=0.02)


def test_fit_amplitude_invariant():
    a = normalize_step_response(_step_series(amp=0.7), 5.0)
    b = normalize_step_response(_step_series(amp=5.0, base=1.0), 5.0)
    fa, fb = fit_time_constants(a.t, a.y), fit_time_constants(b.t, b.y)
    assert fa.tau_1 == pytest.approx(fb.tau_1, rel=1e-6)
    assert fa.tau_2 == pytest.approx(fb.tau_2, rel=1e-6)


def test_fit_poor_warning():
    y = np.sin(T * 20)
    with pytest.warns(RuntimeWarning):
        f = fit_time_constants(T, y)
    assert f.poor and f.residual > 0.2


def _exp(channel, t1, t2, excluded=""):
    e = StepExperiment(None, channel, "up", 0, 1, 0)
    e.fit = TimeConstantFit(t1, t2, 0.0)
    e.excluded = excluded
    return e


def test_average_time_constants():
    assert average_time_constants([_exp("omega", 0.2, 0.05)]) == (0.2, 0.05)
    avg = average_time_constants([_exp("omega", 0.14, 0.04), _exp("omega", 0.16, 0.04),
                                  _exp("omega", 9.0, 9.0, excluded="noise")])
    assert avg == pytest.approx((0.15, 0.04))
    with pytest.raises(NoValidExperimentsError):
        average_time_constants([_exp("omega", 0.1, 0.1)], "beta")


@pytest.fixture(scope="module")
def rpm_campaign(rig):
    recs = generate_step_campaign(default_step_protocols()[:10], *rig)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return analyse_campaign(recs)


def _linearized_rpm_mean(rig, exps):
    pairs = [linearize(*rig, e.end_level * RPM, e.hold_level * DEG).tau_omega_pair for e in exps]
    return np.mean(pairs, axis=0)


def test_rpm_campaign_tau1_matches_linearization(rig, rpm_campaign):
    t1, _ = average_time_constants(rpm_campaign, "omega")
    ref = _linearized_rpm_mean(rig, rpm_campaign)
    assert t1 == pytest.approx(ref[0], rel=0.10)


@pytest.mark.xfail(strict=True, reason="thrust is quadratic in speed: large RPM steps skew "
                   "the normalized thrust shape, biasing the fast time constant upward")
def test_rpm_campaign_tau2_matches_linearization(rig, rpm_campaign):
    _, t2 = average_time_constants(rpm_campaign, "omega")
    ref = _linearized_rpm_mean(rig, rpm_campaign)
    assert t2 == pytest.approx(ref[1], rel=0.10)


def test_smallest_steps_match_linearization(rig, rpm_campaign):
    # the first amplitude of each direction is close to small-signal
    small = [e for e in rpm_campaign if e.end_level in (2500.0, 5500.0)]
    t1, t2 = average_time_constants(small, "omega")
    ref = _linearized_rpm_mean(rig, small)
    assert t1 == pytest.approx(ref[0], rel=0.10)
    assert t2 == pytest.approx(ref[1], rel=0.10)


def test_initial_model_assembly(rig, rpm_campaign):
    w, b = _grid()
    from vppwiener.model import Normalization
    norm = Normalization()
    grid = {"omega": w, "beta": b, "thrust": monomials(w, b) @ PRINTED}
    nfit = fit_static_map_normalized(grid, norm)
    beta_exps = [_exp("beta", 0.3, 0.1)]
    p = initial_model(nfit, list(rpm_campaign) + beta_exps)
    assert p.tau_beta_1 == 0.3 and p.tau_beta_2 == 0.1
    assert np.allclose(p.coeffs, nfit.coeffs)
