"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (or ``python
tests/test_acceptance.py``).
"""
import hashlib
import warnings

import numpy as np
import pytest

from vppwiener.cli import run as cli_run
from vppwiener.control import (PUBLISHED_COMBINED, ControlRunConfig, closed_loop_simulate,
                               segment_error_integral, step_metrics, tune_gains)
from vppwiener.finetune import (FineTuneConfig, finite_difference_gradient, gradient,
                                gradient_descent, prepare)
from vppwiener.ident import (analyse_campaign, fit_static_map, fit_static_map_normalized,
                             fit_time_constants, initial_model, second_order_step_response)
from vppwiener.model import PUBLISHED_FINAL, WienerParams, monomials, thrust_output
from vppwiener.plant import (DEG, RPM, generate_open_loop, generate_static_grid,
                             generate_step_campaign, linearize, simulate_plant, static_thrust)
from vppwiener.protocols import (StaticGridSpec, default_open_loop_schedule,
                                 default_step_protocols)

from conftest import wiener_dataset


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _report


@pytest.fixture(scope="module")
def rig_grid(rig):
    return generate_static_grid(StaticGridSpec(), *rig)


# 1 ---------------------------------------------------------------------------

def test_c01_published_polynomial(report):
    v = float(thrust_output(1.0, 1.0, PUBLISHED_FINAL.coeffs))
    report(1, abs(v - 0.978) <= 1e-12, f"h(1, 1) = {v!r}")


# 2 ---------------------------------------------------------------------------

def test_c02_static_map(report, rig_grid):
    coeffs = np.array([0.21, -5.7, 0.023, -1.25, -2.15e-6]) * 1e-6
    w, b = np.meshgrid(np.linspace(2000, 6000, 10), np.linspace(-10, 10, 10))
    w, b = w.ravel(), b.ravel()
    fit = fit_static_map(w, b, monomials(w, b) @ coeffs)
    rel = float(np.max(np.abs(fit.coeffs / coeffs - 1)))
    rig_fit = fit_static_map(rig_grid["omega"], rig_grid["beta"], rig_grid["thrust"],
                             beta_range=(-5.0, 10.0))
    ok = rel < 1e-9 and fit.adjusted_r2 == 1.0 and rig_fit.adjusted_r2 >= 0.99
    report(2, ok, f"printed-map rel err {rel:.2e}, adj R2 {fit.adjusted_r2}; "
                  f"rig adj R2 {rig_fit.adjusted_r2:.6f}")


# 3 ---------------------------------------------------------------------------

def test_c03_two_lag_estimator(report):
    t = 0.004 * np.arange(1250)
    y0 = second_order_step_response(t, 0.15, 0.04)
    f = fit_time_constants(t, y0)
    clean = max(abs(f.tau_1 / 0.15 - 1), abs(f.tau_2 / 0.04 - 1))
    errs = []
    for seed in range(20):
        fn = fit_time_constants(t, y0 + np.random.default_rng(seed).normal(0, 0.02, t.size))
        errs.append(max(abs(fn.tau_1 / 0.15 - 1), abs(fn.tau_2 / 0.04 - 1)))
    med = float(np.median(errs))
    report(3, clean < 0.01 and med < 0.10,
           f"noiseless err {clean:.2e}, median err at sigma 0.02 {med:.3f}")


# 4 ---------------------------------------------------------------------------

def test_c04_gradient(report, model_data):
    data = prepare(model_data)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(12):
        p = WienerParams.from_vector(PUBLISHED_FINAL.to_vector() * (1 + rng.uniform(-0.1, 0.1, 9)))
        g = gradient(p, data)
        g_fd = finite_difference_gradient(p, data)
        worst = max(worst, float(np.linalg.norm(g - g_fd) / np.linalg.norm(g)))
    report(4, worst < 1e-4, f"worst relative mismatch over 12 points {worst:.2e}")


# 5 ---------------------------------------------------------------------------

def test_c05_finetune_benchmark(report, rig, rig_grid):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        exps = analyse_campaign(generate_step_campaign(default_step_protocols(), *rig))
    p0 = initial_model(fit_static_map_normalized(rig_grid), exps)
    ol = generate_open_loop(default_open_loop_schedule(seed=5), *rig)
    res = gradient_descent(p0, ol, FineTuneConfig(max_iters=350))
    c = np.array(res.curve.costs)
    monotone = bool(np.all(np.diff(c) <= 0))
    ratio = c[-1] / c[0]
    report(5, ratio <= 0.8 and monotone and len(c) - 1 <= 350,
           f"final/initial cost {ratio:.3f} after {len(c) - 1} iterations "
           f"({res.stop_reason}), monotone={monotone}")


# 6 ---------------------------------------------------------------------------

def test_c06_identifiability(report):
    sched = default_open_loop_schedule(seed=1)
    data = prepare(wiener_dataset(PUBLISHED_FINAL, sched))
    cfg = FineTuneConfig(momentum=0.95, stop_threshold=1e-20, max_iters=1500)
    rng = np.random.default_rng(6)
    truth = PUBLISHED_FINAL.to_vector()
    worst = 0.0
    for _ in range(5):
        p0 = truth * (1 + rng.uniform(-0.2, 0.2, 9))
        res = gradient_descent(p0, data, cfg)
        worst = max(worst, float(np.max(np.abs(res.params.to_vector() / truth - 1))))
    report(6, worst < 0.05, f"worst parameter error over 5 starts {worst:.4f}")


# 7 ---------------------------------------------------------------------------

def test_c07_control_step(report):
    model = PUBLISHED_FINAL.replace(tau_beta_2=0.05)
    cfg = ControlRunConfig()
    ts = closed_loop_simulate(model, PUBLISHED_COMBINED, cfg)
    m = step_metrics(ts, *cfg.step_times)
    ok = 0.3 <= m.settling_time <= 0.7 and m.overshoot <= 0.02
    report(7, ok, f"settling {m.settling_time:.3f} s, overshoot {100 * m.overshoot:.2f} %")


# 8 ---------------------------------------------------------------------------

def test_c08_mode_dominance(report):
    model = PUBLISHED_FINAL.replace(tau_beta_2=0.05)
    cfg = ControlRunConfig()
    out = {}
    for mode in ("combined", "rpm_only"):
        r = tune_gains(model, cfg, mode)
        ts = closed_loop_simulate(model, r.gains, cfg, mode)
        out[mode] = (r.cost, segment_error_integral(ts, cfg.step_times[1]))
    (jc, dc), (jr, dr) = out["combined"], out["rpm_only"]
    report(8, jc <= jr and dc < dr,
           f"cost {jc:.5f} vs {jr:.5f}; step-down ISE {dc:.5f} vs {dr:.5f}")


# 9 ---------------------------------------------------------------------------

def test_c09_anti_windup(report):
    cfg = ControlRunConfig(t_opt=3.0, levels=(0.3, 1.5, 1.5))
    ts = closed_loop_simulate(PUBLISHED_FINAL, PUBLISHED_COMBINED, cfg)
    held, clamped = True, 0
    for ch in ("omega", "beta"):
        flag = ts[f"clamp_{ch}"][:-1] > 0
        d = np.diff(ts[f"e_int_{ch}"])
        held &= bool(np.all(d[flag] == 0.0))
        clamped += int(flag.sum())
    report(9, held and clamped > 0,
           f"integrators constant on all {clamped} clamped samples: {held}")


# 10 --------------------------------------------------------------------------

def test_c10_reduction_validity(report, rig):
    pp, maps, gains = rig
    pp = pp.replace(L_m=pp.L_m * 0.02, L_a=pp.L_a * 0.02)
    dt, worst_red, worst_lin, worst_ratio = 0.004, 0.0, 0.0, 0.0
    for w0, b0 in ((4000.0, 2.5), (2500.0, 0.0), (5500.0, 8.0)):
        lp = linearize(pp, maps, gains, w0 * RPM, b0 * DEG)
        elec = pp.electrical_time_constants()
        worst_ratio = max(worst_ratio, elec[0] / lp.tau_omega, elec[1] / (pp.J_a / pp.D_a))
        for ch, amp in (("omega", 80.0), ("beta", 0.4)):
            n, pre = int(3.0 / dt), int(0.5 / dt)
            w, b = np.full(n, w0), np.full(n, b0)
            (w if ch == "omega" else b)[pre:] += amp
            full = simulate_plant(pp, maps, gains, w, b, dt)
            red = simulate_plant(pp, maps, gains, w, b, dt, reduced=True)
            t = np.maximum(full.t - pre * dt, 0.0)
            wp, bp = np.full(n, w0), np.full(n, b0)
            if ch == "omega":
                wp = w0 + amp * second_order_step_response(t, *lp.tau_omega_pair)
            else:
                bp = b0 + amp * second_order_step_response(t, *lp.tau_beta_pair)
            tp = static_thrust(wp * RPM, bp * DEG, pp, maps)
            thrust = full["thrust"]
            worst_lin = max(worst_lin, float(np.max(np.abs(thrust - tp)) / abs(tp[-1] - tp[0])))
            worst_red = max(worst_red, float(np.max(np.abs(thrust - red["thrust"]))
                                             / np.max(np.abs(thrust))))
    ok = worst_ratio <= 1e-3 and worst_red < 0.005 and worst_lin < 0.02
    report(10, ok, f"electrical/mechanical {worst_ratio:.1e}, reduction err {worst_red:.1e}, "
                   f"two-lag err {100 * worst_lin:.2f} % of step")


# 11 --------------------------------------------------------------------------

SMALL = """
seed = 21
noise = 0.02
[static_grid]
n_omega = 5
n_beta = 5
settle_time = 1.0
n_samples = 250
[steps]
pre_step = 2.0
post_step = 2.5
omega_holds = [4000.0]
beta_holds = [2.5]
[open_loop]
n_per_part = 2
hold = 1.5
[finetune]
max_iters = 30
[control]
t_opt = 3.0
tau_beta_2 = 0.05
"""


def _digests(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_c11_determinism(report, tmp_path):
    cfg = tmp_path / "small.toml"
    cfg.write_text(SMALL)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        codes = [cli_run([stage, "--config", str(cfg), "--out", str(out)])
                 for stage in ("gen-data", "static-map", "step-ident", "finetune",
                               "tune-control")]
        runs.append((codes, _digests(out)))
    (ca, da), (cb, db) = runs
    ok = ca == cb == [0] * 5 and da == db and len(da) > 10
    report(11, ok, f"{len(da)} artifacts, identical={da == db}, exit codes {ca}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
