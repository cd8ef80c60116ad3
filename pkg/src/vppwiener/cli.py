"""Batch front end.

Each subcommand reads its inputs from (and writes its artifacts into) the
output directory, so the stages chain::

    vppwiener gen-data --out run
    vppwiener static-map --out run
    vppwiener step-ident --out run
    vppwiener finetune --out run
    vppwiener tune-control --out run
    vppwiener compare --out run

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .control import (closed_loop_simulate, control_cost,
                      segment_error_integral, step_metrics, tune_gains)
from .dataio import (read_summary, read_table, read_timeseries, write_summary,
                     write_table, write_timeseries)
from .errors import (ConfigError, DataError, DivergenceError, IntegrationError,
                     InvalidParameterError, OptimizerError, VPPError)
from .finetune import gradient_descent
from .ident import (analyse_step, average_time_constants, fit_static_map,
                    fit_static_map_normalized)
from .model import COEFF_NAMES, PARAM_NAMES, PUBLISHED_FINAL, WienerParams
from .plant import (generate_open_loop, generate_static_grid, generate_step_record)
from .protocols import StepProtocol, default_open_loop_schedule
from . import kernels

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
TS_CHANNELS = ("omega_ref", "beta_ref", "omega", "beta", "thrust")


def _protocols(cfg):
    s = cfg.steps
    protos = []
    for hold in s.beta_holds:
        protos.append(StepProtocol("omega", "up", 2000.0, tuple(np.linspace(2500.0, 6000.0, 5)),
                                   float(hold), s.pre_step, s.post_step))
        protos.append(StepProtocol("omega", "down", 6000.0, tuple(np.linspace(5500.0, 2000.0, 5)),
                                   float(hold), s.pre_step, s.post_step))
    for hold in s.omega_holds:
        protos.append(StepProtocol("beta", "up", -10.0, tuple(np.linspace(-6.0, 10.0, 5)),
                                   float(hold), s.pre_step, s.post_step))
        protos.append(StepProtocol("beta", "down", 10.0, tuple(np.linspace(6.0, -10.0, 5)),
                                   float(hold), s.pre_step, s.post_step))
    return protos


def _plant(cfg):
    return cfg.plant, cfg.aero, cfg.lowlevel


def cmd_gen_data(cfg, args, out):
    rng = np.random.default_rng(cfg.seed)
    seeds = rng.integers(0, 2 ** 32, size=3)
    grid = generate_static_grid(cfg.static_grid, *_plant(cfg), noise=cfg.noise,
                                seed=int(seeds[0]))
    write_table(out / "static_grid.csv", grid)
    steps_dir = out / "steps"
    steps_dir.mkdir(exist_ok=True)
    step_rng = np.random.default_rng(int(seeds[1]))
    index = {"file": [], "channel": [], "direction": [], "start_level": [],
             "end_level": [], "hold_level": [], "step_time": []}
    k = 0
    for proto in _protocols(cfg):
        for level in proto.end_levels:
            ts = generate_step_record(proto, level, *_plant(cfg), dt=cfg.dt, noise=cfg.noise,
                                      rng=step_rng, deadband=cfg.deadband)
            name = f"step_{k:03d}.csv"
            write_timeseries(steps_dir / name, ts, TS_CHANNELS)
            index["file"].append(k)
            index["channel"].append(0 if proto.channel == "omega" else 1)
            index["direction"].append(1 if proto.direction == "up" else -1)
            index["start_level"].append(proto.start_level)
            index["end_level"].append(level)
            index["hold_level"].append(proto.hold_level)
            index["step_time"].append(proto.pre_step)
            k += 1
    write_table(steps_dir / "index.csv", index)
    ol = cfg.open_loop
    sched = default_open_loop_schedule(int(seeds[2]) % (2 ** 31), ol.n_per_part, ol.hold,
                                       ol.omega_fixed, ol.beta_fixed)
    ts = generate_open_loop(sched, *_plant(cfg), dt=cfg.dt, noise=cfg.noise,
                            seed=int(seeds[2]), deadband=cfg.deadband)
    write_timeseries(out / "open_loop.csv", ts, TS_CHANNELS)
    return {"static_points": len(grid["omega"]), "step_records": k,
            "open_loop_samples": len(ts), "open_loop_duration_s": float(sched.duration),
            "noise_sigma_N": float(cfg.noise), "seed": cfg.seed}


def cmd_static_map(cfg, args, out):
    grid = read_table(args.input or out / "static_grid.csv")
    for c in ("omega", "beta", "thrust"):
        if c not in grid:
            raise DataError(f"static grid file lacks column {c!r}")
    spec = cfg.static_grid
    fit = fit_static_map(grid["omega"], grid["beta"], grid["thrust"],
                         beta_range=spec.fit_beta_range)
    nfit = fit_static_map_normalized(grid, cfg.normalization, spec.fit_beta_range)
    keep = (grid["beta"] >= spec.fit_beta_range[0] - 1e-9) & \
        (grid["beta"] <= spec.fit_beta_range[1] + 1e-9)
    write_table(out / "static_map.csv", {
        "omega": grid["omega"][keep], "beta": grid["beta"][keep],
        "thrust": grid["thrust"][keep], "residual": fit.residuals})
    rec = {f"phys_{n}": float(c) for n, c in zip(COEFF_NAMES, fit.coeffs)}
    rec["adjusted_r2"] = float(fit.adjusted_r2)
    rec.update({n: float(c) for n, c in zip(COEFF_NAMES, nfit.coeffs)})
    rec["normalized_adjusted_r2"] = float(nfit.adjusted_r2)
    rec["n_points"] = fit.n_points
    return rec


def cmd_step_ident(cfg, args, out):
    steps_dir = Path(args.input) if args.input else out / "steps"
    index = read_table(steps_dir / "index.csv")
    exps = []
    rows = {k: [] for k in ("file", "channel", "end_level", "hold_level", "tau_1", "tau_2",
                            "residual", "valid")}
    for i in range(len(index["file"])):
        ts = read_timeseries(steps_dir / f"step_{int(index['file'][i]):03d}.csv")
        channel = "omega" if index["channel"][i] == 0 else "beta"
        direction = "up" if index["direction"][i] > 0 else "down"
        e = analyse_step(ts, channel, direction, index["start_level"][i], index["end_level"][i],
                         index["hold_level"][i], index["step_time"][i])
        exps.append(e)
        t1, t2 = e.fitted if e.fit is not None else (np.nan, np.nan)
        rows["file"].append(index["file"][i])
        rows["channel"].append(index["channel"][i])
        rows["end_level"].append(index["end_level"][i])
        rows["hold_level"].append(index["hold_level"][i])
        rows["tau_1"].append(t1)
        rows["tau_2"].append(t2)
        rows["residual"].append(e.fit.residual if e.fit is not None else np.nan)
        rows["valid"].append(1 if e.valid else 0)
    write_table(out / "step_fits.csv", rows)
    tw = average_time_constants(exps, "omega")
    tb = average_time_constants(exps, "beta")
    rec = {"tau_omega_1": tw[0], "tau_omega_2": tw[1], "tau_beta_1": tb[0], "tau_beta_2": tb[1],
           "n_experiments": len(exps), "n_valid": sum(e.valid for e in exps)}
    static = out / "static_map_summary.txt"
    if static.exists():
        s = read_summary(static)
        rec.update({n: s[n] for n in COEFF_NAMES})
    return rec


def _load_params(spec, out, default):
    if spec == "published":
        return PUBLISHED_FINAL
    path = Path(spec) if spec else out / default
    rec = read_summary(path)
    missing = [n for n in PARAM_NAMES if n not in rec]
    if missing:
        raise DataError(f"{path}: missing parameter(s) {', '.join(missing)}")
    return WienerParams(*(float(rec[n]) for n in PARAM_NAMES))


def cmd_finetune(cfg, args, out):
    p0 = _load_params(args.params, out, "step_ident_summary.txt")
    data = read_timeseries(args.input or out / "open_loop.csv")
    res = gradient_descent(p0, data, cfg.finetune, cfg.normalization)
    res.curve.to_csv(out / "learning_curve.csv")
    rec = {n: float(v) for n, v in zip(PARAM_NAMES, res.params.to_vector())}
    rec.update({f"initial_{n}": float(v) for n, v in zip(PARAM_NAMES, res.initial.to_vector())})
    rec.update({"initial_cost": res.curve.costs[0], "final_cost": res.curve.costs[-1],
                "iterations": len(res.curve) - 1, "stop_reason": res.stop_reason,
                "cost_reduction": float(res.curve.reduction)})
    return rec


def _control_model(cfg, args, out):
    model = _load_params(args.params, out, "finetune_summary.txt")
    if cfg.control.tau_beta_2 is not None:
        model = model.replace(tau_beta_2=float(cfg.control.tau_beta_2))
    return model


def _traj_record(prefix, ts, run):
    t1, t2 = run.step_times
    up = step_metrics(ts, t1, t2)
    down = step_metrics(ts, t2, run.t_opt)
    return {f"{prefix}settling_up_s": up.settling_time, f"{prefix}overshoot_up": up.overshoot,
            f"{prefix}settling_down_s": down.settling_time,
            f"{prefix}overshoot_down": down.overshoot,
            f"{prefix}ise_step_down": segment_error_integral(ts, t2)}


def _write_traj(path, ts):
    write_timeseries(path, ts, ("setpoint", "thrust", "omega_ref", "beta_ref", "omega", "beta"))


def cmd_tune_control(cfg, args, out):
    model = _control_model(cfg, args, out)
    run, mode = cfg.control.run, cfg.control.mode
    rec = {"mode": mode}
    if cfg.control.gains is not None:
        gains = cfg.control.gains
        cost = control_cost(gains, model, run, mode)
    else:
        res = tune_gains(model, run, mode)
        gains, cost = res.gains, res.cost
        for k, (g, c) in enumerate(zip(res.stage_gains, res.stage_costs), start=1):
            rec[f"stage{k}_cost"] = float(c)
    rec.update({k: float(v) for k, v in gains.as_dict().items()})
    rec["cost"] = float(cost)
    ts = closed_loop_simulate(model, gains, run, mode)
    _write_traj(out / "control_trajectory.csv", ts)
    rec.update(_traj_record("", ts, run))
    return rec


def cmd_compare(cfg, args, out):
    model = _control_model(cfg, args, out)
    run = cfg.control.run
    rec = {}
    for mode in ("combined", "rpm_only"):
        res = tune_gains(model, run, mode)
        ts = closed_loop_simulate(model, res.gains, run, mode)
        _write_traj(out / f"compare_{mode}.csv", ts)
        rec.update({f"{mode}_{k}": float(v) for k, v in res.gains.as_dict().items()
                    if mode == "combined" or k.endswith("omega")})
        rec[f"{mode}_cost"] = float(res.cost)
        rec.update(_traj_record(f"{mode}_", ts, run))
    rec["combined_better"] = rec["combined_cost"] <= rec["rpm_only_cost"]
    return rec


def cmd_simulate(cfg, args, out):
    if not args.input:
        raise DataError("simulate needs --input with t, omega_ref, beta_ref columns")
    sched = read_timeseries(args.input, required=("t", "omega_ref", "beta_ref"))
    model = _load_params(args.params, out, "finetune_summary.txt")
    norm = cfg.normalization
    uw = np.ascontiguousarray(norm.omega(sched["omega_ref"]))
    ub = np.ascontiguousarray(norm.beta(sched["beta_ref"]))
    x0 = np.array([uw[0], ub[0], uw[0], ub[0]])
    states, thrust = kernels.wiener_run(model.taus, model.coeffs, x0, uw, ub, sched.grid.dt)
    if not np.all(np.isfinite(thrust)):
        raise IntegrationError("model simulation became non-finite")
    ts = sched.with_channels(omega=norm.omega_inv(states[:, 0]), beta=norm.beta_inv(states[:, 1]),
                             thrust=norm.thrust_inv(thrust))
    write_timeseries(out / "simulate.csv", ts, TS_CHANNELS)
    return {"samples": len(ts), "thrust_mean_N": float(np.mean(ts["thrust"])),
            "thrust_max_N": float(np.max(ts["thrust"]))}


COMMANDS = {
    "gen-data": (cmd_gen_data, "gen_data_summary.txt",
                 "simulate the static grid, step campaign and open-loop record"),
    "static-map": (cmd_static_map, "static_map_summary.txt", "fit the static thrust map"),
    "step-ident": (cmd_step_ident, "step_ident_summary.txt",
                   "fit two-lag time constants of the step campaign"),
    "finetune": (cmd_finetune, "finetune_summary.txt",
                 "refine the model on the open-loop record"),
    "tune-control": (cmd_tune_control, "tune_control_summary.txt",
                     "tune (or evaluate) the thrust PID gains"),
    "compare": (cmd_compare, "compare_summary.txt", "combined versus RPM-only actuation"),
    "simulate": (cmd_simulate, "simulate_summary.txt",
                 "run the model on a reference schedule CSV"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--noise", type=float, help="thrust noise sigma in N")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, e.g. finetune.overrides.tau_beta_2=0.05")
    common.add_argument("--input", help="input file or directory (stage specific)")
    common.add_argument("--params", help="model summary file or 'published'")
    parser = argparse.ArgumentParser(prog="vppwiener", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_)
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.override)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.noise is not None:
            overrides.append(f"noise={args.noise!r}")
        cfg = load_config(args.config, overrides)
        out = Path(args.out if args.out is not None else cfg.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"{out}: cannot create output directory ({exc.strerror})") from None
        func, summary, _ = COMMANDS[args.command]
        rec = func(cfg, args, out)
        write_summary(out / summary, rec)
    except ConfigError as exc:
        print(f"vppwiener: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"vppwiener: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (IntegrationError, DivergenceError, OptimizerError, InvalidParameterError) as exc:
        print(f"vppwiener: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VPPError as exc:  # pragma: no cover
        print(f"vppwiener: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{args.command}: wrote {out / summary}")
    return EXIT_OK


def main():  # pragma: no cover
    sys.exit(run())
