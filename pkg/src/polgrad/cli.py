"""Command-line entry point: ``polgrad {train,gradcheck,scaling,example}``."""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import running_example
from .config import (ConfigError, build_env, build_init_dist, build_model, build_policy, build_reward,
                     build_theta, load_config, study_settings, train_settings, training_config)
from .diagnostics import ScalingStudyConfig, scaling_study
from .dynamics import DivergenceError, rollout
from .estimator import (finite_difference_gradient, gradient_backward, gradient_forward, relative_error,
                        sensitivities_forward)
from .distributions import sample_initial_conditions
from .policy import write_atomic
from .trainer import train

RUN_LOG_COLUMNS = ("iter", "mean_reward", "grad_norm", "rms_error", "clamp_events")
GRADCHECK_COLUMNS = ("check", "max_rel_error", "tolerance", "status")
SCALING_COLUMNS = ("study", "T", "seed", "grad_norm", "sq_deviation", "bias_norm", "variance", "hessian_norm")
SUMMARY_COLUMNS = ("study", "quantity", "regime", "slope_exp", "r2_exp", "residual_exp", "slope_poly",
                   "r2_poly", "residual_poly", "n_horizons", "truncated_at")
EXAMPLE_COLUMNS = {"hessian": running_example.HESSIAN_COLUMNS, "blowup": running_example.BLOWUP_COLUMNS,
                   "variance": running_example.VARIANCE_COLUMNS}

TOL_FORM = 1e-10
TOL_FD = 1e-5

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    write_atomic(path, csv_text(columns, rows))


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *args):
        if not self.quiet:
            print(*args, flush=True)


def _config(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    return load_config(args.config).with_seed(args.seed)


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    say = _Out(args.quiet)
    cfg = _config(args)
    out = _out_dir(args)
    config = training_config(cfg, checkpoint_dir=out)

    def report(entry, theta):
        say(f"iter {entry.iter:4d}  reward {entry.mean_reward:.6g}  rms {entry.rms_error:.4g}  "
            f"|g| {entry.grad_norm:.4g}  clamps {entry.clamp_events}")

    log = train(config, callback=report)
    rows = [{c: getattr(e, c) for c in RUN_LOG_COLUMNS} for e in log.entries]
    write_csv(os.path.join(out, "run_log.csv"), RUN_LOG_COLUMNS, rows)
    say(f"wrote {os.path.join(out, 'run_log.csv')}")
    return EXIT_OK


def gradient_checks(env, model, policy, theta, reward, x0, T) -> list[dict]:
    """The three gradcheck comparisons as rows of the gradcheck report."""
    traj = rollout(env, model, policy, theta, x0, T)
    form = 0.0
    for source in ("true", "model"):
        fwd = gradient_forward(traj, reward, sensitivities_forward(traj, source), source).g
        bwd = gradient_backward(traj, source, reward).g
        form = max(form, relative_error(fwd, bwd))
    fd = finite_difference_gradient(env, policy, theta, reward, x0, T).g
    true_err = relative_error(gradient_backward(traj, "true", reward).g, fd)
    model_err = relative_error(gradient_backward(traj, "model", reward).g, fd)
    exact = model == env
    return [
        {"check": "forward_vs_backward", "max_rel_error": form, "tolerance": TOL_FORM,
         "status": "pass" if form <= TOL_FORM else "FAIL"},
        {"check": "true_jacobian_vs_fd", "max_rel_error": true_err, "tolerance": TOL_FD,
         "status": "pass" if true_err <= TOL_FD else "FAIL"},
        {"check": "model_vs_fd", "max_rel_error": model_err, "tolerance": TOL_FD,
         "status": ("pass" if model_err <= TOL_FD else "FAIL") if exact else "bias, informational"},
    ]


def cmd_gradcheck(args) -> int:
    say = _Out(args.quiet)
    cfg = _config(args)
    T = train_settings(cfg)["T"]
    env, model = build_env(cfg), build_model(cfg)
    policy = build_policy(cfg, T)
    theta = build_theta(cfg, policy)
    x0 = sample_initial_conditions(build_init_dist(cfg), 1, np.random.SeedSequence(cfg.seed))[0]
    rows = gradient_checks(env, model, policy, theta, build_reward(cfg, policy), x0, T)
    for r in rows:
        say(f"{r['check']:<22s} {r['max_rel_error']:.3e}  (tol {r['tolerance']:.0e})  {r['status']}")
    if args.out:
        write_csv(os.path.join(_out_dir(args), "gradcheck.csv"), GRADCHECK_COLUMNS, rows)
    return EXIT_FAIL if any(r["status"] == "FAIL" for r in rows) else EXIT_OK


def scaling_rows(result):
    rows = []
    for m in result.measurements:
        base = {"study": result.name, "T": m.T, "bias_norm": m.bias_norm, "variance": m.variance,
                "hessian_norm": m.hessian_norm}
        if m.seed_norms:
            for s, (gn, dev) in enumerate(zip(m.seed_norms, m.seed_sq_deviations)):
                rows.append({**base, "seed": s, "grad_norm": gn, "sq_deviation": dev})
        else:
            rows.append(base)
    summary = []
    for q, fit in result.fits.items():
        summary.append({"study": result.name, "quantity": q, "regime": fit.regime, "slope_exp": fit.slope_exp,
                        "r2_exp": fit.r2_exp, "residual_exp": fit.residual_exp, "slope_poly": fit.slope_poly,
                        "r2_poly": fit.r2_poly, "residual_poly": fit.residual_poly,
                        "n_horizons": len(result.measurements), "truncated_at": result.truncated_at})
    return rows, summary


def cmd_scaling(args) -> int:
    say = _Out(args.quiet)
    cfg = _config(args)
    st = study_settings(cfg)
    env, model = build_env(cfg), build_model(cfg)

    def make_policy(T):
        return build_policy(cfg, T)

    def make_theta(policy):
        return build_theta(cfg, policy)

    reward = build_reward(cfg, make_policy(st["horizons"][-1]))
    study = ScalingStudyConfig(env=env, model=model, make_policy=make_policy, make_theta=make_theta,
                               reward=reward, horizons=st["horizons"], init_dist=build_init_dist(cfg),
                               N=st["N"], n_seeds=st["n_seeds"], bias_samples=st["bias_samples"],
                               seed=cfg.seed, quantities=st["quantities"], name=st["name"])
    result = scaling_study(study)
    rows, summary = scaling_rows(result)
    out = _out_dir(args)
    write_csv(os.path.join(out, "scaling.csv"), SCALING_COLUMNS, rows)
    write_csv(os.path.join(out, "scaling_summary.csv"), SUMMARY_COLUMNS, summary)
    if result.truncated_at is not None:
        say(f"note: {result.note}")
    for s in summary:
        say(f"{s['quantity']:<9s} regime {s['regime']:<12s} log-slope vs T {s['slope_exp']:.4f}  "
            f"vs log T {s['slope_poly']:.4f}")
    return EXIT_OK


def cmd_example(args) -> int:
    say = _Out(args.quiet)
    seed = args.seed
    if seed is None and args.config:
        seed = load_config(args.config).seed
    seed = 0 if seed is None else seed
    case = args.case
    if case == "hessian":
        rows = running_example.hessian_table()
        for mode in ("open_loop", "feedback"):
            kap = {r["T"]: r["kappa_reference"] for r in rows if r["mode"] == mode}
            say(f"{mode}: kappa by T " + ", ".join(f"{T}: {k:.6g}" for T, k in kap.items()))
    elif case == "blowup":
        rows = running_example.blowup_table()
        worst = max(abs(r["residual"]) for r in rows)
        say(f"blowup: {len(rows)} (t, t') pairs, max |residual| {worst:.3e}")
    else:
        rows = running_example.variance_table(seed=seed)
        for r in rows:
            say(f"{r['sweep']}-sweep T={r['T']:3d} N={r['N']:3d}  var {r['variance']:.6g}  "
                f"reference {r['variance_reference']:.6g}")
    path = os.path.join(_out_dir(args), f"example_{case}.csv")
    write_csv(path, EXAMPLE_COLUMNS[case], rows)
    say(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _schema(name, columns) -> str:
    return f"  {name}: " + ",".join(columns)


TRAIN_HELP = "\n".join([
    "Runs model-based gradient ascent from a config file.", "", "Outputs in --out:",
    _schema("run_log.csv", RUN_LOG_COLUMNS),
    "    one row per evaluation, iter 0..K; grad_norm is the norm of the batch",
    "    gradient used for the step after that evaluation (nan on the last row).",
    "  theta_####.json: policy checkpoint per iteration (when [train] checkpoints = true).",
])
GRADCHECK_HELP = "\n".join([
    "Checks the gradient estimators against each other and finite differences.", "",
    "Compares forward vs backward estimator forms, the true-Jacobian estimate vs",
    "finite differences, and the configured model's estimate vs finite differences.",
    "Exit status 1 if a check fails; a mismatched model's error is reported as",
    "'bias, informational' and never fails.", "", "With --out also writes:",
    _schema("gradcheck.csv", GRADCHECK_COLUMNS),
])
SCALING_HELP = "\n".join([
    "Measures gradient bias, variance and Hessian norm across the [study] horizons.", "",
    "Outputs in --out:",
    _schema("scaling.csv", SCALING_COLUMNS),
    "    one row per (T, seed); per-T quantities repeat on each seed row.",
    _schema("scaling_summary.csv", SUMMARY_COLUMNS),
    "    one row per quantity; regime is exponential or polynomial.",
])
EXAMPLE_HELP = "\n".join([
    "Scalar running example with closed-form reference columns.", "", "Outputs in --out:",
    *[_schema(f"example_{k}.csv", v) for k, v in EXAMPLE_COLUMNS.items()],
])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polgrad", description="Model-based policy gradients with low-level feedback.",
        epilog="POLGRAD_THREADS caps worker threads (default 1).",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config file")
    common.add_argument("--out", metavar="DIR", help="output directory (default: current)")
    common.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text, fn in (("train", TRAIN_HELP, cmd_train), ("gradcheck", GRADCHECK_HELP, cmd_gradcheck),
                           ("scaling", SCALING_HELP, cmd_scaling), ("example", EXAMPLE_HELP, cmd_example)):
        p = sub.add_parser(name, parents=[common], description=text, help=text.splitlines()[0],
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=fn)
        if name == "example":
            p.add_argument("--case", required=True, choices=("hessian", "blowup", "variance"))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
