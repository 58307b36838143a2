"""Command-line entry point: ``opinion-kinetics <command> <config.json>``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dynamics, experiments, steady
from .config import COMMANDS, RunConfig, load_config
from .errors import ConfigError, MeasureError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VERIFY = 4

EPILOG = """\
exit status:
  0  success (verify: every non-advisory check passed)
  2  configuration error (unreadable file, malformed JSON, invalid or missing field)
  3  numerical failure (integration blow-up, solver failure)
  4  verification failure (verify found a failing non-advisory check)

shipped configs live in the package directory opinion_kinetics/defaults;
defaults/verify.json runs the full suite.
"""

DEFAULTS_DIR = Path(__file__).parent / "defaults"
LOGISTIC_TOL = 1e-8


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2) + "\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir {out} is not writable: {exc.strerror}") from None
    return out


def _sim(cfg: RunConfig) -> dynamics.SimConfig:
    cfg.require("sim")
    return cfg.sim.build()


def _report(out: Path, report: experiments.StudyReport) -> dict:
    _write_json(out / f"{report.name}.json", report.to_dict())
    (out / f"{report.name}.csv").write_text(report.series_csv())
    return {"name": report.name, "pass": report.passed, "advisory": report.advisory}


def run_simulate(cfg: RunConfig, out: Path) -> dict:
    params = cfg.params.build()
    mu0 = cfg.measure()
    sim = _sim(cfg)
    traj = dynamics.simulate(mu0, params, sim)
    dynamics.write_trajectory(traj, out / "trajectory.csv", out / "trajectory.json")
    diag = experiments.run_diagnostics(traj, sim.dt)
    ok = experiments.diagnostics_ok(diag) and dynamics.slice_orders_preserved(traj)
    checks = {"diagnostics": diag}
    if mu0.n_atoms == 1:
        exact = dynamics.single_agent_solution(traj.times, float(mu0.y[0]), float(mu0.theta[0]), params)
        err = float(np.max(np.abs(traj.ys[:, 0] - exact)))
        checks["logistic_error"] = err
        ok = ok and err <= LOGISTIC_TOL
    _write_json(out / "checks.json", checks)
    return {"name": "simulate", "pass": bool(ok), "advisory": False}


def run_steady(cfg: RunConfig, out: Path) -> dict:
    params = cfg.params.build()
    pi = cfg.marginal()
    # profiles live in unit-friction variables
    if params.sigma != 1.0:
        pi = type(pi)(pi.theta * params.sigma, pi.mass)
    profile = steady.solve_profile(pi, params.p, cfg.grid_n, cfg.theta_range)
    steady.write_profile(profile, out / "profile.csv", out / "profile.json")
    low_ok, high_ok = steady.extreme_value_check(profile)
    ok = (
        steady.rough_bound_violation(profile) <= steady.INVARIANT_TOL
        and steady.refined_lower_bound_check(profile) <= steady.INVARIANT_TOL
        and low_ok and high_ok
    )
    return {"name": "steady", "pass": bool(ok), "advisory": bool(profile.non_unique)}


def run_figure(cfg: RunConfig, out: Path) -> dict:
    fig = cfg.figure
    table = steady.figure_curves(fig.p, fig.alphas, fig.theta_grid)
    (out / "figure.csv").write_text(steady.figure_to_csv(table))
    g = table.g
    in_theta = bool(np.all(np.diff(g, axis=1) > 0))
    in_alpha = bool(np.all(np.diff(g, axis=0) > 0))
    _write_json(out / "figure.json", {
        "p": fig.p, "alphas": list(fig.alphas), "n_theta": len(fig.theta_grid),
        "increasing_in_theta": in_theta, "increasing_in_alpha": in_alpha,
    })
    return {"name": "figure", "pass": in_theta and in_alpha, "advisory": False}


def run_rates(cfg: RunConfig, out: Path) -> dict:
    report = experiments.mono_opinion_study(cfg.measure(), cfg.params.build(), _sim(cfg), cfg.tail_fraction)
    return _report(out, report)


def run_uniqueness(cfg: RunConfig, out: Path) -> dict:
    report = experiments.uniqueness_study(
        cfg.measure(), cfg.measure("initial_measure_b"), cfg.params.build(), _sim(cfg), cfg.tail_fraction
    )
    return _report(out, report)


def run_stability(cfg: RunConfig, out: Path) -> dict:
    params = cfg.params.build()
    pi = cfg.marginal()
    if params.sigma != 1.0:
        pi = type(pi)(pi.theta * params.sigma, pi.mass)
    report = experiments.marginal_stability_study(pi, cfg.eps, params.p, cfg.grid_n)
    return _report(out, report)


def run_meanfield(cfg: RunConfig, out: Path) -> dict:
    cfg.require("Ns")
    report = experiments.mean_field_study(cfg.measure(), cfg.Ns, cfg.params.build(), _sim(cfg))
    return _report(out, report)


def run_energy(cfg: RunConfig, out: Path) -> dict:
    report = experiments.energy_descent_study(cfg.measure(), cfg.params.build(), _sim(cfg))
    return _report(out, report)


RUNNERS = {
    "simulate": run_simulate,
    "steady": run_steady,
    "figure": run_figure,
    "rates": run_rates,
    "uniqueness": run_uniqueness,
    "stability": run_stability,
    "meanfield": run_meanfield,
}


def run_verify(cfg: RunConfig, out: Path) -> dict:
    cfg.require("configs")
    results = []
    for rel in cfg.configs:
        path = cfg.resolve(rel)
        sub = load_config(path)
        if sub.command is None or sub.command == "verify":
            raise ConfigError(f"{path}: verify entries need a non-verify command")
        sub_out = out / path.stem
        sub.output_dir = str(sub_out)
        res = RUNNERS[sub.command](sub, _out_dir(sub))
        res["config"] = path.name
        results.append(res)
    if cfg.energy_config is not None:
        path = cfg.resolve(cfg.energy_config)
        sub = load_config(path)
        sub.output_dir = str(out / path.stem)
        res = run_energy(sub, _out_dir(sub))
        res["config"] = path.name
        results.append(res)
    failed = [r for r in results if not r["pass"] and not r["advisory"]]
    summary = {"results": results, "failed": [r["config"] for r in failed], "pass": not failed}
    _write_json(out / "summary.json", summary)
    return {"name": "verify", "pass": not failed, "advisory": False, "results": results}


RUNNERS["verify"] = run_verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opinion-kinetics",
        description="Simulate and analyze kinetic opinion dynamics with fixed convictions.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", help="JSON run configuration")
    parser.add_argument("--t-final", type=float, help="override sim.t_final")
    parser.add_argument("--dt", type=float, help="override sim.dt")
    parser.add_argument("--out", help="override output_dir")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> None:
    if args.out is not None:
        cfg.output_dir = args.out
    if args.t_final is not None or args.dt is not None:
        cfg.require("sim")
        update = {}
        if args.t_final is not None:
            update["t_final"] = args.t_final
        if args.dt is not None:
            update["dt"] = args.dt
        if any(not v > 0 for v in update.values()):
            raise ConfigError("--t-final and --dt must be positive")
        cfg.sim = cfg.sim.model_copy(update=update)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command)
        _apply_overrides(cfg, args)
        out = _out_dir(cfg)
        result = RUNNERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeasureError as exc:
        print(f"config error: invalid measure: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.command == "verify":
        for r in result["results"]:
            status = "PASS" if r["pass"] else ("ADVISORY" if r["advisory"] else "FAIL")
            print(f"{status:8s} {r['config']} ({r['name']})")
    else:
        status = "pass" if result["pass"] else "fail"
        print(f"{args.command}: {status}{' (advisory)' if result['advisory'] else ''} -> {out}")
    if args.command == "verify" and not result["pass"]:
        return EXIT_VERIFY
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
