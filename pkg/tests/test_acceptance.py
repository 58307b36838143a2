"""The thirteen acceptance criteria, each at its stated tolerance.

Every test prints one PASS/FAIL line; the lines are repeated in the terminal
summary so they show up in a plain ``pytest`` run as well.
"""

import json

import numpy as np
import pytest

from opinion_kinetics import cli
from opinion_kinetics.config import load_config
from opinion_kinetics.dynamics import (
    ModelParams,
    SimConfig,
    rescale_from_unit_sigma,
    rescale_to_unit_sigma,
    simulate,
    single_agent_solution,
)
from opinion_kinetics.experiments import (
    marginal_stability_study,
    mono_opinion_study,
    uniqueness_study,
)
from opinion_kinetics.measure import (
    ConvictionMarginal,
    EmpiricalMeasure,
    conviction_marginal,
    wasserstein1_1d,
    wasserstein1_joint,
)
from opinion_kinetics.steady import (
    extreme_value_check,
    figure_curves,
    g_prime,
    g_second,
    inflection_points,
    refined_lower_bound_check,
    rough_bound_violation,
    solve_g_given_alpha,
    solve_profile,
    uniqueness_condition,
)

import oracles
from conftest import ACCEPTANCE

DEFAULTS = cli.DEFAULTS_DIR


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def verify_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("verify")
    status = cli.main(["verify", str(DEFAULTS / "verify.json"), "--out", str(out)])
    return out, status


@pytest.fixture(scope="module")
def rates_report():
    cfg = load_config(DEFAULTS / "rates.json")
    return cfg, mono_opinion_study(cfg.measure(), cfg.params.build(), cfg.sim.build(), cfg.tail_fraction)


def test_c01_single_agent_exactness():
    worst = 0.0
    for p in (1.0, 2.0, 6.0):
        for y0, theta in [(0.3, 1.7), (0.9, 0.4), (1.2, 2.0)]:
            mu = EmpiricalMeasure.from_atoms([(y0, theta, 1.0)])
            params = ModelParams(1.0, p)
            traj = simulate(mu, params, SimConfig(5.0, 1e-3, 1))
            exact = single_agent_solution(traj.times, y0, theta, params)
            worst = max(worst, float(np.max(np.abs(traj.ys[:, 0] - exact))))
    record(1, worst <= 1e-8, f"sup error {worst:.2e} (tol 1e-8)")


def test_c02_p1_closed_form():
    worst = 0.0
    for theta in np.linspace(0.1, 3.0, 10):
        for alpha in np.linspace(0.05, 2.0, 10):
            exact = (theta - 1 + np.sqrt((1 - theta) ** 2 + 4 * alpha)) / 2
            worst = max(worst, abs(solve_g_given_alpha(theta, alpha, 1.0) - exact))
    record(2, worst <= 1e-12, f"max error {worst:.2e} over 10x10 sweep (tol 1e-12)")


def test_c03_dirac_profile():
    worst = 0.0
    for theta0 in (0.5, 1.0, 2.0):
        for p in (1.0, 2.0, 6.0):
            prof = solve_profile(ConvictionMarginal([theta0], [1.0]), p)
            worst = max(worst, abs(prof.g_atoms[0] - theta0 ** (1 / p)))
    record(3, worst <= 1e-10, f"max error {worst:.2e} (tol 1e-10)")


def test_c04_w1_oracle():
    rng = np.random.default_rng(2024)
    worst_line = worst_joint = 0.0
    for _ in range(100):
        na, nb = rng.integers(1, 9, size=2)
        xa, xb = rng.uniform(0, 5, na), rng.uniform(0, 5, nb)
        wa, wb = rng.dirichlet(np.ones(na)), rng.dirichlet(np.ones(nb))
        got = wasserstein1_1d(list(zip(xa, wa)), list(zip(xb, wb)))
        worst_line = max(worst_line, abs(got - oracles.lp_w1_line(xa, wa, xb, wb)))
    for _ in range(100):
        na, nb = rng.integers(1, 6, size=2)
        a = EmpiricalMeasure(rng.uniform(0.1, 3, na), rng.choice([0.5, 1.0, 2.0], na), rng.dirichlet(np.ones(na)))
        b = EmpiricalMeasure(rng.uniform(0.1, 3, nb), rng.choice([0.5, 1.0, 2.0], nb), rng.dirichlet(np.ones(nb)))
        worst_joint = max(worst_joint, abs(wasserstein1_joint(a, b) - oracles.lp_w1_joint(a, b)))
    ok = worst_line <= 1e-12 and worst_joint <= 1e-12
    record(4, ok, f"1-D max gap {worst_line:.1e}, joint max gap {worst_joint:.1e} vs LP (tol 1e-12)")


def test_c05_dynamics_vs_algebra(rates_report):
    cfg, report = rates_report
    pi = conviction_marginal(cfg.measure())
    unit_pi = ConvictionMarginal(pi.theta * cfg.params.sigma, pi.mass)
    assume = uniqueness_condition(unit_pi.theta_min, unit_pi.theta_max, cfg.params.p)
    err = report.metrics["final_position_error"]
    n = cfg.measure().n_atoms
    ok = assume and n == 20 and len(pi.theta) == 3 and cfg.sim.t_final == 50 and err <= 1e-6
    record(5, ok, f"{n} atoms, {len(pi.theta)} convictions, t=50 position error {err:.2e} (tol 1e-6)")


def test_c06_exponential_convergence(rates_report):
    _, report = rates_report
    fit = report.fit
    n_samples = len(report.series)
    trailing_half = fit.n_points == -(-n_samples // 2)
    ok = trailing_half and fit.slope < -0.01 and fit.r_squared > 0.99
    record(6, ok, f"slope {fit.slope:.4f}, r2 {fit.r_squared:.8f} over last {fit.n_points}/{n_samples} samples")


def test_c07_uniqueness_contraction():
    cfg = load_config(DEFAULTS / "uniqueness.json")
    a, b = cfg.measure(), cfg.measure("initial_measure_b")
    p = cfg.params.p
    pi = conviction_marginal(a)
    report = uniqueness_study(a, b, cfg.params.build(), cfg.sim.build(), cfg.tail_fraction)
    final = report.metrics["final_distance"]
    ok = (
        pi.theta_min * cfg.params.sigma > (p + 1) / p
        and not np.array_equal(a.y, b.y)
        and final < 1e-6
        and report.fit.r_squared > 0.99
        and report.fit.slope < 0
    )
    record(7, ok, f"final distance {final:.1e}, slope {report.fit.slope:.3f}, r2 {report.fit.r_squared:.6f}"
                  f"{'; ' + report.notes if report.notes else ''}")


def _all_diagnostics(out):
    diags = []
    for name in ("simulate_single", "simulate_three"):
        diags.append(json.loads((out / name / "checks.json").read_text())["diagnostics"])
    rates = json.loads((out / "rates" / "mono_opinion.json").read_text())["metrics"]
    diags.append({k: rates[k] for k in ("envelope_violation", "slice_bound_margin", "energy_increase")})
    diags += json.loads((out / "uniqueness" / "uniqueness.json").read_text())["metrics"]["diagnostics"]
    diags += json.loads((out / "meanfield" / "mean_field.json").read_text())["metrics"]["diagnostics"]
    diags.append(json.loads((out / "energy" / "energy_descent.json").read_text())["metrics"]["diagnostics"])
    return diags


def test_c08_bounds(verify_out):
    out, status = verify_out
    diags = _all_diagnostics(out)
    env = max(d["envelope_violation"] for d in diags)
    margins = [d["slice_bound_margin"] for d in diags if d["slice_bound_margin"] is not None]
    worst_margin = min(margins)
    # every profile solved for a shipped config
    profiles = [json.loads((out / "steady" / "profile.json").read_text())["bound_checks"]]
    worst_profile = max(p["rough_bound_violation"] for p in profiles)
    worst_profile = max(worst_profile, max(p["refined_bound_violation"] for p in profiles))
    extremes = all(all(p["extreme_values"]) for p in profiles)
    for name in ("rates", "uniqueness", "stability"):
        cfg = load_config(DEFAULTS / f"{name}.json")
        pi = cfg.marginal()
        pi = ConvictionMarginal(pi.theta * cfg.params.sigma, pi.mass)
        prof = solve_profile(pi, cfg.params.p)
        worst_profile = max(worst_profile, rough_bound_violation(prof), refined_lower_bound_check(prof))
        extremes = extremes and all(extreme_value_check(prof))
    ok = env <= 1e-6 and worst_margin >= -1e-9 and worst_profile <= 1e-10 and extremes and len(margins) > 0
    record(8, ok, f"{len(diags)} runs: envelope {env:.1e}, slice margin {worst_margin:.1e}, "
                  f"profile bound excess {worst_profile:.1e}")


def test_c09_energy_descent(verify_out):
    out, status = verify_out
    diags = _all_diagnostics(out)
    dt = 1e-3  # every shipped simulation uses dt = 1e-3
    for name in ("simulate_single", "simulate_three", "rates", "uniqueness", "meanfield", "energy"):
        assert load_config(DEFAULTS / f"{name}.json").sim.dt == dt
    worst = max(d["energy_increase"] for d in diags)
    energy = json.loads((out / "energy" / "energy_descent.json").read_text())
    ratio = energy["metrics"]["refinement_ratio"]
    ok = worst <= dt**2 and ratio is not None and ratio >= 1.9 and energy["pass"]
    record(9, ok, f"max energy increase {worst:.1e} (tol dt^2 = {dt**2:.0e}), residual ratio {ratio:.3f}")


def test_c10_derivatives_and_inflections():
    h = 1e-4
    # second differences cannot resolve below this (times g), so g'' near an inflection uses it as atol
    floor = 4 * np.finfo(float).eps / h**2
    worst1 = usage2 = 0.0
    for p in (0.5, 1.0, 2.0, 3.0, 6.0):
        for alpha in (0.1, 0.5, 1.0, 2.0):
            for theta in np.linspace(0.1, 3.0, 30):
                gm, g0, gp = (solve_g_given_alpha(t, alpha, p) for t in (theta - h, theta, theta + h))
                d1, d2 = g_prime(theta, g0, p, alpha), g_second(theta, g0, p, alpha)
                worst1 = max(worst1, abs((gp - gm) / (2 * h) - d1) / abs(d1))
                usage2 = max(usage2, abs((gp - 2 * g0 + gm) / h**2 - d2) / (1e-4 * abs(d2) + floor * g0))
    p2 = inflection_points(solve_profile(ConvictionMarginal.from_atoms([(0.5, 0.5), (1.5, 0.5)]), 2.0))
    phalf = inflection_points(solve_profile(ConvictionMarginal.from_atoms([(0.2, 0.4), (3.0, 0.6)]), 0.5))
    p6 = [len(inflection_points(solve_profile(ConvictionMarginal.from_atoms(atoms), 6.0)))
          for atoms in ([(0.3, 0.5), (1.0, 0.5)], [(0.05, 0.2), (0.5, 0.3), (1.5, 0.5)], [(2.0, 1.0)])]
    ok = (
        worst1 <= 1e-6 and usage2 <= 1.0
        and len(p2) == 1 and abs(p2[0] - 1.0) <= 1e-8
        and phalf == [] and max(p6) <= 1
    )
    record(10, ok, f"g' rel {worst1:.1e} (tol 1e-6), g'' {usage2:.2f} of tol; p=2 inflection {p2}, "
                   f"p=0.5 {len(phalf)}, p=6 counts {p6}")


def test_c11_figure():
    table = figure_curves(6.0)
    in_theta = bool(np.all(np.diff(table.g, axis=1) > 0))
    in_alpha = bool(np.all(np.diff(table.g, axis=0) > 0))
    ok = table.g.shape[0] == 10 and in_theta and in_alpha and table.thetas[0] > 0 and table.thetas[-1] == 1.0
    record(11, ok, f"{table.g.shape[0]} curves x {table.g.shape[1]} thetas, increasing in theta {in_theta}, "
                   f"ordered in alpha {in_alpha}")


def test_c12_marginal_stability():
    cfg = load_config(DEFAULTS / "stability.json")
    pi = cfg.marginal()
    report = marginal_stability_study(pi, cfg.eps, cfg.params.p, cfg.grid_n)
    eps = [e for e, _ in report.series]
    spread = report.metrics["ratio_spread"]
    ok = (
        np.allclose(eps, [1e-3, 5e-4, 2.5e-4, 1.25e-4], rtol=0, atol=1e-18)
        and report.metrics["unique_condition"]
        and spread < 2.0
    )
    record(12, ok, f"ratio spread {spread:.4f} over eps {eps} (tol 2)")


def test_c13_rescaling_round_trip():
    rng = np.random.default_rng(13)
    mu = EmpiricalMeasure.uniform(rng.uniform(0.2, 2.0, 12), np.repeat([0.5, 1.0, 1.5], 4))
    params = ModelParams(2.0, 1.0)
    cfg = SimConfig(5.0, 1e-3, 50)
    direct = simulate(mu, params, cfg)
    scaled, unit = rescale_to_unit_sigma(mu, params)
    via = simulate(scaled, unit, cfg)
    back = np.array([rescale_from_unit_sigma(s, params).y for s in via.states])
    err = float(np.max(np.abs(back - direct.ys)))
    # brute-force check that the substitution does not also rescale time
    stretched = simulate(scaled, unit, SimConfig(10.0, 1e-3, 100))
    back_t = np.array([rescale_from_unit_sigma(s, params).y for s in stretched.states])
    err_t = float(np.max(np.abs(back_t - direct.ys)))
    ok = err <= 1e-8 and err_t > 1e-4
    record(13, ok, f"time-preserving map error {err:.1e} (tol 1e-8); time-doubled map error {err_t:.1e}")


def test_shipped_verify_exits_zero(verify_out):
    _, status = verify_out
    assert status == 0
