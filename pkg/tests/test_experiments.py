import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from opinion_kinetics.dynamics import ModelParams, SimConfig, simulate
from opinion_kinetics.errors import MeasureError, NumericalError
from opinion_kinetics.experiments import (
    RateFit,
    StudyReport,
    above_floor,
    canonical_order,
    dissipation_residual,
    energy_descent_study,
    fit_exponential_rate,
    marginal_stability_study,
    mean_field_study,
    mono_opinion_study,
    read_series_csv,
    shift_marginal,
    stratified_subsample,
    uniqueness_study,
    worker_count,
)
from opinion_kinetics.measure import ConvictionMarginal, EmpiricalMeasure, conviction_marginal
from opinion_kinetics.steady import solve_profile

UNIT = ModelParams(1.0, 1.0)


def grid_measure(thetas, per_group, lo=0.5, hi=2.5):
    ys = np.concatenate([lo + (hi - lo) * (np.arange(per_group) + 0.5) / per_group for _ in thetas])
    return EmpiricalMeasure.uniform(ys, np.repeat(thetas, per_group))


# -- rate fits ------------------------------------------------------------------

def test_fit_recovers_exact_exponential():
    series = [(t, 3.0 * math.exp(-0.7 * t)) for t in np.linspace(0, 10, 41)]
    fit = fit_exponential_rate(series)
    assert_allclose(fit.slope, -0.7, rtol=1e-12)
    assert_allclose(fit.intercept, math.log(3.0), rtol=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.n_points == 21 and fit.window_start == 5.0


def test_fit_edge_cases():
    flat = fit_exponential_rate([(t, 2.0) for t in range(6)])
    assert flat.slope == 0.0 and flat.r_squared == 1.0
    with pytest.raises(NumericalError):
        fit_exponential_rate([(0, 1.0), (1, 0.5), (2, 0.0), (3, 0.0)], tail_fraction=1.0)
    with pytest.raises(ValueError):
        fit_exponential_rate([(0, 1.0), (1, 0.5)])
    with pytest.raises(ValueError):
        fit_exponential_rate([(0, 1.0)] * 5, tail_fraction=0.0)


def test_above_floor_stops_at_first_small_value():
    series = [(0, 1.0), (1, 1e-5), (2, 1e-12), (3, 1e-5)]
    assert above_floor(series) == series[:2]


# -- reports ----------------------------------------------------------------------

def test_report_round_trip():
    report = StudyReport("demo", {"a": 1}, [(0.0, 1.0), (1.0, 0.5)], RateFit(0.0, -0.7, 0.0, 0.99, 2),
                         True, False, "note", {"m": [1, 2]})
    data = json.loads(report.to_json())
    assert data["pass"] is True and data["fit"]["slope"] == -0.7
    back = StudyReport.from_dict(data)
    assert back == report
    text = report.series_csv()
    assert text.splitlines()[0] == "x,value"
    assert read_series_csv(text) == report.series


def test_report_needs_series():
    with pytest.raises(ValueError):
        StudyReport("empty", {}, [])


def test_worker_count(monkeypatch):
    monkeypatch.setenv("OPINION_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("OPINION_THREADS", "zero")
    assert worker_count() >= 1


# -- subsampling ------------------------------------------------------------------

def test_stratified_subsample_keeps_marginal():
    ref = grid_measure([0.3, 0.5], 160)
    for n in (10, 20, 40, 80):
        sub = stratified_subsample(ref, n)
        pi_sub, pi_ref = conviction_marginal(sub), conviction_marginal(ref)
        assert_array_equal(pi_sub.theta, pi_ref.theta)
        assert_allclose(pi_sub.mass, pi_ref.mass, rtol=1e-14)
        assert sub.n_atoms == n
    assert stratified_subsample(ref, 320) == canonical_order(ref)


def test_stratified_subsample_mid_quantiles():
    ref = grid_measure([1.0], 8, lo=0.0 + 1e-9, hi=8.0 + 1e-9)
    sub = stratified_subsample(ref, 2)
    assert_allclose(sub.y, ref.y[[1, 5]])


# -- studies ----------------------------------------------------------------------

def test_mono_opinion_already_concentrated():
    pi = ConvictionMarginal([0.3, 0.5], [0.5, 0.5])
    prof = solve_profile(pi, 1.0)
    mu = EmpiricalMeasure.uniform(np.repeat(prof.g_atoms, 2), np.repeat(pi.theta, 2))
    report = mono_opinion_study(mu, UNIT, SimConfig(1.0, 1e-3, 100))
    assert report.passed and report.fit is None
    assert report.metrics["final_position_error"] < 1e-10


def test_mono_opinion_short_run_fails_final_check():
    rng = np.random.default_rng(7)
    mu = EmpiricalMeasure.uniform(rng.uniform(0.2, 2.0, 6), np.repeat([0.3, 0.5], 3))
    report = mono_opinion_study(mu, UNIT, SimConfig(5.0, 1e-3, 100))
    assert report.fit.slope < 0
    assert not report.passed


def test_uniqueness_identical_starts():
    mu = grid_measure([2.5, 3.0], 3)
    report = uniqueness_study(mu, mu, UNIT, SimConfig(1.0, 1e-3, 100))
    assert report.passed and report.metrics["final_distance"] == 0.0


def test_uniqueness_requires_shared_marginal():
    with pytest.raises(MeasureError):
        uniqueness_study(grid_measure([2.5], 2), grid_measure([3.0], 2), UNIT, SimConfig(1.0, 1e-2, 10))


def test_uniqueness_advisory_when_condition_fails():
    a = grid_measure([0.3, 1.5], 3)
    b = grid_measure([0.3, 1.5], 3, lo=0.8, hi=1.9)
    report = uniqueness_study(a, b, ModelParams(1.0, 2.0), SimConfig(20.0, 1e-3, 100))
    assert report.advisory
    assert "uniqueness condition fails" in report.notes


def test_mean_field_distances_halve():
    ref = grid_measure([0.3, 0.5], 160)
    report = mean_field_study(ref, [10, 20, 40, 80], UNIT, SimConfig(2.0, 1e-3, 100))
    d0 = report.metrics["distance_t0"]
    for coarse, fine in zip(d0, d0[1:]):
        assert fine <= 0.5 * coarse * (1 + 1e-12)
    assert report.passed and report.metrics["ratio_spread"] < 10


def test_mean_field_requires_increasing_sizes():
    with pytest.raises(ValueError):
        mean_field_study(grid_measure([0.3], 4), [20, 10], UNIT, SimConfig(1.0, 1e-2, 10))


def test_stability_zero_perturbation():
    pi = ConvictionMarginal([1.0, 2.0], [0.5, 0.5])
    report = marginal_stability_study(pi, 0.0, 2.0)
    assert report.passed and report.notes == "zero perturbation"


def test_shift_marginal():
    pi = ConvictionMarginal([1.0, 2.0], [0.25, 0.75])
    assert shift_marginal(pi, 0.5).atoms == [(1.5, 0.25), (2.5, 0.75)]


def test_energy_descent_at_rest():
    mu = EmpiricalMeasure.from_atoms([(2.0 ** 0.5, 2.0, 1.0)])
    report = energy_descent_study(mu, ModelParams(1.0, 2.0), SimConfig(1.0, 1e-2, 10))
    assert report.passed and report.metrics["refinement_ratio"] is None


def test_dissipation_residual_shrinks_with_dt():
    rng = np.random.default_rng(15)
    mu = EmpiricalMeasure.uniform(rng.uniform(0.3, 2.0, 6), np.repeat([0.5, 1.5], 3))
    coarse = simulate(mu, UNIT, SimConfig(2.0, 2e-3, 5))
    fine = simulate(mu, UNIT, SimConfig(2.0, 1e-3, 5))
    assert dissipation_residual(coarse) / dissipation_residual(fine) >= 1.9


def test_canonical_order_sorted():
    mu = EmpiricalMeasure.uniform([3.0, 1.0, 2.0, 0.5], [2.0, 2.0, 1.0, 1.0])
    can = canonical_order(mu)
    assert_array_equal(can.theta, [1.0, 1.0, 2.0, 2.0])
    assert_array_equal(can.y, [0.5, 2.0, 1.0, 3.0])
