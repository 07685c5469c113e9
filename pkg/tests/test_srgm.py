import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reliafit.distfit import DistKind, DistParams
from reliafit.ingest import EventTimeline, FailureSeries
from reliafit.simgen import expand_to_timeline, sample_power_law_times, sample_two_burst
from reliafit.srgm import (
    InsufficientDataError,
    SrgmFit,
    SrgmFitError,
    SrgmKind,
    critical_table,
    critical_value,
    cvm_gof,
    cvm_statistic,
    fit_curve_srgm,
    fit_power_law_mle,
    gof_sample,
    srgm_mean_value,
)

ORIGIN = datetime(2012, 1, 2, tzinfo=timezone.utc)
W = DistKind.weibull
BURST_A = (W, DistParams(3.5, 4.0))
BURST_B = (W, DistParams(9.5, 8.0))


def tl(times, end):
    return EventTimeline(np.array(times, dtype=float), end)


def series_of(cumulative):
    counts = np.diff(np.concatenate([[0.0], cumulative]))
    return FailureSeries("sim", "1", "day", ORIGIN, np.arange(1, len(counts) + 1), counts)


# -- power-law MLE -----------------------------------------------------------


def test_mle_time_truncated_examples():
    fit = fit_power_law_mle(tl([2, 4, 8], 8), "time")
    assert fit.params["beta"] == pytest.approx(3 / (math.log(4) + math.log(2)), abs=1e-12)
    assert fit.params["beta"] == pytest.approx(1.442695, abs=1e-6)
    assert fit.params["lambda"] == pytest.approx(0.149361, abs=1e-6)

    fit = fit_power_law_mle(tl([1, 2, 4], 8), "time")
    assert fit.params["beta"] == pytest.approx(0.721348, abs=1e-6)
    # beta * ln 8 = 3 ln 8 / ln 64 = 1.5 exactly
    assert fit.params["lambda"] == pytest.approx(3 * math.exp(-1.5), abs=1e-12)
    assert fit.params["lambda"] == pytest.approx(0.669390, abs=1e-6)
    assert srgm_mean_value(fit, 8) == pytest.approx(3.0, abs=1e-12)


def test_mle_failure_truncated():
    fit = fit_power_law_mle(tl([1, 2, 4], 8), "failure")
    assert fit.observation_end == 4
    assert fit.params["beta"] == pytest.approx(3 / (math.log(4) + math.log(2)), abs=1e-12)
    assert srgm_mean_value(fit, 4) == pytest.approx(3.0, abs=1e-12)


def test_mle_errors():
    with pytest.raises(InsufficientDataError):
        fit_power_law_mle(tl([3.0], 5))
    with pytest.raises(ValueError):
        fit_power_law_mle(tl([1, 2], 5), "interval")


@settings(max_examples=60)
@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=30, unique=True),
       st.floats(1.0, 2.0), st.floats(0.01, 100), st.sampled_from(["time", "failure"]))
def test_mle_scale_invariance(times, stretch, k, truncation):
    times = sorted(times)
    end = times[-1] * stretch
    if truncation == "failure" and times[-2] >= times[-1] * (1 - 1e-12):
        return
    a = fit_power_law_mle(tl(times, end), truncation)
    b = fit_power_law_mle(tl(np.array(times) * k, end * k), truncation)
    beta = a.params["beta"]
    assert b.params["beta"] == pytest.approx(beta, rel=1e-9)
    assert b.params["lambda"] == pytest.approx(a.params["lambda"] * k ** (-beta), rel=1e-8)
    assert srgm_mean_value(a, a.observation_end) == pytest.approx(len(times), rel=1e-10)


def test_mle_recovers_simulated_process():
    betas = [fit_power_law_mle(sample_power_law_times(2.0, 0.7, 500, seed)).params["beta"]
             for seed in range(200)]
    # the time-truncated estimator is biased by n/(n-2); n is about 155 here
    assert np.mean(betas) == pytest.approx(0.7, rel=0.02)


# -- mean value functions ----------------------------------------------------


def test_mean_values():
    mo = SrgmFit(SrgmKind.musa_okumoto, {"lambda0": 1.0, "theta": 1.0}, "nls", 1, 1)
    assert srgm_mean_value(mo, math.e - 1) == pytest.approx(1.0, abs=1e-12)
    mb = SrgmFit(SrgmKind.musa_basic, {"lambda0": 3.0, "nu0": 7.0}, "nls", 1, 1)
    assert srgm_mean_value(mb, 0.0) == 0.0
    pl = SrgmFit(SrgmKind.power_law, {"lambda": 0.669390, "beta": 0.721348}, "mle", 3, 8)
    assert srgm_mean_value(pl, 8) == pytest.approx(3.0, abs=1e-5)
    with pytest.raises(ValueError):
        srgm_mean_value(mb, -1.0)


def test_fit_params_positive():
    with pytest.raises(ValueError):
        SrgmFit(SrgmKind.musa_basic, {"lambda0": 0.0, "nu0": 7.0}, "nls", 1, 1)


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_musa_shapes(lam0, other):
    grid = np.linspace(0, 50, 40)
    mb = SrgmFit(SrgmKind.musa_basic, {"lambda0": lam0, "nu0": other}, "nls", 1, 1)
    assert all(srgm_mean_value(mb, t) <= other * (1 + 1e-12) for t in grid)
    mo = SrgmFit(SrgmKind.musa_okumoto, {"lambda0": lam0, "theta": other}, "nls", 1, 1)
    values = np.array([srgm_mean_value(mo, t) for t in grid])
    assert values[0] == 0.0
    assert np.all(np.diff(values, 2) <= 1e-9 * max(1.0, values[-1]))


# -- Musa least-squares fits -------------------------------------------------


def test_musa_basic_recovery():
    t = np.arange(1, 13, dtype=float)
    y = 54 * (1 - np.exp(-10 * t / 54))
    fit = fit_curve_srgm(series_of(y), "musa_basic")
    assert fit.converged
    assert fit.params["lambda0"] == pytest.approx(10, rel=1e-5)
    assert fit.params["nu0"] == pytest.approx(54, rel=1e-5)


def test_musa_okumoto_recovery():
    t = np.arange(1, 13, dtype=float)
    y = np.log1p(8 * 0.05 * t) / 0.05
    fit = fit_curve_srgm(series_of(y), SrgmKind.musa_okumoto)
    assert fit.converged
    assert fit.params["lambda0"] == pytest.approx(8, rel=1e-5)
    assert fit.params["theta"] == pytest.approx(0.05, rel=1e-5)
    assert srgm_mean_value(fit, 0.0) == 0.0


def test_musa_basic_on_linear_growth_flagged():
    fit = fit_curve_srgm(series_of(5.0 * np.arange(1, 13)), "musa_basic")
    assert not fit.converged
    assert "nu0" in fit.message


def test_musa_errors():
    with pytest.raises(InsufficientDataError):
        fit_curve_srgm(series_of([1.0, 2.0]), "musa_basic")
    with pytest.raises(SrgmFitError):
        fit_curve_srgm(series_of([0.0, 0.0, 0.0, 0.0]), "musa_basic")
    with pytest.raises(ValueError):
        fit_curve_srgm(series_of([1.0, 2.0, 3.0]), "power_law")


# -- Cramer-von Mises --------------------------------------------------------


def test_cvm_statistic_hand_value():
    expected = 1 / 36 + (0.25 - 1 / 6) ** 2 + (0.75 - 5 / 6) ** 2
    assert cvm_statistic([0.25, 0.5, 0.75], 1.0) == pytest.approx(expected, abs=1e-15)
    assert cvm_statistic([0.75, 0.25, 0.5], 1.0) == pytest.approx(0.041667, abs=1e-6)


def test_gof_sample_unbiased_shape():
    timeline = tl([1, 2, 4, 7], 8)
    z, beta_bar = gof_sample(timeline, "time")
    np.testing.assert_allclose(z, [1 / 8, 2 / 8, 4 / 8, 7 / 8])
    beta_hat = fit_power_law_mle(timeline, "time").params["beta"]
    assert beta_bar == pytest.approx(3 / 4 * beta_hat, rel=1e-12)
    z, beta_bar = gof_sample(timeline, "failure")
    assert len(z) == 3
    assert beta_bar == pytest.approx(2 / -np.sum(np.log(z)), rel=1e-12)


def test_gof_needs_three():
    with pytest.raises(InsufficientDataError):
        gof_sample(tl([1, 2, 4], 4), "failure")


@given(st.lists(st.floats(0.01, 100), min_size=4, max_size=25, unique=True), st.floats(0.01, 100))
def test_cvm_scale_invariant(times, k):
    times = sorted(times)
    end = times[-1] * 1.1
    z1, b1 = gof_sample(tl(times, end), "time")
    z2, b2 = gof_sample(tl(np.array(times) * k, end * k), "time")
    assert cvm_statistic(z2, b2) == pytest.approx(cvm_statistic(z1, b1), rel=1e-8, abs=1e-12)


def test_critical_table_shape():
    table = critical_table()
    assert sorted(table) == [0.01, 0.05, 0.10, 0.20]
    for level, row in table.items():
        assert sorted(row) == list(range(3, 21)) + [30, 60, 100]
    # a smaller significance needs a larger statistic to reject
    for m in (3, 10, 100):
        values = [table[s][m] for s in (0.20, 0.10, 0.05, 0.01)]
        assert values == sorted(values)


def test_critical_value_interpolation():
    table = critical_table()[0.05]
    assert critical_value(30) == table[30]
    w = (1 / 30 - 1 / 45) / (1 / 30 - 1 / 60)
    assert critical_value(45) == pytest.approx(table[30] + w * (table[60] - table[30]), abs=1e-15)
    assert critical_value(500) == table[100]
    assert min(table[30], table[60]) <= critical_value(45) <= max(table[30], table[60])


def test_critical_value_errors():
    with pytest.raises(ValueError, match="0.01, 0.05, 0.1, 0.2"):
        critical_value(10, 0.025)
    with pytest.raises(InsufficientDataError):
        critical_value(2)


def test_gof_rejects_non_power_law_fit():
    mb = SrgmFit(SrgmKind.musa_basic, {"lambda0": 3.0, "nu0": 7.0}, "nls", 1, 1)
    with pytest.raises(ValueError):
        cvm_gof(tl([1, 2, 3, 4], 5), mb)


def test_gof_verdict_consistent():
    timeline = sample_power_law_times(1.0, 0.8, 60, 11)
    verdict = cvm_gof(timeline, fit_power_law_mle(timeline))
    assert verdict.passed == (verdict.statistic <= verdict.critical_value)
    assert verdict.m == len(timeline)


@pytest.mark.slow
def test_gof_pass_rate_on_power_law_data():
    lam, beta, T = 30 / 100**0.7, 0.7, 100.0
    passed = 0
    for seed in range(400):
        timeline = sample_power_law_times(lam, beta, T, seed)
        passed += cvm_gof(timeline, fit_power_law_mle(timeline)).passed
    assert 0.92 <= passed / 400 <= 0.98


@pytest.mark.parametrize("truncation", ["time", "failure"])
def test_gof_rejects_two_burst(truncation):
    rejected = 0
    for seed in range(200):
        series = sample_two_burst(BURST_A, BURST_B, 0.5, 100, 12, seed)
        timeline = expand_to_timeline(series)
        assert len(timeline) >= 30
        rejected += not cvm_gof(timeline, fit_power_law_mle(timeline, truncation)).passed
    assert rejected / 200 >= 0.9
