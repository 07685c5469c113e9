import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from reliafit.distfit import DistKind, DistParams, dist_cdf
from reliafit.ingest import build_series
from reliafit.simgen import (
    SimSpec,
    SpecError,
    SplitMix64,
    expand_to_events,
    expand_to_timeline,
    sample_grouped_counts,
    sample_power_law_times,
    sample_two_burst,
    simulate,
    two_burst_expectation,
)

W = DistKind.weibull
G = DistKind.gamma
BURST_A = (W, DistParams(3.5, 4.0))
BURST_B = (W, DistParams(9.5, 8.0))


def reference_splitmix(seed, n):
    # straight transcription of the published C routine
    out, x = [], seed
    for _ in range(n):
        x = (x + 0x9E3779B97F4A7C15) % 2**64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
        out.append(z ^ (z >> 31))
    return out


# -- generator ---------------------------------------------------------------


def test_splitmix_test_vectors():
    rng = SplitMix64(0)
    assert [rng.next_u64() for _ in range(3)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F,
    ]


@given(st.integers(0, 2**64 - 1))
def test_splitmix_matches_reference(seed):
    rng = SplitMix64(seed)
    assert [rng.next_u64() for _ in range(5)] == reference_splitmix(seed, 5)


@given(st.integers(0, 2**64 - 1))
def test_uniform_range(seed):
    rng = SplitMix64(seed)
    for _ in range(20):
        assert 0.0 <= rng.uniform() < 1.0


def test_split_streams_differ():
    rng = SplitMix64(7)
    child = rng.split()
    assert [child.next_u64() for _ in range(3)] != [rng.next_u64() for _ in range(3)]


@pytest.mark.parametrize("mu", [0.3, 4.0, 29.5, 30.0, 75.0, 400.0])
def test_poisson_moments(mu):
    rng = SplitMix64(int(mu * 1000))
    draws = np.array([rng.poisson(mu) for _ in range(20000)])
    se = math.sqrt(mu / len(draws))
    assert abs(draws.mean() - mu) < 4 * se
    assert draws.var() == pytest.approx(mu, rel=0.06)


@pytest.mark.parametrize("mu", [3.0, 50.0])
def test_poisson_distribution(mu):
    rng = SplitMix64(99)
    draws = np.array([rng.poisson(mu) for _ in range(20000)])
    lo, hi = int(stats.poisson.ppf(0.001, mu)), int(stats.poisson.ppf(0.999, mu))
    ks = np.arange(lo, hi + 1)
    observed = np.array([(draws == k).sum() for k in ks])
    expected = stats.poisson.pmf(ks, mu) * len(draws)
    observed = np.append(observed, len(draws) - observed.sum())
    expected = np.append(expected, len(draws) - expected.sum())
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_poisson_bad_mean():
    with pytest.raises(ValueError):
        SplitMix64(1).poisson(-1.0)
    assert SplitMix64(1).poisson(0.0) == 0


# -- power-law times ---------------------------------------------------------


def test_power_law_deterministic():
    a = sample_power_law_times(0.5, 0.8, 200, 42)
    b = sample_power_law_times(0.5, 0.8, 200, 42)
    np.testing.assert_array_equal(a.elapsed_times, b.elapsed_times)
    assert a.observation_end == 200


def test_power_law_homogeneous_count():
    counts = [len(sample_power_law_times(5.0, 1.0, 100, seed)) for seed in range(1000)]
    assert 485 <= np.mean(counts) <= 515


@pytest.mark.parametrize("lam, beta, T", [(0, 1, 10), (1, 0, 10), (1, 1, -1), (float("nan"), 1, 1)])
def test_power_law_domain(lam, beta, T):
    with pytest.raises(ValueError):
        sample_power_law_times(lam, beta, T, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63), st.floats(0.3, 3.0))
def test_power_law_inversion(seed, beta):
    lam = 1.0
    T = 200.0 ** (1 / beta)
    tl = sample_power_law_times(lam, beta, T, seed)
    transformed = lam * tl.elapsed_times**beta
    gaps = np.diff(np.concatenate([[0.0], transformed]))
    assert stats.kstest(gaps, "expon").pvalue > 0.01 / 20
    assert np.all(tl.elapsed_times <= T)


# -- grouped counts ----------------------------------------------------------


def test_noiseless_cumulative():
    s = sample_grouped_counts(W, DistParams(6.17, 2.82), 54, 11, "none")
    assert s.cumulative[-1] == pytest.approx(54 * dist_cdf(W, 11, DistParams(6.17, 2.82)), abs=1e-12)
    assert s.cumulative[-1] == pytest.approx(53.6729, abs=1e-4)


@pytest.mark.parametrize("kind, params", [(W, DistParams(6.17, 2.82)), (G, DistParams(6.14, 0.97)),
                                          (DistKind.rayleigh, DistParams(4, 2)),
                                          (DistKind.sshaped, DistParams(2, 3))])
def test_noiseless_telescopes(kind, params):
    s = sample_grouped_counts(kind, params, 80, 12, "none")
    expected = [80 * dist_cdf(kind, i, params) for i in range(1, 13)]
    np.testing.assert_allclose(s.cumulative, expected, rtol=1e-12, atol=1e-12)


def test_poisson_counts_deterministic_and_integer():
    a = sample_grouped_counts(W, DistParams(6.17, 2.82), 54, 11, "poisson", 5)
    b = sample_grouped_counts(W, DistParams(6.17, 2.82), 54, 11, "poisson", 5)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert np.all(a.counts == np.round(a.counts))


@pytest.mark.parametrize("kind, params", [(W, DistParams(6.17, 2.82)), (G, DistParams(6.14, 0.97))])
def test_poisson_total_mean(kind, params):
    target = 54 * dist_cdf(kind, 11, params)
    totals = [sample_grouped_counts(kind, params, 54, 11, "poisson", s).total for s in range(500)]
    assert np.mean(totals) == pytest.approx(target, rel=0.03)
    # three-sigma band of the Monte Carlo mean
    assert abs(np.mean(totals) - target) <= 3 * math.sqrt(target / 500)


def test_grouped_errors():
    with pytest.raises(ValueError):
        sample_grouped_counts(W, DistParams(1, 1), 10, 3)
    with pytest.raises(ValueError):
        sample_grouped_counts(W, DistParams(1, 1), 0, 5)
    with pytest.raises(ValueError):
        sample_grouped_counts(DistKind.rayleigh, DistParams(1, 3), 10, 5)
    with pytest.raises(ValueError):
        sample_grouped_counts(W, DistParams(1, 1), 10, 5, "gaussian")


# -- two bursts --------------------------------------------------------------


def local_maxima(x):
    return [i for i in range(1, len(x) - 1) if x[i] > x[i - 1] and x[i] > x[i + 1]]


def test_two_burst_bimodal():
    mu = two_burst_expectation(BURST_A, BURST_B, 0.5, 100, 12)
    assert len(local_maxima(mu)) == 2
    assert mu.sum() == pytest.approx(100 * (0.5 * dist_cdf(W, 12, BURST_A[1])
                                            + 0.5 * dist_cdf(W, 12, BURST_B[1])))


def test_two_burst_deterministic():
    a = sample_two_burst(BURST_A, BURST_B, 0.5, 100, 12, 9)
    b = sample_two_burst(BURST_A, BURST_B, 0.5, 100, 12, 9)
    np.testing.assert_array_equal(a.counts, b.counts)


@pytest.mark.parametrize("weight", [0.0, 1.0, 1.5, -0.2])
def test_two_burst_weight(weight):
    with pytest.raises(ValueError, match="weight"):
        sample_two_burst(BURST_A, BURST_B, weight, 100, 12, 0)


# -- expansion ---------------------------------------------------------------


def test_expand_to_timeline_spacing():
    s = sample_grouped_counts(W, DistParams(3, 2), 20, 5, "poisson", 1)
    tl = expand_to_timeline(s)
    assert len(tl) == s.total
    assert tl.observation_end == 5
    assert np.all(np.diff(tl.elapsed_times) > 0)
    first_period = tl.elapsed_times[tl.elapsed_times < 1]
    k = int(s.counts[0])
    np.testing.assert_allclose(first_period, [j / (k + 1) for j in range(1, k + 1)])


@pytest.mark.parametrize("granularity", ["day", "week", "month"])
def test_expand_to_events_regroups(granularity):
    s = sample_grouped_counts(W, DistParams(4, 2), 40, 6, "poisson", 2, granularity=granularity)
    events = expand_to_events(s)
    back = build_series(events, s.app_id, s.version, granularity)
    np.testing.assert_array_equal(back.counts[: len(s.counts)], s.counts[: len(back.counts)])
    assert back.total == s.total


def test_expand_to_events_needs_integers():
    s = sample_grouped_counts(W, DistParams(4, 2), 40, 6, "none")
    with pytest.raises(ValueError):
        expand_to_events(s)


# -- specs -------------------------------------------------------------------


GROUPED = {"kind": "grouped_dist", "seed": 3, "horizon": 11, "noise": "poisson",
           "params": {"dist": "weibull", "a": 6.17, "b": 2.82, "c_total": 54}}
BURST = {"kind": "two_burst", "seed": 3, "horizon": 12,
         "params": {"first": {"dist": "weibull", "a": 3.5, "b": 4},
                    "second": {"dist": "weibull", "a": 9.5, "b": 8},
                    "weight": 0.5, "c_total": 100}}


def test_spec_simulate_matches_direct_call():
    s = simulate(SimSpec.from_dict(GROUPED))
    direct = sample_grouped_counts(W, DistParams(6.17, 2.82), 54, 11, "poisson", 3)
    np.testing.assert_array_equal(s.counts, direct.counts)
    tl = simulate(SimSpec.from_dict({"kind": "power_law_process", "seed": 4, "horizon": 50,
                                     "params": {"lambda": 1, "beta": 0.8}}))
    np.testing.assert_array_equal(tl.elapsed_times, sample_power_law_times(1, 0.8, 50, 4).elapsed_times)


def test_spec_with_seed():
    spec = SimSpec.from_dict(BURST)
    a, b = simulate(spec.with_seed(1)), simulate(spec.with_seed(2))
    assert not np.array_equal(a.counts, b.counts)


@pytest.mark.parametrize("patch, field", [
    ({"kind": "bogus"}, "kind"),
    ({"seed": -1}, "seed"),
    ({"seed": 2**64}, "seed"),
    ({"noise": "gauss"}, "noise"),
    ({"horizon": 2}, "horizon"),
    ({"horizon": 0}, "horizon"),
    ({"granularity": "hour"}, "granularity"),
    ({"params": {"dist": "weibull", "a": -1, "b": 2, "c_total": 5}}, "params.a"),
    ({"params": {"dist": "cauchy", "a": 1, "b": 2, "c_total": 5}}, "params.dist"),
    ({"params": {"dist": "rayleigh", "a": 1, "b": 3, "c_total": 5}}, "params.b"),
])
def test_spec_errors_name_field(patch, field):
    with pytest.raises(SpecError) as info:
        SimSpec.from_dict({**GROUPED, **patch})
    assert info.value.field == field


def test_spec_weight_error():
    bad = {**BURST, "params": {**BURST["params"], "weight": 1.5}}
    with pytest.raises(SpecError) as info:
        SimSpec.from_dict(bad)
    assert info.value.field == "weight"
    with pytest.raises(SpecError):
        SimSpec.from_dict({**BURST, "noise": "none"})
