"""Seeded synthetic failure data.

All generators draw from :class:`SplitMix64`, so a given seed yields the same
stream on every platform. Reference outputs for seed 0 (first three draws)::

    0xE220A8397B1DCDAF  0x6E789E6AA1B965F4  0x06C45D188009454F

Uniforms take the top 53 bits: ``u = (x >> 11) * 2**-53``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any

import numpy as np

from .distfit import DistKind, DistParams, _cdf_vec, dist_cdf
from .ingest import EventTimeline, FailureEvent, FailureSeries, period_bounds

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
DEFAULT_ORIGIN = datetime(2012, 1, 2, tzinfo=timezone.utc)  # a Monday


class SplitMix64:
    """Steele, Lea & Flood's SplitMix64 generator."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform on [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def exponential(self) -> float:
        return -math.log1p(-self.uniform())

    def split(self) -> "SplitMix64":
        return SplitMix64(self.next_u64())

    def poisson(self, mu: float) -> int:
        if mu < 0 or not math.isfinite(mu):
            raise ValueError(f"Poisson mean must be finite and nonnegative, got {mu}")
        if mu == 0:
            return 0
        if mu < 30:
            return self._poisson_inversion(mu)
        return self._poisson_ptrs(mu)

    def _poisson_inversion(self, mu: float) -> int:
        u = self.uniform()
        k = 0
        p = math.exp(-mu)
        cdf = p
        while u > cdf:
            k += 1
            p *= mu / k
            cdf += p
            if p == 0.0 and cdf < u:  # round-off tail
                break
        return k

    def _poisson_ptrs(self, mu: float) -> int:
        # Hormann (1993) transformed rejection with squeeze.
        slam = math.sqrt(mu)
        loglam = math.log(mu)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2)
        while True:
            u = self.uniform() - 0.5
            v = self.uniform()
            us = 0.5 - abs(u)
            k = math.floor((2 * a / us + b) * u + mu + 0.43)
            if us >= 0.07 and v <= vr:
                return k
            if k < 0 or (us < 0.013 and v > us):
                continue
            if (math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + b)
                    <= -mu + k * loglam - math.lgamma(k + 1)):
                return k


def _positive(name: str, value: float) -> float:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def sample_power_law_times(lam: float, beta: float, T: float, seed: int) -> EventTimeline:
    """Power-law NHPP event times on (0, T] by inversion of ``lam * t**beta``."""
    lam, beta, T = _positive("lambda", lam), _positive("beta", beta), _positive("T", T)
    rng = SplitMix64(seed)
    times = []
    s = 0.0
    while True:
        s += rng.exponential()
        t = (s / lam) ** (1.0 / beta)
        if t > T:
            break
        if times and t <= times[-1]:  # float collision, vanishingly rare
            t = math.nextafter(times[-1], math.inf)
        times.append(t)
    return EventTimeline(np.array(times), T)


def _expected_increments(kind: DistKind, params: DistParams, periods: int) -> np.ndarray:
    edges = _cdf_vec(kind.family, np.arange(periods + 1, dtype=float), params.a, params.b)
    return np.diff(edges)


def _grouped_series(counts, app_id: str, version: str, granularity: str,
                    origin: datetime) -> FailureSeries:
    idx = np.arange(1, len(counts) + 1)
    return FailureSeries(app_id, version, granularity, origin, idx, counts)


def sample_grouped_counts(kind: DistKind | str, params: DistParams, c_total: float, periods: int,
                          noise: str = "none", seed: int = 0, *, app_id: str = "sim",
                          version: str = "1.0", granularity: str = "day",
                          origin: datetime = DEFAULT_ORIGIN) -> FailureSeries:
    """Per-period failure counts with mean ``c_total * (F(i) - F(i-1))``.

    ``noise="none"`` returns the real-valued expectations themselves, so the
    cumulative series equals ``c_total * F(i)``.
    """
    kind = DistKind(kind)
    dist_cdf(kind, 1.0, params)  # validates the constraint for rayleigh/sshaped
    c_total = _positive("c_total", c_total)
    if periods < 4:
        raise ValueError(f"periods must be at least 4, got {periods}")
    mu = c_total * _expected_increments(kind, params, periods)
    if noise == "none":
        counts = mu
    elif noise == "poisson":
        rng = SplitMix64(seed)
        counts = np.array([rng.poisson(m) for m in mu], dtype=float)
    else:
        raise ValueError(f"unknown noise model {noise!r}")
    return _grouped_series(counts, app_id, version, granularity, origin)


def two_burst_expectation(spec_a, spec_b, weight: float, c_total: float, periods: int) -> np.ndarray:
    if not (0 < weight < 1):
        raise ValueError(f"weight must lie in (0, 1), got {weight}")
    (kind_a, params_a), (kind_b, params_b) = spec_a, spec_b
    inc_a = _expected_increments(DistKind(kind_a), params_a, periods)
    inc_b = _expected_increments(DistKind(kind_b), params_b, periods)
    return c_total * (weight * inc_a + (1 - weight) * inc_b)


def sample_two_burst(spec_a, spec_b, weight: float, c_total: float, periods: int, seed: int,
                     *, app_id: str = "sim", version: str = "1.0", granularity: str = "day",
                     origin: datetime = DEFAULT_ORIGIN) -> FailureSeries:
    """Poisson counts from a two-component mixture of grouped distributions.

    ``spec_a`` and ``spec_b`` are ``(DistKind, DistParams)`` pairs.
    """
    c_total = _positive("c_total", c_total)
    if periods < 4:
        raise ValueError(f"periods must be at least 4, got {periods}")
    mu = two_burst_expectation(spec_a, spec_b, weight, c_total, periods)
    rng = SplitMix64(seed)
    counts = np.array([rng.poisson(m) for m in mu], dtype=float)
    return _grouped_series(counts, app_id, version, granularity, origin)


def expand_to_timeline(series: FailureSeries, observation_end: float | None = None) -> EventTimeline:
    """Spread the k events of period i evenly over ``(i-1, i)``, in period units.

    The timeline ends at the last period boundary unless told otherwise.
    """
    times = []
    for i, k in zip(series.period_index, series.counts):
        k = int(round(k))
        times.extend((i - 1) + j / (k + 1) for j in range(1, k + 1))
    end = float(series.period_index[-1]) if observation_end is None else observation_end
    return EventTimeline(np.array(times), end)


def expand_to_events(series: FailureSeries) -> list[FailureEvent]:
    """Turn an integer-count series into timestamped events (evenly spaced per period)."""
    events = []
    for i, k in zip(series.period_index, series.counts):
        if k != int(k):
            raise ValueError("only integer counts can be expanded into events")
        start, stop = period_bounds(series.origin, series.granularity, int(i))
        span = (stop - start).total_seconds()
        for j in range(1, int(k) + 1):
            offset = round(span * j / (int(k) + 1))
            events.append(FailureEvent(series.app_id, series.version, start + timedelta(seconds=offset)))
    return events


def timeline_to_events(timeline: EventTimeline, app_id: str, version: str,
                       origin: datetime = DEFAULT_ORIGIN) -> list[FailureEvent]:
    """Timestamp a timeline given in hours, rounding to whole seconds."""
    return [
        FailureEvent(app_id, version, origin + timedelta(seconds=round(h * 3600.0)))
        for h in timeline.elapsed_times
    ]


# -- simulation specs ---------------------------------------------------------

SIM_KINDS = ("power_law_process", "grouped_dist", "two_burst")


class SpecError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def _num(d: dict, key: str, path: str, positive: bool = True) -> float:
    if key not in d:
        raise SpecError(f"{path}{key}", "missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SpecError(f"{path}{key}", f"expected a number, got {v!r}")
    if positive and v <= 0:
        raise SpecError(f"{path}{key}", f"must be positive, got {v!r}")
    return float(v)


def _dist(d: Any, path: str) -> tuple[DistKind, DistParams]:
    if not isinstance(d, dict):
        raise SpecError(path.rstrip("."), "expected an object with dist, a, b")
    try:
        kind = DistKind(d.get("dist"))
    except ValueError:
        raise SpecError(f"{path}dist", f"unknown distribution {d.get('dist')!r}") from None
    a = _num(d, "a", path)
    b = _num(d, "b", path)
    if kind is DistKind.rayleigh and b != 2:
        raise SpecError(f"{path}b", "rayleigh requires b = 2")
    if kind is DistKind.sshaped and a != 2:
        raise SpecError(f"{path}a", "sshaped requires a = 2")
    return kind, DistParams(a, b)


@dataclass(frozen=True)
class SimSpec:
    """A validated simulation request.

    ``horizon`` is the end time in hours for ``power_law_process`` and the
    number of periods otherwise.
    """

    kind: str
    params: dict = field(hash=False)
    horizon: float
    seed: int
    noise: str = "poisson"
    app_id: str = "sim"
    version: str = "1.0"
    granularity: str = "day"
    origin: datetime = DEFAULT_ORIGIN

    @classmethod
    def from_dict(cls, d: Any) -> "SimSpec":
        from .ingest import GRANULARITIES, parse_timestamp

        if not isinstance(d, dict):
            raise SpecError("<root>", "expected a JSON object")
        kind = d.get("kind")
        if kind not in SIM_KINDS:
            raise SpecError("kind", f"expected one of {', '.join(SIM_KINDS)}, got {kind!r}")
        seed = d.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise SpecError("seed", f"expected an unsigned 64-bit integer, got {seed!r}")
        noise = d.get("noise", "poisson")
        if noise not in ("none", "poisson"):
            raise SpecError("noise", f"expected 'none' or 'poisson', got {noise!r}")
        horizon = _num(d, "horizon", "")
        params = d.get("params")
        if not isinstance(params, dict):
            raise SpecError("params", "expected an object")
        granularity = d.get("granularity", "day")
        if granularity not in GRANULARITIES:
            raise SpecError("granularity", f"unknown granularity {granularity!r}")
        for key in ("app_id", "version"):
            if key in d and (not isinstance(d[key], str) or not d[key]):
                raise SpecError(key, "expected a non-empty string")
        origin = DEFAULT_ORIGIN
        if "origin" in d:
            try:
                origin = parse_timestamp(str(d["origin"]))
            except ValueError as exc:
                raise SpecError("origin", str(exc)) from None

        clean: dict[str, Any] = {}
        if kind == "power_law_process":
            clean["lambda"] = _num(params, "lambda", "params.")
            clean["beta"] = _num(params, "beta", "params.")
        elif kind == "grouped_dist":
            clean["dist"] = _dist(params, "params.")
            clean["c_total"] = _num(params, "c_total", "params.")
        else:
            if noise != "poisson":
                raise SpecError("noise", "two_burst data is always Poisson-sampled")
            clean["first"] = _dist(params.get("first"), "params.first.")
            clean["second"] = _dist(params.get("second"), "params.second.")
            w = _num(params, "weight", "params.", positive=False)
            if not 0 < w < 1:
                raise SpecError("weight", f"must lie in (0, 1), got {w!r}")
            clean["weight"] = w
            clean["c_total"] = _num(params, "c_total", "params.")
        if kind != "power_law_process":
            if horizon != int(horizon) or horizon < 4:
                raise SpecError("horizon", "period count must be an integer of at least 4")
        return cls(kind, clean, horizon, seed, noise, d.get("app_id", "sim"),
                   d.get("version", "1.0"), granularity, origin)

    def with_seed(self, seed: int) -> "SimSpec":
        return SimSpec(self.kind, self.params, self.horizon, seed, self.noise, self.app_id,
                       self.version, self.granularity, self.origin)


def simulate(spec: SimSpec) -> EventTimeline | FailureSeries:
    """Run one spec; power-law specs yield a timeline, the others a series."""
    p = spec.params
    meta = dict(app_id=spec.app_id, version=spec.version, granularity=spec.granularity,
                origin=spec.origin)
    if spec.kind == "power_law_process":
        return sample_power_law_times(p["lambda"], p["beta"], spec.horizon, spec.seed)
    if spec.kind == "grouped_dist":
        kind, params = p["dist"]
        return sample_grouped_counts(kind, params, p["c_total"], int(spec.horizon), spec.noise,
                                     spec.seed, **meta)
    return sample_two_burst(p["first"], p["second"], p["weight"], p["c_total"], int(spec.horizon),
                            spec.seed, **meta)
