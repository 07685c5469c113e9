"""Classic software reliability growth models.

Mean value functions (expected cumulative failures by time t):

* power law (Crow-AMSAA NHPP):    ``lam * t**beta``
* Musa basic execution time:      ``nu0 * (1 - exp(-lam0 * t / nu0))``
* Musa-Okumoto logarithmic:       ``log(lam0 * theta * t + 1) / theta``

The power law is estimated by maximum likelihood from event times and checked
with a Cramer-von Mises statistic; the Musa models are least-squares fits to
grouped cumulative counts.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources

import numpy as np

from .ingest import EventTimeline, FailureSeries
from .numerics import DegenerateFitError, NlsProblem, nls_fit

SIGNIFICANCE_LEVELS = (0.01, 0.05, 0.10, 0.20)
UPPER_FACTOR = 1e3


class SrgmKind(str, Enum):
    power_law = "power_law"
    musa_basic = "musa_basic"
    musa_okumoto = "musa_okumoto"


class InsufficientDataError(ValueError):
    pass


class SrgmFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class GofVerdict:
    statistic: float
    m: int
    significance: float
    critical_value: float
    passed: bool


@dataclass(frozen=True)
class SrgmFit:
    kind: SrgmKind
    params: dict[str, float]
    method: str
    n_events: float
    observation_end: float
    truncation: str | None = None
    converged: bool = True
    message: str = ""
    gof: GofVerdict | None = None
    sse: float | None = field(default=None, compare=False)

    def __post_init__(self):
        for name, value in self.params.items():
            if not value > 0:
                raise ValueError(f"parameter {name} must be positive, got {value}")


def fit_power_law_mle(timeline: EventTimeline, truncation: str = "time") -> SrgmFit:
    """Crow-AMSAA maximum likelihood estimates.

    Time truncated at ``T = observation_end``::

        beta = n / sum(log(T / t_i)),  lam = n / T**beta

    Failure truncated uses ``T = t_n`` and drops the zero ``i = n`` term.
    """
    t = timeline.elapsed_times
    n = len(t)
    if n < 2:
        raise InsufficientDataError(f"power-law MLE needs at least 2 events, got {n}")
    if truncation == "time":
        T = timeline.observation_end
        logs = np.log(T / t)
    elif truncation == "failure":
        T = float(t[-1])
        logs = np.log(T / t[:-1])
    else:
        raise ValueError(f"truncation must be 'time' or 'failure', got {truncation!r}")
    total = float(np.sum(logs))
    if not total > 0:
        raise SrgmFitError("degenerate timeline: all events at the truncation time")
    beta = n / total
    lam = n / T**beta
    return SrgmFit(SrgmKind.power_law, {"lambda": lam, "beta": beta}, "mle", n, T, truncation)


def _mean_value(kind: SrgmKind, params: dict[str, float], t):
    t = np.asarray(t, dtype=float)
    if kind is SrgmKind.power_law:
        return params["lambda"] * t ** params["beta"]
    if kind is SrgmKind.musa_basic:
        lam0, nu0 = params["lambda0"], params["nu0"]
        return -nu0 * np.expm1(-lam0 * t / nu0)
    lam0, theta = params["lambda0"], params["theta"]
    return np.log1p(lam0 * theta * t) / theta


def srgm_mean_value(fit: SrgmFit, t: float) -> float:
    if not t >= 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    return float(_mean_value(fit.kind, fit.params, t))


_PARAM_NAMES = {
    SrgmKind.musa_basic: ("lambda0", "nu0"),
    SrgmKind.musa_okumoto: ("lambda0", "theta"),
}


def _musa_model(kind: SrgmKind):
    names = _PARAM_NAMES[kind]

    def model(p, t):
        if np.any(p <= 0):
            return np.full_like(t, np.nan)
        return _mean_value(kind, dict(zip(names, p)), t)

    return model


def fit_curve_srgm(series: FailureSeries, kind: SrgmKind | str) -> SrgmFit:
    """Bounded least-squares fit of a Musa model to cumulative counts.

    A solution resting on a parameter bound is returned with
    ``converged=False``: the model family cannot represent the data (e.g.
    the exponential model on linear growth drives ``nu0`` upward without
    limit).
    """
    kind = SrgmKind(kind)
    if kind is SrgmKind.power_law:
        raise ValueError("the power law is fitted from event times, use fit_power_law_mle")
    if len(series) < 3:
        raise InsufficientDataError(f"need at least 3 periods, got {len(series)}")
    t, y = series.t, series.cumulative
    total = series.total
    if total <= 0:
        raise SrgmFitError("degenerate series: no failures")
    rate0 = max(float(y[0]) / float(t[0]), total / float(t[-1]))
    if kind is SrgmKind.musa_basic:
        start = np.array([rate0, 1.2 * total])
        upper = np.array([UPPER_FACTOR * rate0 * 10, UPPER_FACTOR * total])
    else:
        # initial theta from the curvature of a log fit: mu(t_end) ~ total
        theta0 = max(math.log1p(rate0 * float(t[-1])) / total, 1e-6)
        start = np.array([rate0, theta0])
        upper = np.array([UPPER_FACTOR * rate0 * 10, 1e6])
    lower = np.array([1e-10, 1e-10])
    problem = NlsProblem(_musa_model(kind), t, y, start, lower, upper)
    try:
        res = nls_fit(problem)
    except DegenerateFitError as exc:
        raise SrgmFitError(f"{kind.value} fit degenerate along parameter {exc.direction}") from exc
    names = _PARAM_NAMES[kind]
    at_bound = np.isclose(res.params, upper, rtol=1e-6) | np.isclose(res.params, lower, rtol=1e-6)
    converged = res.converged and not at_bound.any()
    message = res.message
    if at_bound.any():
        message = "parameter at bound: " + ", ".join(n for n, b in zip(names, at_bound) if b)
    return SrgmFit(kind, dict(zip(names, map(float, res.params))), "nls", total, float(t[-1]),
                   None, converged, message, sse=res.sse)


# -- Cramer-von Mises goodness of fit ---------------------------------------


def cvm_statistic(z, beta_bar: float) -> float:
    """``1/(12m) + sum((z_i**beta_bar - (2i-1)/(2m))**2)`` over sorted z."""
    z = np.sort(np.asarray(z, dtype=float))
    m = len(z)
    i = np.arange(1, m + 1)
    return float(1.0 / (12 * m) + np.sum((z**beta_bar - (2 * i - 1) / (2 * m)) ** 2))


def gof_sample(timeline: EventTimeline, truncation: str) -> tuple[np.ndarray, float]:
    """Scaled times z_i and the unbiased shape for the CvM statistic.

    With ``S = sum(log(1/z_i))`` over the m scaled times, the unbiased
    shape is ``(m-1)/S`` in both truncation modes.
    """
    t = timeline.elapsed_times
    if truncation == "time":
        z = t / timeline.observation_end
    elif truncation == "failure":
        z = t[:-1] / t[-1]
    else:
        raise ValueError(f"truncation must be 'time' or 'failure', got {truncation!r}")
    m = len(z)
    if m < 3:
        raise InsufficientDataError(f"Cramer-von Mises test needs m >= 3, got m = {m}")
    s = float(-np.sum(np.log(z)))
    if not s > 0:
        raise SrgmFitError("degenerate timeline for goodness of fit")
    return z, (m - 1) / s


@lru_cache(maxsize=None)
def critical_table() -> dict[float, dict[int, float]]:
    """Monte Carlo critical values, ``{significance: {m: value}}``."""
    table: dict[float, dict[int, float]] = {}
    text = resources.files("reliafit").joinpath("data/cvm_critical.csv").read_text()
    for row in csv.DictReader(text.splitlines()):
        table.setdefault(float(row["significance"]), {})[int(row["m"])] = float(row["critical_value"])
    return table


def critical_value(m: int, significance: float = 0.05) -> float:
    """Tabulated critical value, interpolated linearly in 1/m between rows.

    Beyond the largest tabulated m the last row is used.
    """
    table = critical_table()
    level = next((s for s in table if math.isclose(s, significance)), None)
    if level is None:
        levels = ", ".join(f"{s:g}" for s in sorted(table))
        raise ValueError(f"unsupported significance {significance}; supported levels: {levels}")
    row = table[level]
    ms = sorted(row)
    if m < ms[0]:
        raise InsufficientDataError(f"no critical value for m = {m}")
    if m in row:
        return row[m]
    if m > ms[-1]:
        return row[ms[-1]]
    hi = next(k for k in ms if k > m)
    lo = max(k for k in ms if k < m)
    w = (1 / lo - 1 / m) / (1 / lo - 1 / hi)
    return row[lo] + w * (row[hi] - row[lo])


def cvm_gof(timeline: EventTimeline, fit: SrgmFit, significance: float = 0.05) -> GofVerdict:
    """Cramer-von Mises test of a fitted power-law process."""
    if fit.kind is not SrgmKind.power_law:
        raise ValueError("Cramer-von Mises test applies to power-law fits only")
    z, beta_bar = gof_sample(timeline, fit.truncation or "time")
    m = len(z)
    crit = critical_value(m, significance)
    stat = cvm_statistic(z, beta_bar)
    return GofVerdict(stat, m, significance, crit, stat <= crit)
