"""Weibull/Gamma cumulative-failure models and their constrained special cases.

Cumulative failures are modelled as ``Y(t) = C * F(t; a, b)`` where ``F`` is a
Weibull or Gamma CDF and ``C`` is the total number of defects. The parameter
naming follows the usual toolbox convention:

========  =================  ==================
kind      a                  b
========  =================  ==================
weibull   scale              shape
rayleigh  scale              shape, fixed at 2
gamma     shape              scale
sshaped   shape, fixed at 2  scale
========  =================  ==================

Peak times come from the closed-form density modes, e.g. ``a * ((b-1)/b)**(1/b)``
for the Weibull, so ``t_max`` is always consistent with the fitted parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import metrics
from .ingest import FailureSeries
from .numerics import (
    DegenerateFitError,
    NlsProblem,
    NlsResult,
    confidence_intervals,
    ln_gamma,
    nls_fit,
    reg_inc_gamma_p,
    sandwich_covariance,
)

RAYLEIGH_SHAPE = 2.0
SSHAPED_SHAPE = 2.0
# Fraction of defects found by the peak time, independent of scale.
RAYLEIGH_RULE = 1.0 - math.exp(-0.5)
SSHAPED_RULE = 1.0 - 2.0 * math.exp(-1.0)

C_UPPER_FACTOR = 1e3
CI_METHODS = ("counting", "ols")


class DistKind(str, Enum):
    weibull = "weibull"
    gamma = "gamma"
    rayleigh = "rayleigh"
    sshaped = "sshaped"

    @property
    def family(self) -> "DistKind":
        return {DistKind.rayleigh: DistKind.weibull, DistKind.sshaped: DistKind.gamma}.get(self, self)

    @property
    def fixed_index(self) -> int | None:
        """Index (0=a, 1=b) of the parameter pinned to 2, if any."""
        return {DistKind.rayleigh: 1, DistKind.sshaped: 0}.get(self)

    @property
    def n_free(self) -> int:
        """Free parameters of the cumulative model, C included."""
        return 3 if self.fixed_index is None else 2


class ConstraintError(ValueError):
    pass


class FitError(RuntimeError):
    """A cumulative fit that failed; ``result`` holds the best point reached."""

    def __init__(self, message: str, result: NlsResult | None = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class DistParams:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError(f"parameters must be positive and finite, got a={self.a}, b={self.b}")

    # Weibull reparametrization f(t) = B A t^(B-1) exp(-A t^B)
    @property
    def A(self) -> float:
        return 1.0 / self.a**self.b

    @property
    def B(self) -> float:
        return self.b


def _check(kind: DistKind, params: DistParams) -> DistKind:
    kind = DistKind(kind)
    idx = kind.fixed_index
    if idx is not None:
        value = (params.a, params.b)[idx]
        if value != 2.0:
            name = "ab"[idx]
            raise ConstraintError(f"{kind.value} requires {name} = 2, got {value}")
    return kind


def dist_pdf(kind: DistKind | str, t: float, params: DistParams) -> float:
    kind = _check(kind, params)
    if not t > 0:
        raise ValueError(f"pdf requires t > 0, got {t}")
    a, b = params.a, params.b
    if kind.family is DistKind.weibull:
        z = t / a
        return (b / a) * z ** (b - 1) * math.exp(-(z**b))
    return math.exp((a - 1) * math.log(t) - t / b - a * math.log(b) - ln_gamma(a))


def dist_cdf(kind: DistKind | str, t: float, params: DistParams) -> float:
    kind = _check(kind, params)
    if not t >= 0:
        raise ValueError(f"cdf requires t >= 0, got {t}")
    if kind.family is DistKind.weibull:
        return -math.expm1(-((t / params.a) ** params.b))
    return reg_inc_gamma_p(params.a, t / params.b)


def _cdf_vec(family: DistKind, t: np.ndarray, a: float, b: float) -> np.ndarray:
    if family is DistKind.weibull:
        return -np.expm1(-((t / a) ** b))
    return np.array([reg_inc_gamma_p(a, ti / b) for ti in t])


def mode_time(kind: DistKind | str, params: DistParams) -> float:
    """Time of peak failure density; 0 when the shape is at most 1."""
    kind = _check(kind, params)
    a, b = params.a, params.b
    if kind.family is DistKind.weibull:
        return a * ((b - 1) / b) ** (1 / b) if b > 1 else 0.0
    return b * (a - 1) if a > 1 else 0.0


def proportion_at_mode(kind: DistKind | str, params: DistParams) -> float:
    kind = _check(kind, params)
    tm = mode_time(kind, params)
    if tm == 0.0:
        return 0.0
    return dist_cdf(kind, tm, params)


def format_proportion(p: float) -> str:
    """Percentage rounded to the nearest half percent, e.g. ``'38.5%'``."""
    halves = round(p * 200)
    pct = halves / 2
    return f"{pct:.0f}%" if halves % 2 == 0 else f"{pct:.1f}%"


def cumulative_model(kind: DistKind | str):
    """``model(params, t)`` for ``params = (a, b, C)``, suitable for ``nls_fit``."""
    family = DistKind(kind).family

    def model(p: np.ndarray, t: np.ndarray) -> np.ndarray:
        a, b, c = p
        if a <= 0 or b <= 0:
            return np.full_like(t, np.nan)
        return c * _cdf_vec(family, t, a, b)

    return model


@dataclass(frozen=True)
class FittedDistModel:
    kind: DistKind
    params: DistParams
    a_ci: tuple[float, float]
    b_ci: tuple[float, float]
    c_total: float
    c_ci: tuple[float, float]
    t_max: float
    proportion_at_tmax: float
    metrics: metrics.EvalMetrics
    fitted_curve: tuple[tuple[float, float], ...]
    sse: float
    iterations: int = 0
    covariance: np.ndarray = field(default=None, repr=False, compare=False)  # type: ignore[assignment]

    @property
    def name(self) -> str:
        return self.kind.value

    def predict(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self.c_total * _cdf_vec(self.kind.family, t, self.params.a, self.params.b)


def initial_guess(series: FailureSeries, kind: DistKind) -> np.ndarray:
    t = series.t
    peak = float(t[int(np.argmax(series.counts))]) if np.any(series.counts > 0) else float(np.median(t))
    c0 = 1.2 * series.total
    if kind.family is DistKind.weibull:
        return np.array([peak, 2.0, c0])
    return np.array([2.0, peak / 2.0, c0])


def _solve(series: FailureSeries, kind: DistKind, start: np.ndarray) -> NlsResult:
    fixed = np.zeros(3, bool)
    if kind.fixed_index is not None:
        fixed[kind.fixed_index] = True
        start = start.copy()
        start[kind.fixed_index] = 2.0
    lower = np.array([1e-8, 1e-8, 1e-8])
    upper = np.array([np.inf, np.inf, C_UPPER_FACTOR * max(series.total, 1.0)])
    start = np.clip(start, lower, upper)
    problem = NlsProblem(cumulative_model(kind), series.t, series.cumulative, start,
                         lower, upper, fixed)
    return nls_fit(problem)


def fit_cumulative(series: FailureSeries, kind: DistKind | str,
                   actual_total: float | None = None, ci_method: str = "counting") -> FittedDistModel:
    """Least-squares fit of ``C * F(t; a, b)`` to a cumulative failure series.

    The general families are started twice: from the default initial guess
    and from the optimum of the nested constrained model, keeping the lower
    SSE. This makes the general fit never worse than its special case.

    Confidence intervals (95%, Student-t on ``n - p_free`` degrees of
    freedom) come in two flavours:

    ``"counting"``
        Sandwich covariance for cumulative counts. Residuals of a cumulative
        series are partial sums of independent per-period errors, so
        ``cov(Y_i, Y_k) = phi * m(min(t_i, t_k))`` with ``m`` the fitted
        curve and ``phi`` the Pearson dispersion of the per-period counts.
    ``"ols"``
        ``s^2 (J^T J)^-1``, the usual curve-fitting-toolbox output. It
        treats the cumulative residuals as independent and so understates
        the uncertainty of ``C`` badly once the curve has levelled off.

    Parameters
    ----------
    series : FailureSeries
        ``t`` is the 1-based period number.
    kind : DistKind
    actual_total : float, optional
        Known total defect count; fills ``metrics.mre_percent``.
    ci_method : {"counting", "ols"}

    Raises
    ------
    ValueError
        Too few periods or an all-zero series.
    FitError
        The solver did not converge, hit a bound on ``C`` or met a degenerate
        Jacobian.
    """
    kind = DistKind(kind)
    if ci_method not in CI_METHODS:
        raise ValueError(f"ci_method must be one of {CI_METHODS}, got {ci_method!r}")
    if len(series) < kind.n_free + 1:
        raise ValueError(
            f"{kind.value} needs at least {kind.n_free + 1} periods, series has {len(series)}"
        )
    if series.total <= 0:
        raise ValueError("degenerate input: all period counts are zero")

    starts = [initial_guess(series, kind)]
    if kind.fixed_index is None:
        nested = DistKind.rayleigh if kind is DistKind.weibull else DistKind.sshaped
        try:
            sub = _solve(series, nested, initial_guess(series, nested))
            starts.append(sub.params)
        except DegenerateFitError:
            pass

    best: NlsResult | None = None
    error: Exception | None = None
    for start in starts:
        try:
            res = _solve(series, kind, start)
        except DegenerateFitError as exc:
            error = exc
            continue
        if best is None or res.sse < best.sse or (res.converged and not best.converged and res.sse <= best.sse):
            best = res
    if best is None:
        raise FitError(f"{kind.value} fit degenerate: {error}") from error
    if not best.converged:
        raise FitError(f"{kind.value} fit did not converge ({best.message}, sse={best.sse:.6g})", best)
    c_upper = C_UPPER_FACTOR * max(series.total, 1.0)
    if best.params[2] >= c_upper * (1 - 1e-9):
        raise FitError(f"{kind.value} fit ran C to its upper bound {c_upper:.6g}", best)
    if ci_method == "counting":
        best = replace(best, covariance=counting_covariance(series, kind, best))
    return _assemble(series, kind, best, actual_total)


def counting_covariance(series: FailureSeries, kind: DistKind, res: NlsResult) -> np.ndarray:
    """Sandwich covariance of the free parameters for cumulative count data."""
    a, b, c = res.params
    fitted = c * _cdf_vec(kind.family, series.t, a, b)
    increments = np.diff(fitted, prepend=0.0)
    floor = 1e-8 * max(series.total, 1.0)
    pearson = (series.counts - increments) ** 2 / np.maximum(increments, floor)
    phi = float(np.sum(pearson)) / res.dof
    sigma = phi * np.minimum.outer(fitted, fitted)
    return sandwich_covariance(res.jacobian, sigma)


def _assemble(series: FailureSeries, kind: DistKind, res: NlsResult,
              actual_total: float | None) -> FittedDistModel:
    a, b, c = (float(v) for v in res.params)
    params = DistParams(a, b)
    intervals = iter(confidence_intervals(res))
    cis = [(v, v) if fixed else next(intervals) for v, fixed in zip((a, b, c), ~res.free_mask)]
    t_max = mode_time(kind, params)
    predicted = c * _cdf_vec(kind.family, series.t, a, b)
    m = metrics.evaluate(series.cumulative, predicted, kind.n_free, estimated_total=c,
                         actual_total=actual_total)
    curve = tuple((float(ti), float(yi)) for ti, yi in zip(series.t, predicted))
    return FittedDistModel(
        kind=kind,
        params=params,
        a_ci=cis[0],
        b_ci=cis[1],
        c_total=c,
        c_ci=cis[2],
        t_max=t_max,
        proportion_at_tmax=proportion_at_mode(kind, params),
        metrics=m,
        fitted_curve=curve,
        sse=res.sse,
        iterations=res.iterations,
        covariance=res.covariance,
    )
