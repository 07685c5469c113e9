"""Fit-quality metrics and model ranking.

RMSE and adjusted R-square both divide the residual sum of squares by the
residual degrees of freedom ``n - p_free`` (the curve-fitting-toolbox
convention). Using ``n`` instead gives smaller RMSE values, so numbers from
other tools are only comparable under the same convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cmp_to_key
from typing import Sequence

import numpy as np

RMSE_TIE = 1e-9


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalMetrics:
    rmse: float
    adj_r_square: float
    n: int
    p_free: int
    mre_percent: float | None = None


def _pair(observed, predicted, p_free: int) -> tuple[np.ndarray, np.ndarray]:
    obs = np.asarray(observed, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    if obs.shape != pred.shape or obs.ndim != 1:
        raise ValueError("observed and predicted must be 1-D and of equal length")
    if p_free < 1 or len(obs) <= p_free:
        raise ValueError(f"need n > p_free, got n={len(obs)}, p_free={p_free}")
    return obs, pred


def rmse(observed, predicted, p_free: int) -> float:
    obs, pred = _pair(observed, predicted, p_free)
    resid = obs - pred
    return float(np.sqrt(resid @ resid / (len(obs) - p_free)))


def adj_r_square(observed, predicted, p_free: int) -> float:
    obs, pred = _pair(observed, predicted, p_free)
    resid = obs - pred
    dev = obs - obs.mean()
    sst = float(dev @ dev)
    if sst == 0.0:
        raise UndefinedMetricError("adjusted R-square is undefined for constant observations")
    n = len(obs)
    return 1.0 - (float(resid @ resid) / (n - p_free)) / (sst / (n - 1))


def mre(estimated_total: float, actual_total: float) -> float:
    """Magnitude of relative error in percent, relative to ``actual_total``."""
    if not actual_total > 0:
        raise ValueError(f"actual_total must be positive, got {actual_total}")
    return 100.0 * abs(estimated_total - actual_total) / actual_total


def evaluate(observed, predicted, p_free: int, estimated_total: float | None = None,
             actual_total: float | None = None) -> EvalMetrics:
    obs = np.asarray(observed, dtype=float)
    try:
        adj = adj_r_square(obs, predicted, p_free)
    except UndefinedMetricError:
        adj = float("nan")
    m = None
    if actual_total is not None and estimated_total is not None:
        m = mre(estimated_total, actual_total)
    return EvalMetrics(rmse(obs, predicted, p_free), adj, len(obs), p_free, m)


def _compare(x, y) -> int:
    mx, my = x.metrics, y.metrics
    if abs(mx.rmse - my.rmse) > RMSE_TIE:
        return -1 if mx.rmse < my.rmse else 1
    # an undefined adjusted R-square ranks last among ties
    ax = -math.inf if math.isnan(mx.adj_r_square) else mx.adj_r_square
    ay = -math.inf if math.isnan(my.adj_r_square) else my.adj_r_square
    if ax != ay:
        return -1 if ax > ay else 1
    return 0


def rank_models(results: Sequence) -> list:
    """Order fitted models best first.

    Ascending RMSE; RMSE values within 1e-9 are tied and ordered by
    descending adjusted R-square; remaining ties keep input order.
    """
    if not results:
        raise ValueError("nothing to rank")
    ns = {r.metrics.n for r in results}
    if len(ns) > 1:
        raise ValueError(f"models were fitted on different series (n = {sorted(ns)})")
    return sorted(results, key=cmp_to_key(_compare))
