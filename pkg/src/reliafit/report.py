"""Run reports: JSON layout, float formatting and the warning vocabulary."""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any

from . import __version__
from .distfit import FittedDistModel, format_proportion
from .srgm import SrgmFit

SIG_DIGITS = 6

# Every report warning starts with one of these codes.
WARNING_CODES = {
    "skipped": "model not fitted because the series has too few periods",
    "nonconverged": "solver stopped without meeting its convergence test",
    "degenerate": "fit abandoned because the Jacobian was singular",
    "mode_at_origin": "fitted shape <= 1, so the peak failure density is at t = 0",
    "adj_r2_undefined": "observed cumulative series is constant",
    "gof_not_applicable": "goodness-of-fit requested for a model other than the power law",
}


def warning(code: str, subject: str, detail: str) -> str:
    if code not in WARNING_CODES:
        raise KeyError(code)
    return f"{code}: {subject}: {detail}"


def fmt(x: float | None) -> float | None:
    """Round to 6 significant digits; NaN and infinity become null."""
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(format(x, f".{SIG_DIGITS}g"))


def _pair(ci) -> list:
    return [fmt(ci[0]), fmt(ci[1])]


def dist_summary(model: FittedDistModel) -> dict[str, Any]:
    m = model.metrics
    return {
        "model": model.name,
        "a": fmt(model.params.a),
        "a_ci95": _pair(model.a_ci),
        "b": fmt(model.params.b),
        "b_ci95": _pair(model.b_ci),
        "c_total": fmt(model.c_total),
        "c_total_ci95": _pair(model.c_ci),
        "t_max": fmt(model.t_max),
        "proportion_at_tmax": fmt(model.proportion_at_tmax),
        "proportion_display": format_proportion(model.proportion_at_tmax),
        "sse": fmt(model.sse),
        "rmse": fmt(m.rmse),
        "adj_r_square": fmt(m.adj_r_square),
        "mre_percent": fmt(m.mre_percent),
        "n": m.n,
        "p_free": m.p_free,
    }


def srgm_summary(fit: SrgmFit) -> dict[str, Any]:
    out: dict[str, Any] = {
        "model": fit.kind.value,
        "method": fit.method,
        "params": {k: fmt(v) for k, v in fit.params.items()},
        "converged": fit.converged,
        "n_events": fmt(fit.n_events),
        "observation_end": fmt(fit.observation_end),
        "truncation": fit.truncation,
        "gof": None,
    }
    if fit.gof is not None:
        g = fit.gof
        out["gof"] = {
            "statistic": fmt(g.statistic),
            "m": g.m,
            "significance": g.significance,
            "critical_value": fmt(g.critical_value),
            "passed": g.passed,
        }
    return out


@dataclass
class VersionEntry:
    version: str
    granularity: str
    n_periods: int
    dist_fits: list[dict] = field(default_factory=list)
    srgm_fits: list[dict] = field(default_factory=list)
    ranking: list[str] = field(default_factory=list)


@dataclass
class RunReport:
    input_digest: str
    per_version: list[VersionEntry] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    tool_version: str = __version__

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_version": self.tool_version,
            "input_digest": self.input_digest,
            "per_version": [vars(v) for v in self.per_version],
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", text)
