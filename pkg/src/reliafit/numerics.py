"""Special functions and the damped least-squares engine used by all fitters."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

_TINY = 1e-300


class DomainError(ValueError):
    pass


class DegenerateFitError(ArithmeticError):
    """Raised when J^T J is singular at the solution."""

    def __init__(self, direction: int, message: str = ""):
        self.direction = direction
        super().__init__(message or f"degenerate fit: no curvature along parameter {direction}")


class NoDegreesOfFreedomError(ValueError):
    pass


def ln_gamma(x: float) -> float:
    """Natural log of the gamma function for x > 0."""
    if not x > 0:
        raise DomainError(f"ln_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def _gamma_series(a: float, x: float, gln: float, max_iter: int) -> float:
    ap = a
    term = total = 1.0 / a
    for _ in range(max_iter):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - gln)


def _gamma_cont_frac(a: float, x: float, gln: float, max_iter: int) -> float:
    # Modified Lentz evaluation of the upper-tail continued fraction.
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - gln) * h


def reg_inc_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x).

    Series expansion below ``x = a + 1``, continued fraction above.
    """
    if not a > 0:
        raise DomainError(f"reg_inc_gamma_p requires a > 0, got {a}")
    if not x >= 0:
        raise DomainError(f"reg_inc_gamma_p requires x >= 0, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    gln = math.lgamma(a)
    max_iter = 500 + int(20 * math.sqrt(a))
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x, gln, max_iter))
    return max(0.0, 1.0 - _gamma_cont_frac(a, x, gln, max_iter))


# -- nonlinear least squares -------------------------------------------------

Model = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class NlsProblem:
    """A bounded least-squares curve fit, ``y ~ model(params, t)``.

    ``model`` is called with the full parameter vector and the whole ``t``
    array and must return an array shaped like ``t``.
    """

    model: Model
    t_values: np.ndarray
    y_values: np.ndarray
    initial_params: np.ndarray
    lower_bounds: np.ndarray | None = None
    upper_bounds: np.ndarray | None = None
    fixed_mask: np.ndarray | None = None

    def __post_init__(self):
        self.t_values = np.asarray(self.t_values, dtype=float)
        self.y_values = np.asarray(self.y_values, dtype=float)
        self.initial_params = np.asarray(self.initial_params, dtype=float)
        p = len(self.initial_params)
        self.lower_bounds = (
            np.full(p, -np.inf) if self.lower_bounds is None else np.asarray(self.lower_bounds, float)
        )
        self.upper_bounds = (
            np.full(p, np.inf) if self.upper_bounds is None else np.asarray(self.upper_bounds, float)
        )
        self.fixed_mask = (
            np.zeros(p, bool) if self.fixed_mask is None else np.asarray(self.fixed_mask, bool)
        )
        if not (len(self.lower_bounds) == len(self.upper_bounds) == len(self.fixed_mask) == p):
            raise ValueError("bounds and fixed_mask must match the parameter count")
        if self.t_values.shape != self.y_values.shape:
            raise ValueError("t_values and y_values differ in length")
        if len(self.y_values) < self.n_free + 1:
            raise ValueError(
                f"need at least {self.n_free + 1} observations for {self.n_free} free parameters, "
                f"got {len(self.y_values)}"
            )
        if np.any(self.lower_bounds > self.initial_params) or np.any(
            self.initial_params > self.upper_bounds
        ):
            raise ValueError("initial parameters lie outside the bounds")

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(~self.fixed_mask))


@dataclass
class NlsResult:
    params: np.ndarray
    sse: float
    dof: int
    covariance: np.ndarray
    iterations: int
    converged: bool
    free_mask: np.ndarray
    message: str = ""
    sse_trace: list[float] = field(default_factory=list)
    jacobian: np.ndarray | None = field(default=None, repr=False)

    @property
    def free_params(self) -> np.ndarray:
        return self.params[self.free_mask]


def forward_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, fx: np.ndarray,
                     upper: np.ndarray | None = None) -> np.ndarray:
    """Forward-difference Jacobian with step max(1e-8, 1e-8 |x_j|).

    Steps that would cross an upper bound are taken backwards instead.
    """
    jac = np.empty((len(fx), len(x)))
    for j in range(len(x)):
        h = max(1e-8, 1e-8 * abs(x[j]))
        if upper is not None and x[j] + h > upper[j]:
            h = -h
        xh = x.copy()
        xh[j] += h
        jac[:, j] = (f(xh) - fx) / h
    return jac


def _null_direction(jtj: np.ndarray) -> int | None:
    scale = np.sqrt(np.diag(jtj))
    if np.any(scale == 0):
        return int(np.argmin(scale))
    corr = jtj / np.outer(scale, scale)
    w, v = np.linalg.eigh(corr)
    if w[0] <= 1e-13 * max(w[-1], 1.0):
        return int(np.argmax(np.abs(v[:, 0])))
    return None


def nls_fit(problem: NlsProblem, max_iter: int = 400, rel_tol: float = 1e-10,
            damping_init: float = 1e-3) -> NlsResult:
    """Levenberg-Marquardt fit of ``problem``.

    Bounds are enforced by clamping trial points; a clamped trial that does
    not reduce the SSE is rejected like any other bad step. Model output
    containing NaN rejects the step and raises the damping.

    Convergence: relative SSE change below ``rel_tol``, gradient max-norm
    below 1e-12, residual norm below ``rel_tol * |y|`` (exact fit), or a
    step too small to change the parameters. When the previous step's gain
    ratio exceeds 0.75 an undamped Gauss-Newton step is tried first.

    Returns a result with ``converged=False`` when ``max_iter`` is exhausted.
    The covariance ``s^2 (J^T J)^-1`` covers the free parameters only, with
    ``s^2 = SSE / (n - p_free)``.

    Raises
    ------
    DomainError
        If the model is not finite at the initial parameters.
    DegenerateFitError
        If ``J^T J`` is singular at the solution.
    """
    free = ~problem.fixed_mask
    full = problem.initial_params.copy()
    lo = problem.lower_bounds[free]
    hi = problem.upper_bounds[free]
    t, y = problem.t_values, problem.y_values
    n = len(y)
    dof = n - problem.n_free

    def residuals(xfree: np.ndarray) -> np.ndarray:
        p = full.copy()
        p[free] = xfree
        with np.errstate(all="ignore"):
            return y - np.asarray(problem.model(p, t), dtype=float)

    x = full[free].copy()
    r = residuals(x)
    if not np.all(np.isfinite(r)):
        raise DomainError("model is not finite at the initial parameters")
    sse = float(r @ r)
    trace = [sse]

    def jacobian(xf, rf):
        # d(model)/dp = -d(residual)/dp
        return -forward_jacobian(residuals, xf, rf, hi)

    J = jacobian(x, r)
    A = J.T @ J
    g = J.T @ r
    mu = damping_init * max(float(np.max(np.diag(A))), 1e-12)
    nu = 2.0
    trust_gn = False  # last step showed the quadratic model is accurate
    exact = (rel_tol * float(np.linalg.norm(y))) ** 2
    converged = False
    message = "maximum iterations reached"

    def trial(damping: float):
        """Clamped trial point for a given damping; None if it cannot be formed."""
        try:
            step = np.linalg.solve(A + damping * np.eye(len(x)), g)
        except np.linalg.LinAlgError:
            return None
        x_new = np.clip(x + step, lo, hi)
        return x_new, x_new - x

    it = 0
    for it in range(1, max_iter + 1):
        if sse <= exact or np.max(np.abs(g)) < 1e-12:
            converged, message = True, "gradient below tolerance" if sse > exact else "exact fit"
            it -= 1
            break
        accepted = None
        for damping in ((0.0, mu) if trust_gn else (mu,)):
            cand = trial(damping)
            if cand is None:
                continue
            x_new, actual_step = cand
            if np.all(np.abs(actual_step) <= 1e-15 * (np.abs(x) + 1e-15)):
                if damping == 0.0:
                    continue
                converged, message = True, "step below tolerance"
                break
            r_new = residuals(x_new)
            if not np.all(np.isfinite(r_new)):
                continue
            sse_new = float(r_new @ r_new)
            predicted = float(actual_step @ (2 * g - A @ actual_step))
            rho = (sse - sse_new) / predicted if predicted > 0 else -1.0
            if sse_new < sse or (sse_new == sse and rho > 0):
                accepted = (x_new, r_new, sse_new, rho)
                break
        if converged:
            break
        if accepted is None:
            trust_gn = False
            mu *= nu
            nu *= 2.0
            continue
        x_new, r_new, sse_new, rho = accepted
        rel_change = (sse - sse_new) / max(sse, _TINY)
        x, r, sse = x_new, r_new, sse_new
        trace.append(sse)
        J = jacobian(x, r)
        A = J.T @ J
        g = J.T @ r
        mu *= max(1.0 / 3.0, 1.0 - (2.0 * min(rho, 1.0) - 1.0) ** 3) if rho > 0 else 1.0
        nu = 2.0
        trust_gn = rho > 0.75
        if rel_change < rel_tol:
            converged, message = True, "relative SSE change below tolerance"
            break

    full[free] = x
    direction = _null_direction(A)
    if direction is not None:
        free_idx = np.flatnonzero(free)
        raise DegenerateFitError(int(free_idx[direction]))
    s2 = sse / dof if dof > 0 else np.nan
    cov = s2 * np.linalg.inv(A)
    cov = 0.5 * (cov + cov.T)
    return NlsResult(
        params=full,
        sse=sse,
        dof=dof,
        covariance=cov,
        iterations=it,
        converged=converged,
        free_mask=free.copy(),
        message=message,
        sse_trace=trace,
        jacobian=J,
    )


def sandwich_covariance(jacobian: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Covariance of a least-squares estimate when the errors have covariance ``sigma``.

    ``(J^T J)^-1 J^T sigma J (J^T J)^-1``; equals ``s^2 (J^T J)^-1`` when
    ``sigma = s^2 I``.
    """
    bread = np.linalg.inv(jacobian.T @ jacobian)
    cov = bread @ jacobian.T @ sigma @ jacobian @ bread
    return 0.5 * (cov + cov.T)


def t_quantile(p: float, dof: int) -> float:
    """Student-t quantile."""
    return float(stats.t.ppf(p, dof))


def confidence_intervals(result: NlsResult, level: float = 0.95) -> list[tuple[float, float]]:
    """Student-t intervals ``param +- t_q * sqrt(cov_ii)`` for the free parameters."""
    if result.dof < 1:
        raise NoDegreesOfFreedomError("no degrees of freedom left for interval estimation")
    if not result.converged:
        raise ValueError("confidence intervals require a converged fit")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    q = t_quantile(1 - (1 - level) / 2, result.dof)
    half = q * np.sqrt(np.clip(np.diag(result.covariance), 0.0, None))
    return [(float(p - h), float(p + h)) for p, h in zip(result.free_params, half)]


def central_jacobian(f: Callable[[np.ndarray], np.ndarray], x: Sequence[float],
                     rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, used as an independent check on forward differences."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        h = rel_step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * h))
    return np.column_stack(cols)
