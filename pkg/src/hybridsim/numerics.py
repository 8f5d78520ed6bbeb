"""Statistical primitives and fitting routines shared by both calibration paths.

The Gaussian tail function and its inverse link event frequencies to noise
levels; the two regression helpers cover the linear variance fit and the
nonlinear trigger-curve fit. Everything here is a pure function.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import (
    DivergenceError,
    DomainError,
    InsufficientDataError,
    SingularDesignError,
)

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = 1.0 / float(np.sqrt(2.0 * np.pi))

# Rational approximation of the standard normal quantile (Acklam form),
# refined below by Newton steps so accuracy does not rest on these constants.
_PPF_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_PPF_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_PPF_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_PPF_D = (
    7.784695709041462e-03, 3.224671290700398e-01,
    2.445134137142996e00, 3.754408661907416e00,
)
_PPF_P_LOW = 0.02425


def _as_checked_array(x, name: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} requires finite input")
    return arr, (arr.ndim == 0)


def q_function(x):
    """Upper-tail probability of the standard normal, Q(x) = erfc(x/sqrt(2))/2.

    Accepts a scalar or an ndarray; scalars come back as Python floats.
    """
    arr, scalar = _as_checked_array(x, "q_function")
    out = 0.5 * special.erfc(arr / _SQRT2)
    return float(out) if scalar else out


def gaussian_pdf(x):
    """Standard normal density, used as the Newton derivative for q_inverse."""
    arr = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * arr * arr)
    return float(out) if arr.ndim == 0 else out


def _norm_ppf_initial(p: np.ndarray) -> np.ndarray:
    """Rational first guess for the standard normal quantile of p in (0, 1)."""
    a, b, c, d = _PPF_A, _PPF_B, _PPF_C, _PPF_D
    out = np.empty_like(p)
    lo = p < _PPF_P_LOW
    hi = p > 1.0 - _PPF_P_LOW
    mid = ~(lo | hi)

    with np.errstate(divide="ignore", invalid="ignore"):
        if np.any(lo):
            q = np.sqrt(-2.0 * np.log(p[lo]))
            out[lo] = (
                ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
            ) / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
        if np.any(hi):
            q = np.sqrt(-2.0 * np.log(1.0 - p[hi]))
            out[hi] = -(
                ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
            ) / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
        if np.any(mid):
            q = p[mid] - 0.5
            r = q * q
            out[mid] = (
                ((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]
            ) * q / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    return out


def q_inverse(p):
    """Inverse of q_function on (0, 1): returns x with Q(x) = p.

    Rational initial guess plus two Newton refinements on Q itself, giving
    |Q(q_inverse(p)) - p| below 1e-10 across p in [1e-8, 1 - 1e-8].
    """
    arr, scalar = _as_checked_array(p, "q_inverse")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("q_inverse requires 0 < p < 1")
    x = -_norm_ppf_initial(np.atleast_1d(arr).astype(float))
    pv = np.atleast_1d(arr)
    for _ in range(2):
        pdf = gaussian_pdf(x)
        step = np.where(pdf > 0.0, (0.5 * special.erfc(x / _SQRT2) - pv)
                        / np.where(pdf > 0.0, pdf, 1.0), 0.0)
        x = x + step
    out = x.reshape(arr.shape) if not scalar else float(x[0])
    return out


@dataclass(frozen=True)
class FitResult:
    """Outcome of a regression: coefficients plus convergence bookkeeping.

    residual_norm is the root-mean-square residual of the returned
    coefficients on the training data, in the units of the targets.
    """

    coefficients: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


def fit_linear_least_squares(design, targets) -> FitResult:
    """Solve an overdetermined linear system in the least-squares sense.

    Raises SingularDesignError naming the first linearly dependent column
    when the design is rank deficient.
    """
    a = np.asarray(design, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if a.ndim != 2:
        raise DomainError("design must be a 2-D matrix")
    if a.shape[0] != y.shape[0]:
        raise DomainError("design rows must match number of targets")
    if a.shape[0] < a.shape[1]:
        raise DomainError("need at least as many rows as columns")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise DomainError("design and targets must be finite")

    rank = np.linalg.matrix_rank(a)
    if rank < a.shape[1]:
        prev = 0
        for j in range(a.shape[1]):
            r = np.linalg.matrix_rank(a[:, : j + 1])
            if r == prev:
                raise SingularDesignError(
                    f"design is rank deficient: column {j} is linearly "
                    "dependent on the preceding columns"
                )
            prev = r
        raise SingularDesignError("design is rank deficient")

    coef, _, _, _ = np.linalg.lstsq(a, y, rcond=None)
    resid = a @ coef - y
    rms = float(np.sqrt(np.mean(resid * resid))) if y.size else 0.0
    return FitResult(coefficients=coef, residual_norm=rms, iterations=0,
                     converged=True)


@dataclass
class FitConfig:
    """Settings for fit_nonlinear_gd.

    Defaults favor reproducibility over speed: a fixed learning rate and a
    patience-window stopping rule on the relative loss decrease.
    """

    learning_rate: float = 1e-2
    max_iterations: int = 50_000
    tolerance: float = 1e-10
    patience: int = 100
    fd_step: float = 1e-6
    divergence_limit: float = 1e12
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None


def fit_nonlinear_gd(
    model: Callable[[np.ndarray, np.ndarray], np.ndarray],
    inputs,
    targets,
    init,
    config: Optional[FitConfig] = None,
    weights=None,
) -> FitResult:
    """Fit model(params, inputs) ~= targets by plain gradient descent.

    The loss is the weighted mean squared residual, normalized by the target
    RMS so the step size is scale free in the targets; the model always sees
    the caller's original inputs, so coefficients keep their natural units.
    Gradients use central finite differences with per-parameter step
    max(fd_step, fd_step * |param|).
    """
    cfg = config or FitConfig()
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if y.size == 0:
        raise InsufficientDataError("fit_nonlinear_gd requires at least one data point")
    params = np.array(init, dtype=float).ravel()
    if not np.all(np.isfinite(params)):
        raise DomainError("initial parameters must be finite")
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != y.shape or np.any(w < 0):
            raise DomainError("weights must be non-negative and match targets")
    w = w / np.mean(w) if np.any(w > 0) else np.ones_like(y)

    y_scale = float(np.sqrt(np.mean(y * y)))
    if y_scale == 0.0:
        y_scale = 1.0

    def loss(p: np.ndarray) -> float:
        r = (model(p, x) - y) / y_scale
        return float(np.mean(w * r * r))

    if cfg.project is not None:
        params = np.asarray(cfg.project(params), dtype=float)

    n = params.size
    history = np.empty(cfg.max_iterations + 1)
    cur = loss(params)
    history[0] = cur
    converged = False
    iterations = 0
    for i in range(1, cfg.max_iterations + 1):
        if not np.isfinite(cur) or cur > cfg.divergence_limit:
            raise DivergenceError(f"loss diverged at iteration {i - 1}", i - 1)
        grad = np.empty(n)
        for j in range(n):
            h = max(cfg.fd_step, cfg.fd_step * abs(params[j]))
            up = params.copy()
            dn = params.copy()
            up[j] += h
            dn[j] -= h
            grad[j] = (loss(up) - loss(dn)) / (2.0 * h)
        params = params - cfg.learning_rate * grad
        if cfg.project is not None:
            params = np.asarray(cfg.project(params), dtype=float)
        cur = loss(params)
        history[i] = cur
        iterations = i
        if i >= cfg.patience:
            ref = history[i - cfg.patience]
            if ref <= 0.0 or (ref - cur) / max(ref, 1e-300) < cfg.tolerance:
                converged = True
                break

    final = model(params, x) - y
    rms = float(np.sqrt(np.mean(w * final * final)))
    return FitResult(coefficients=params, residual_norm=rms,
                     iterations=iterations, converged=converged)
