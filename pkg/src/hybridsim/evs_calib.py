"""EVS calibration: per-pixel offsets from dark counts, the global trigger
parameter fit, and the bad-pixel mask.

Observed ON/OFF counts become probabilities, probabilities become Gaussian
quantiles, and the quantile-vs-intensity curve is regressed onto the
trigger model. The curve is invariant under a common rescale of the four
voltage/noise scale coefficients, so the fit runs in a reduced form with
the dark-current sigma pinned and reports a canonical parameter vector;
only the fitted curve is identifiable.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DivergenceError,
    InsufficientDataError,
    ParameterError,
    RankError,
)
from .evs_model import VOLTAGE_FLOOR
from .numerics import FitConfig, FitResult, fit_nonlinear_gd, q_inverse

MIN_BRIGHTNESS_LEVELS = 5
MIN_TRIALS_PER_LEVEL = 1000


@dataclass(frozen=True)
class EventCountObservation:
    """Counts for one pixel at one brightness level: n_plus ON and n_minus
    OFF events over n_trials sampling intervals."""

    x: int
    y: int
    i_c: float
    n_trials: int
    n_plus: int
    n_minus: int

    def __post_init__(self):
        if self.n_trials <= 0:
            raise InsufficientDataError("n_trials must be positive")
        if self.n_plus < 0 or self.n_minus < 0 or \
                self.n_plus + self.n_minus > self.n_trials:
            raise ParameterError("counts must satisfy n+ + n- <= n_trials")


def clip_probability(p, n_trials):
    """Clip empirical frequencies into the open interval where the Gaussian
    quantile is finite: [1/(2N), 1 - 1/(2N)]."""
    n = np.asarray(n_trials, dtype=float)
    lo = 1.0 / (2.0 * n)
    return np.clip(np.asarray(p, dtype=float), lo, 1.0 - lo)


@dataclass(frozen=True)
class MuOffsetEstimate:
    """Per-pixel offset and noise scale recovered from dark counts."""

    mu_n: np.ndarray
    sigma_n: np.ndarray
    low_confidence: np.ndarray  # True where counts were too sparse to trust


def estimate_mu_offsets(dark_observations: Sequence[EventCountObservation],
                        theta: float,
                        shape: tuple[int, int]) -> MuOffsetEstimate:
    """Solve the static-scene tail relations for (mu, sigma) per pixel.

    With no signal, Qinv(P+) * sigma = theta - mu and
    Qinv(1 - P-) * sigma = -theta - mu; the difference isolates sigma and
    either relation then gives mu. Equal ON/OFF frequencies give mu = 0.
    """
    if theta <= 0:
        raise ParameterError("threshold must be positive")
    mu = np.zeros(shape)
    sigma = np.zeros(shape)
    low = np.ones(shape, dtype=bool)
    for obs in dark_observations:
        n = obs.n_trials
        p_plus = clip_probability(obs.n_plus / n, n)
        p_minus = clip_probability(obs.n_minus / n, n)
        a = q_inverse(float(p_plus))
        b = q_inverse(float(1.0 - p_minus))
        sparse = (obs.n_plus + obs.n_minus) == 0
        if a - b <= 1e-12:
            # every trial fired: noise indistinguishable from saturation
            mu[obs.y, obs.x] = 0.0
            sigma[obs.y, obs.x] = np.inf
            low[obs.y, obs.x] = True
            continue
        sig = 2.0 * theta / (a - b)
        mu[obs.y, obs.x] = theta - a * sig
        sigma[obs.y, obs.x] = sig
        low[obs.y, obs.x] = sparse
    return MuOffsetEstimate(mu_n=mu, sigma_n=sigma, low_confidence=low)


def trigger_quantile_curve(beta_e, theta_hw_mv: float, i_c):
    """The model curve Qinv(P) as a function of clean intensity: scaled
    threshold times effective voltage over the combined noise sigma."""
    b = np.asarray(beta_e, dtype=float)
    i = np.asarray(i_c, dtype=float)
    num = b[0] * theta_hw_mv * (b[1] * i + b[2])
    den = np.sqrt(2.0 * ((b[3] * i) ** 2 + b[4] ** 2
                         + 2.0 * b[5] * b[3] * i * b[4]))
    return num / den


@dataclass(frozen=True)
class EvsFitDiagnostics:
    fit: FitResult
    levels: np.ndarray
    level_residuals: np.ndarray  # mean (observed - model) quantile per level


def _reduced_curve(theta_hw_mv: float):
    def curve(params, i):
        c1, c2, c3, b5 = params
        num = theta_hw_mv * (c1 * i + c2)
        den = np.sqrt(2.0 * ((c3 * i) ** 2 + 1.0 + 2.0 * b5 * c3 * i))
        return num / den
    return curve


def _profile_affine(c3: float, b5: float, i_n: np.ndarray, y: np.ndarray,
                    w: np.ndarray, theta_hw_mv: float,
                    floor: float) -> tuple[float, float]:
    """Closed-form weighted least squares for the affine voltage part given
    the noise shape: the model is linear in (c1, c2) once the denominator
    is fixed. The intercept is floored to keep voltages positive."""
    den = np.sqrt(2.0 * ((c3 * i_n) ** 2 + 1.0 + 2.0 * b5 * c3 * i_n))
    t = y * den / theta_hw_mv
    s_ww = float(np.sum(w))
    s_wi = float(np.sum(w * i_n))
    s_wii = float(np.sum(w * i_n * i_n))
    s_wt = float(np.sum(w * t))
    s_wit = float(np.sum(w * i_n * t))
    det = s_wii * s_ww - s_wi * s_wi
    if abs(det) < 1e-300:
        return 0.0, max(s_wt / max(s_ww, 1e-300), floor)
    c1 = (s_wit * s_ww - s_wt * s_wi) / det
    c2 = (s_wii * s_wt - s_wi * s_wit) / det
    return c1, max(c2, floor)


def fit_evs_params(observations: Sequence[EventCountObservation],
                   theta_hw_mv: float = 0.75,
                   init: Optional[np.ndarray] = None,
                   fit_config: Optional[FitConfig] = None
                   ) -> tuple[np.ndarray, EvsFitDiagnostics]:
    """Fit the trigger parameters from graded-brightness counts.

    Per observation, P = (P+ + P-)/2 clipped away from {0, 1}; the target
    is Qinv(P) and the loss weights each observation by its trial count.
    The leading threshold scale is fixed to 1 and the fit runs over
    normalized intensities in the reduced form (dark sigma pinned to 1),
    with the voltage positivity constraint projected after every step.
    Returns the canonical six-coefficient vector and fit diagnostics.
    """
    if not observations:
        raise InsufficientDataError("no observations")
    i_raw = np.array([o.i_c for o in observations], dtype=float)
    trials = np.array([o.n_trials for o in observations], dtype=float)
    p = np.array([(o.n_plus / o.n_trials + o.n_minus / o.n_trials) / 2.0
                  for o in observations])
    levels = np.unique(i_raw)
    if levels.size < MIN_BRIGHTNESS_LEVELS:
        raise RankError(
            f"need >= {MIN_BRIGHTNESS_LEVELS} distinct brightness levels, "
            f"got {levels.size}"
        )
    for lv in levels:
        if trials[i_raw == lv].sum() < MIN_TRIALS_PER_LEVEL:
            raise InsufficientDataError(
                f"brightness level {lv:g} has fewer than "
                f"{MIN_TRIALS_PER_LEVEL} trials"
            )
    y = q_inverse(clip_probability(p, trials))

    scale = float(np.sqrt(np.mean(i_raw * i_raw)))
    if scale == 0.0:
        scale = 1.0
    i_n = i_raw / scale
    curve = _reduced_curve(theta_hw_mv)
    w_norm = trials / trials.mean()

    # voltage positivity: flooring the profiled intercept handles i = 0;
    # a positive slope keeps the rest of the range positive, and a negative
    # slope is constrained through the floor at the top of the range
    floor = VOLTAGE_FLOOR

    def profiled_curve(shape_params, i):
        c3, b5 = shape_params
        b5 = float(np.clip(b5, -1.0, 1.0))
        c1, c2 = _profile_affine(c3, b5, i_n, y, w_norm, theta_hw_mv, floor)
        return curve(np.array([c1, c2, c3, b5]), i)

    def project(params: np.ndarray) -> np.ndarray:
        out = params.copy()
        out[1] = np.clip(out[1], -1.0, 1.0)
        return out

    if init is not None:
        b = np.asarray(init, dtype=float)
        if b.shape != (6,):
            raise ParameterError("init must be a six-coefficient vector")
        if b[4] <= 0:
            raise ParameterError("init dark-current sigma must be positive")
        start = np.array([b[3] * scale / b[4], b[5]])
    else:
        full = _heuristic_init(i_n, y, trials, theta_hw_mv)
        start = full[2:]

    start_rms = float(np.sqrt(np.mean(
        w_norm * (profiled_curve(start, i_n) - y) ** 2)))
    base = fit_config or FitConfig(learning_rate=2.0)
    result = None
    for lr in (base.learning_rate, base.learning_rate / 4.0,
               base.learning_rate / 16.0):
        cfg = replace(base, learning_rate=lr, project=project)
        try:
            candidate = fit_nonlinear_gd(profiled_curve, i_n, y, init=start,
                                         config=cfg, weights=trials)
        except DivergenceError:
            continue
        # an oscillating step size can stall above the starting loss;
        # treat that like a divergence and retry smaller
        if candidate.residual_norm <= start_rms * (1.0 + 1e-9):
            result = candidate
            break
        result = result or candidate
    if result is None:
        raise DivergenceError("trigger fit diverged at every learning rate", 0)

    c3, b5 = result.coefficients
    b5 = float(np.clip(b5, -1.0, 1.0))
    c1, c2 = _profile_affine(float(c3), b5, i_n, y, w_norm, theta_hw_mv, floor)
    beta_e = np.array([1.0, c1 / scale, c2, float(c3) / scale, 1.0, b5])

    residuals = y - curve(np.array([c1, c2, float(c3), b5]), i_n)
    level_res = np.array([residuals[i_raw == lv].mean() for lv in levels])
    diag = EvsFitDiagnostics(fit=result, levels=levels,
                             level_residuals=level_res)
    return beta_e, diag


def _heuristic_init(i_n: np.ndarray, y: np.ndarray, weights: np.ndarray,
                    theta_hw_mv: float) -> np.ndarray:
    """Deterministic starting point for the reduced-form fit.

    The model is linear in the voltage coefficients once the noise shape
    (c3, b5) is fixed, so scan a small deterministic grid of noise shapes,
    solve the affine part by weighted least squares at each, and keep the
    lowest-loss candidate.
    """
    sw = np.sqrt(weights / weights.mean())
    best = None
    best_loss = np.inf
    for c3 in np.geomspace(0.02, 3.0, 16):
        for b5 in (-0.6, -0.3, 0.0, 0.3, 0.6):
            den = np.sqrt(2.0 * ((c3 * i_n) ** 2 + 1.0 + 2.0 * b5 * c3 * i_n))
            target = y * den / theta_hw_mv
            design = np.stack([i_n, np.ones_like(i_n)], axis=1)
            coef, _, _, _ = np.linalg.lstsq(design * sw[:, None],
                                            target * sw, rcond=None)
            c1 = float(coef[0])
            c2 = max(float(coef[1]), VOLTAGE_FLOOR)
            pred = theta_hw_mv * (c1 * i_n + c2) / den
            loss = float(np.mean(weights * (pred - y) ** 2))
            if loss < best_loss:
                best_loss = loss
                best = np.array([c1, c2, c3, b5])
    return best


def build_bad_pixel_mask(observations: Sequence[EventCountObservation],
                         beta_e, theta_hw_mv: float,
                         shape: tuple[int, int], k: float = 5.0,
                         mu_n: Optional[np.ndarray] = None) -> np.ndarray:
    """Flag pixels whose quantile residual, or calibrated offset, exceeds
    k times the median absolute deviation of its population."""
    mask = np.zeros(shape, dtype=bool)
    if observations:
        i_c = np.array([o.i_c for o in observations])
        trials = np.array([o.n_trials for o in observations], dtype=float)
        p = np.array([(o.n_plus + o.n_minus) / (2.0 * o.n_trials)
                      for o in observations])
        y = q_inverse(clip_probability(p, trials))
        resid = y - trigger_quantile_curve(beta_e, theta_hw_mv, i_c)
        mad = float(np.median(np.abs(resid - np.median(resid))))
        if mad > 0 and np.isfinite(k):
            xs = np.array([o.x for o in observations])
            ys = np.array([o.y for o in observations])
            bad = np.abs(resid) > k * mad
            mask[ys[bad], xs[bad]] = True
    if mu_n is not None and np.isfinite(k):
        mad_mu = float(np.median(np.abs(mu_n - np.median(mu_n))))
        if mad_mu > 0:
            mask |= np.abs(mu_n) > k * mad_mu
    return mask


def observations_from_counts(on_counts: np.ndarray, off_counts: np.ndarray,
                             intensity: np.ndarray, n_trials: int
                             ) -> list[EventCountObservation]:
    """Assemble per-pixel observations from count maps and an intensity map."""
    if on_counts.shape != off_counts.shape or on_counts.shape != intensity.shape:
        raise ParameterError("count and intensity maps must share dimensions")
    h, w = on_counts.shape
    out = []
    for yy in range(h):
        for xx in range(w):
            out.append(EventCountObservation(
                x=xx, y=yy, i_c=float(intensity[yy, xx]), n_trials=n_trials,
                n_plus=int(on_counts[yy, xx]), n_minus=int(off_counts[yy, xx])))
    return out
