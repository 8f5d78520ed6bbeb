"""EVS trigger model: voltage mapping, log-difference noise, probabilities,
and event sampling.

The log-domain difference between consecutive samples splits into a clean
signal term and a Gaussian noise term whose moments follow from the shot
and dark-current noise scaled by the inverse effective voltages. A
comparator against the threshold emits at most one ON/OFF event per pixel
per sampling step.
"""
from __future__ import annotations

import numpy as np

from .core import EvsNoiseParams, RandomKey, make_events, normal_field
from .errors import DomainError, LayoutError, ParameterError
from .numerics import q_function

VOLTAGE_FLOOR = 1e-6


def intensity_to_voltage(i_c, params: EvsNoiseParams) -> np.ndarray:
    """Affine clean-intensity to effective-voltage map, floored at a small
    positive value so the log difference stays defined."""
    i = np.asarray(i_c, dtype=float)
    if np.any(i < 0):
        raise DomainError("clean intensity must be non-negative")
    b = params.beta_e
    return np.maximum(b[1] * i + b[2], VOLTAGE_FLOOR)


def noise_moments(v_prev, v_curr, i_c, params: EvsNoiseParams):
    """Mean and standard deviation of the log-difference noise term.

    sigma_shot = b3 * i_c, sigma_dcsn = b4, correlation rho = -b5; the
    per-pixel calibrated offset map scales with the inverse-voltage
    difference, so a static pixel has zero mean regardless of its offset.
    """
    vp = np.asarray(v_prev, dtype=float)
    vc = np.asarray(v_curr, dtype=float)
    if np.any(vp <= 0) or np.any(vc <= 0):
        raise DomainError("voltages must be positive")
    b = params.beta_e
    if abs(b[5]) > 1.0:
        raise ParameterError("|beta_e[5]| must not exceed 1")
    i = np.asarray(i_c, dtype=float)
    sig_shot = b[3] * i
    sig_dcsn = b[4]
    rho = -b[5]
    common = sig_shot ** 2 + sig_dcsn ** 2 - 2.0 * rho * sig_shot * sig_dcsn
    var = np.maximum(common, 0.0) * (1.0 / vc ** 2 + 1.0 / vp ** 2)
    mu = params.mu_n * (1.0 / vc - 1.0 / vp)
    return mu, np.sqrt(var)


def trigger_probabilities(s, mu_n, sigma_n, theta: float):
    """ON/OFF probabilities of the thresholded log difference.

    p_plus = Q((theta - (s + mu)) / sigma); p_minus is the lower-tail
    analogue. Zero sigma degenerates to a deterministic comparison.
    """
    if theta <= 0:
        raise DomainError("threshold must be positive")
    s_arr = np.asarray(s, dtype=float)
    mu = np.asarray(mu_n, dtype=float)
    sigma = np.asarray(sigma_n, dtype=float)
    if np.any(sigma < 0):
        raise DomainError("sigma must be non-negative")
    drift = s_arr + mu
    safe = np.where(sigma > 0, sigma, 1.0)
    p_plus = np.where(sigma > 0, q_function((theta - drift) / safe),
                      (drift > theta).astype(float))
    p_minus = np.where(sigma > 0, 1.0 - q_function((-theta - drift) / safe),
                       (drift < -theta).astype(float))
    if np.isscalar(s) and p_plus.ndim == 0:
        return float(p_plus), float(p_minus)
    return p_plus, p_minus


def step_events(v_prev, v_curr, i_c, params: EvsNoiseParams, theta: float,
                t_us: int, key: RandomKey) -> np.ndarray:
    """One sampling step: compare the noisy log difference against the
    threshold and emit per-pixel events at timestamp t_us.

    Bad pixels stay silent. Events come out in canonical (y, x) raster
    order, so a stream stitched from increasing timestamps stays sorted.
    """
    vp = np.asarray(v_prev, dtype=float)
    vc = np.asarray(v_curr, dtype=float)
    if vp.shape != vc.shape:
        raise LayoutError("voltage fields must share dimensions")
    i = np.asarray(i_c, dtype=float)
    if i.shape != vc.shape:
        raise LayoutError("intensity field must match the voltage fields")
    if params.mu_n.shape != vc.shape:
        raise LayoutError("parameter maps must match the field dimensions")
    if theta <= 0:
        raise DomainError("threshold must be positive")

    s = np.log(vc) - np.log(vp)
    mu, sigma = noise_moments(vp, vc, i, params)
    h, w = vc.shape
    noise = mu + sigma * normal_field(
        key.seed, key.frame, np.arange(h * w, dtype=np.uint64),
        key.draw).reshape(h, w)
    dv = s + noise
    live = ~params.bad_pixel_mask
    on = (dv > theta) & live
    off = (dv < -theta) & live
    ys, xs = np.nonzero(on | off)
    polarity = np.where(on[ys, xs], 1, -1).astype(np.int8)
    return make_events(t=np.full(ys.size, t_us, dtype=np.uint64),
                       x=xs.astype(np.uint16), y=ys.astype(np.uint16),
                       polarity=polarity)
