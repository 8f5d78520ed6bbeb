"""APS noise model: variance polynomial evaluation and noisy RAW synthesis.

The per-position second-order polynomial maps (clean intensity, exposure)
to the aggregate stochastic variance (shot + dark-current shot + read,
cross-terms absorbed). Synthesis adds the fixed-pattern and drift maps,
draws one Gaussian per pixel from the counter RNG, then clamps and
quantizes to the output bit depth.
"""
from __future__ import annotations

import numpy as np

from .cfa import CfaLayout
from .core import ApsNoiseParams, RandomKey, RawFrame, as_image, normal_field
from .errors import DomainError, LayoutError


def aps_variance(i_c, dt: float, position: int, params: ApsNoiseParams):
    """Aggregate noise variance at clean intensity i_c (DN) and exposure dt
    (ms) for one CFA block position; clamped at zero."""
    if not 0 <= position < params.beta_a.shape[0]:
        raise DomainError(f"position {position} out of range")
    if dt <= 0:
        raise DomainError("exposure must be positive")
    i = np.asarray(i_c, dtype=float)
    if np.any(i < 0):
        raise DomainError("clean intensity must be non-negative")
    b = params.beta_a[position]
    value = _variance_poly(i, dt, b)
    return float(value) if np.isscalar(i_c) else value


def _variance_poly(i: np.ndarray, dt: float, beta: np.ndarray) -> np.ndarray:
    value = (beta[..., 0] + beta[..., 1] * i + beta[..., 2] * dt
             + beta[..., 3] * i * i + beta[..., 4] * i * dt
             + beta[..., 5] * dt * dt)
    return np.maximum(value, 0.0)


def variance_map(clean: np.ndarray, dt: float, params: ApsNoiseParams,
                 cfa: CfaLayout) -> np.ndarray:
    """Per-pixel variance for a whole clean mosaic."""
    h, w = clean.shape
    pos = cfa.position_map(h, w)
    betas = params.beta_a[pos]  # (h, w, 6)
    return _variance_poly(clean, dt, betas)


def synthesize_raw(clean, dt: float, params: ApsNoiseParams, cfa: CfaLayout,
                   key: RandomKey) -> RawFrame:
    """Synthesize a noisy RAW frame from a clean mosaic.

    Per pixel: clean + row offset + black-level offset + dt * dark drift
    + N(0, variance(clean, dt, position)), clamped to the DN range and
    rounded. EVS sites are synthesized with the nearest APS position's
    coefficients. Bit-identical for identical (clean, dt, params, key).
    """
    plane = as_image(clean)
    h, w = plane.shape
    cfa.validate_dims(h, w)
    if params.shape != (h, w):
        raise LayoutError("noise parameter maps do not match the mosaic")
    if dt <= 0:
        raise DomainError("exposure must be positive")
    if np.any(plane < 0):
        raise DomainError("clean mosaic must be non-negative")

    sigma = np.sqrt(variance_map(plane, dt, params, cfa))
    noise = normal_field(key.seed, key.frame,
                         np.arange(h * w, dtype=np.uint64),
                         key.draw).reshape(h, w)
    value = (plane + params.n_row[:, None] + params.n_blc
             + dt * params.n_dp + sigma * noise)
    top = (1 << params.bit_depth) - 1
    data = np.rint(np.clip(value, 0.0, float(top))).astype(np.uint16)
    return RawFrame(data=data, bit_depth=params.bit_depth,
                    exposure_us=int(round(dt * 1000.0)), cfa=cfa)
