"""APS calibration: fixed-pattern decomposition and variance regression.

Dark stacks across exposures give the per-pixel linear law
mean = exposure * drift + fixed_pattern; the fixed pattern splits into a
row bias and a per-pixel black-level map. Illuminated stacks then provide
(intensity, exposure, variance) samples that are regressed per CFA block
position onto the second-order variance polynomial.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cfa import CfaLayout
from .core import FrameStack, stack_mean_var
from .errors import LayoutError, RankError

QUANTIZATION_VARIANCE = 1.0 / 12.0  # DN^2, one quantization level per DN


@dataclass(frozen=True)
class DarkCalibration:
    """Per-pixel dark decomposition: mean = n_fp + exposure * n_dp,
    with n_fp = n_row (broadcast over columns) + n_blc."""

    n_dp: np.ndarray
    n_fp: np.ndarray
    n_row: np.ndarray
    n_blc: np.ndarray

    def dark_mean(self, exposure_ms: float) -> np.ndarray:
        return self.n_fp + exposure_ms * self.n_dp


def calibrate_dark(dark_stacks: list[FrameStack]) -> DarkCalibration:
    """Fit the linear exposure law to dark stack means, per pixel."""
    if len(dark_stacks) < 2:
        raise RankError("dark calibration needs stacks at >= 2 exposures")
    shape = dark_stacks[0].shape
    exposures = []
    means = []
    for stack in dark_stacks:
        if stack.shape != shape:
            raise LayoutError("dark stacks must share dimensions")
        mean, _ = stack_mean_var(stack)
        means.append(mean)
        exposures.append(stack.exposure_ms)
    t = np.asarray(exposures, dtype=float)
    if np.unique(t).size < 2:
        raise RankError("dark calibration needs >= 2 distinct exposures")
    m = np.stack(means)  # (T, h, w)

    # closed-form per-pixel least squares of mean vs exposure
    t_bar = t.mean()
    m_bar = m.mean(axis=0)
    st = np.sum((t - t_bar) ** 2)
    n_dp = np.tensordot(t - t_bar, m - m_bar, axes=(0, 0)) / st
    n_fp = m_bar - n_dp * t_bar
    n_row = n_fp.mean(axis=1)
    n_blc = n_fp - n_row[:, None]
    return DarkCalibration(n_dp=n_dp, n_fp=n_fp, n_row=n_row, n_blc=n_blc)


def calibrate_variance(illum_stacks: list[FrameStack], dark: DarkCalibration,
                       cfa: CfaLayout) -> np.ndarray:
    """Regress per-pixel variance onto (1, I, dt, I^2, I dt, dt^2) for each
    CFA block position; returns the (n_positions, 6) coefficient array.

    The intensity regressor is the dark-corrected stack mean; the uniform
    quantization variance (1/12 DN^2) is removed from the empirical
    variance first (clamped at zero) so the continuous part is fitted.
    """
    if not illum_stacks:
        raise RankError("variance calibration needs illuminated stacks")
    shape = illum_stacks[0].shape
    h, w = shape
    cfa.validate_dims(h, w)
    if dark.n_fp.shape != shape:
        raise LayoutError("dark calibration does not match stack dimensions")

    intensities = []
    variances = []
    exposures = []
    for stack in illum_stacks:
        if stack.shape != shape:
            raise LayoutError("illuminated stacks must share dimensions")
        mean, var = stack_mean_var(stack)
        intensities.append(mean - dark.dark_mean(stack.exposure_ms))
        variances.append(np.maximum(var - QUANTIZATION_VARIANCE, 0.0))
        exposures.append(stack.exposure_ms)

    pos_map = cfa.position_map(h, w)
    aps = cfa.aps_mask(h, w)
    n_pos = cfa.n_positions
    beta = np.empty((n_pos, 6))
    for p in range(n_pos):
        sel = (pos_map == p) & aps
        rows = []
        targets = []
        for i_map, v_map, dt in zip(intensities, variances, exposures):
            i = i_map[sel]
            rows.append(np.stack([np.ones_like(i), i, np.full_like(i, dt),
                                  i * i, i * dt,
                                  np.full_like(i, dt * dt)], axis=1))
            targets.append(v_map[sel])
        design = np.concatenate(rows)
        y = np.concatenate(targets)
        if np.linalg.matrix_rank(design) < 6:
            raise RankError(
                "variance design is rank deficient: need at least 3 distinct "
                "intensity levels and 2 distinct exposures spanning the "
                "quadratic terms"
            )
        coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
        beta[p] = coef
    return beta
