"""Forward ISP (RAW to sRGB) and the controllable inverse pipeline.

The inverse path renders display images into a clean linear mosaic in DN,
which is the shared input of the two noise simulators. The forward path
closes the loop: black-level correction, demosaic, white balance, color
matrix, gamma. Quad-style mosaics are demosaiced on the 2x2-binned grid by
default, which keeps the reconstruction exact for locally affine content.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .cfa import CfaLayout
from .core import ApsNoiseParams, RawFrame, as_image
from .errors import DomainError, LayoutError

_LUMA = np.array([0.2126, 0.7152, 0.0722])

# bilinear in-fill kernel; native samples are kept untouched
_K3 = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])


@dataclass(frozen=True)
class IspConfig:
    """Rendering parameters shared by the forward and inverse pipelines."""

    gamma: float = 2.2
    use_srgb_curve: bool = False
    ccm: np.ndarray = field(default_factory=lambda: np.eye(3))
    wb_gains: np.ndarray = field(default_factory=lambda: np.ones(3))
    black_level: float = 64.0
    white_level: float = 1023.0
    tone_curve: Optional[np.ndarray] = None  # (n, 2) monotone control points
    quad_binning: bool = True

    def __post_init__(self):
        ccm = np.asarray(self.ccm, dtype=float)
        wb = np.asarray(self.wb_gains, dtype=float)
        if ccm.shape != (3, 3):
            raise DomainError("ccm must be 3x3")
        if np.any(np.abs(ccm.sum(axis=1) - 1.0) > 1e-6):
            raise DomainError("ccm rows must sum to 1 (row-sum-normalized)")
        if abs(np.linalg.det(ccm)) < 1e-12:
            raise DomainError("ccm must be invertible")
        if wb.shape != (3,) or np.any(wb <= 0):
            raise DomainError("wb_gains must be three positive gains")
        if not (self.black_level < self.white_level):
            raise DomainError("black_level must be below white_level")
        if self.gamma <= 0:
            raise DomainError("gamma must be positive")
        if self.tone_curve is not None:
            tc = np.asarray(self.tone_curve, dtype=float)
            if tc.ndim != 2 or tc.shape[1] != 2 or tc.shape[0] < 2 or \
                    np.any(np.diff(tc[:, 0]) <= 0) or np.any(np.diff(tc[:, 1]) <= 0):
                raise DomainError("tone_curve must be strictly increasing (n, 2) points")
            object.__setattr__(self, "tone_curve", tc)
        object.__setattr__(self, "ccm", ccm)
        object.__setattr__(self, "wb_gains", wb)

    @property
    def dn_range(self) -> float:
        return self.white_level - self.black_level


def _srgb_to_linear(v: np.ndarray) -> np.ndarray:
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.maximum(v, 0.0)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * v ** (1 / 2.4) - 0.055)


def _decode_gamma(srgb: np.ndarray, config: IspConfig) -> np.ndarray:
    if config.use_srgb_curve:
        return _srgb_to_linear(srgb)
    return srgb ** config.gamma


def _encode_gamma(linear: np.ndarray, config: IspConfig) -> np.ndarray:
    if config.use_srgb_curve:
        return _linear_to_srgb(linear)
    return np.maximum(linear, 0.0) ** (1.0 / config.gamma)


def _apply_tone(v: np.ndarray, config: IspConfig) -> np.ndarray:
    if config.tone_curve is None:
        return v
    tc = config.tone_curve
    return np.interp(v, tc[:, 0], tc[:, 1])


def _invert_tone(v: np.ndarray, config: IspConfig) -> np.ndarray:
    if config.tone_curve is None:
        return v
    tc = config.tone_curve
    return np.interp(v, tc[:, 1], tc[:, 0])


def inverse_pipeline(srgb, config: IspConfig, cfa: CfaLayout) -> np.ndarray:
    """Render an sRGB image into the clean linear mosaic (float DN).

    Inverse tone/gamma, inverse color matrix, inverse white balance, then
    per-cell channel selection: color cells read their filter channel,
    white-family cells read the luminance of the linearized input.
    """
    img = np.asarray(srgb, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DomainError("expected an (h, w, 3) image")
    if np.any(img < -1e-9) or np.any(img > 1.0 + 1e-9):
        raise DomainError("sRGB values must lie in [0, 1]")
    h, w = img.shape[:2]
    cfa.validate_dims(h, w)

    lin = _decode_gamma(_invert_tone(np.clip(img, 0.0, 1.0), config), config)
    lum = lin @ _LUMA
    cam = lin @ np.linalg.inv(config.ccm).T
    cam = cam / config.wb_gains
    cam = np.maximum(cam, 0.0)

    planes = np.concatenate([cam, lum[:, :, None]], axis=2)
    chan = cfa.channel_map(h, w)
    mosaic = np.take_along_axis(planes, chan[:, :, None].astype(np.intp),
                                axis=2)[:, :, 0]
    return config.black_level + mosaic * config.dn_range


def _infill_evs_cells(mosaic: np.ndarray, cfa: CfaLayout) -> np.ndarray:
    """Replace EVS-cell samples by distance-weighted interpolation of the
    nearest same-channel APS cells bracketing them along the row (falling
    back to the column, then to a plain nearest-neighbor mean).

    Works on a pattern-extrapolated copy so border cells interpolate from
    same-channel values instead of clamped neighbors.
    """
    if not cfa.has_evs:
        return mosaic
    h, w = mosaic.shape
    bh, bw = cfa.block_height, cfa.block_width
    padded = _pad_pattern_linear(mosaic, bh, bw)
    out = padded.copy()
    for (r, c) in cfa.evs_cells:
        chan = int(cfa.infill[r, c])
        pairs = _infill_weights(cfa, r, c, chan)
        rows = np.arange(bh + r, bh + h, bh)
        cols = np.arange(bw + c, bw + w, bw)
        acc = np.zeros((rows.size, cols.size))
        for (dr, dc), weight in pairs:
            acc += weight * padded[np.ix_(rows + dr, cols + dc)]
        out[np.ix_(rows, cols)] = acc
    return out[bh:bh + h, bw:bw + w]


def _bracket_offsets(cfa: CfaLayout, r: int, c: int, chan: int,
                     axis: int) -> list[tuple[tuple[int, int], float]] | None:
    """Nearest same-channel APS cells on either side along one axis, with
    linear interpolation weights; None if no bracket exists."""
    bh, bw = cfa.block_height, cfa.block_width
    period = bh if axis == 0 else bw
    lo = hi = None
    for d in range(1, period + 1):
        for sign, slot in ((-1, "lo"), (1, "hi")):
            dr, dc = (sign * d, 0) if axis == 0 else (0, sign * d)
            rr, cc = (r + dr) % bh, (c + dc) % bw
            if int(cfa.roles[rr, cc]) < 4 and int(cfa.infill[rr, cc]) == chan:
                if slot == "lo" and lo is None:
                    lo = (dr, dc)
                if slot == "hi" and hi is None:
                    hi = (dr, dc)
        if lo is not None and hi is not None:
            break
    if lo is None or hi is None:
        return None
    dl = lo[axis]
    dh = hi[axis]
    return [(lo, dh / (dh - dl)), (hi, -dl / (dh - dl))]


def _infill_weights(cfa: CfaLayout, r: int, c: int,
                    chan: int) -> list[tuple[tuple[int, int], float]]:
    for axis in (1, 0):
        pairs = _bracket_offsets(cfa, r, c, chan, axis)
        if pairs is not None:
            return pairs
    # fall back: unweighted mean of the nearest same-channel ring
    bh, bw = cfa.block_height, cfa.block_width
    for radius in range(1, max(bh, bw) + 1):
        found = []
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                if max(abs(dr), abs(dc)) != radius:
                    continue
                rr, cc = (r + dr) % bh, (c + dc) % bw
                if int(cfa.roles[rr, cc]) < 4 and int(cfa.infill[rr, cc]) == chan:
                    found.append((dr, dc))
        if found:
            return [(off, 1.0 / len(found)) for off in found]
    raise LayoutError("no APS cell shares the EVS cell's channel")


def _interp_missing(values: np.ndarray, known: np.ndarray,
                    check: tuple[slice, slice]) -> np.ndarray:
    """Bilinear in-fill of missing samples; native samples pass through.

    Coverage is only required on the `check` region (the part kept after
    padding); pad corners may legitimately stay unreached.
    """
    num = ndimage.convolve(np.where(known, values, 0.0), _K3, mode="constant")
    den = ndimage.convolve(known.astype(float), _K3, mode="constant")
    if np.any((den[check] == 0) & ~known[check]):
        raise LayoutError("channel coverage too sparse for 3x3 interpolation")
    filled = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return np.where(known, values, filled)


def _pad_pattern_linear(mosaic: np.ndarray, period_y: int, period_x: int) -> np.ndarray:
    """Extend the mosaic by one pattern period per side via same-channel
    polynomial extrapolation (quadratic when three periods fit, else
    linear); removes low-order demosaic errors at the frame border."""
    h, w = mosaic.shape
    if h < 2 * period_y or w < 2 * period_x:
        raise LayoutError("mosaic too small to pad (needs two pattern periods)")
    py, px = period_y, period_x
    out = np.empty((h + 2 * py, w + 2 * px))
    out[py:py + h, px:px + w] = mosaic
    core = out[py:py + h, :]

    def extrap(a, b, c):
        # samples one, two, (three) periods in: quadratic if c is given
        return 3.0 * a - 3.0 * b + c if c is not None else 2.0 * a - b

    quad_x = w >= 3 * px
    for k in range(1, px + 1):
        lo = [core[:, px + (j * px - k)] for j in (1, 2)]
        hi = [core[:, px + w - 1 - (j * px - k)] for j in (1, 2)]
        lo.append(core[:, px + (3 * px - k)] if quad_x else None)
        hi.append(core[:, px + w - 1 - (3 * px - k)] if quad_x else None)
        out[py:py + h, px - k] = extrap(*lo)
        out[py:py + h, px + w - 1 + k] = extrap(*hi)
    quad_y = h >= 3 * py
    for k in range(1, py + 1):
        lo = [out[py + (j * py - k), :] for j in (1, 2)]
        hi = [out[py + h - 1 - (j * py - k), :] for j in (1, 2)]
        lo.append(out[py + (3 * py - k), :] if quad_y else None)
        hi.append(out[py + h - 1 - (3 * py - k), :] if quad_y else None)
        out[py - k, :] = extrap(*lo)
        out[py + h - 1 + k, :] = extrap(*hi)
    return out


def _demosaic_full(mosaic: np.ndarray, channel_pattern: np.ndarray,
                   period: tuple[int, int]) -> np.ndarray:
    h, w = mosaic.shape
    py, px = period
    padded = _pad_pattern_linear(mosaic, py, px)
    pattern = np.pad(channel_pattern, ((py, py), (px, px)), mode="wrap")
    keep = (slice(py, py + h), slice(px, px + w))
    rgb = np.empty((h, w, 3))
    for chan in range(3):
        known = pattern == chan
        rgb[:, :, chan] = _interp_missing(padded, known, keep)[keep]
    return rgb


def _bin_quad_groups(mosaic: np.ndarray) -> np.ndarray:
    h, w = mosaic.shape
    return mosaic.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _upsample_2x(rgb_half: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear x2 upsampling aligned to 2x2 group centers."""
    yy = (np.arange(h) - 0.5) / 2.0
    xx = (np.arange(w) - 0.5) / 2.0
    coords = np.meshgrid(yy, xx, indexing="ij")
    out = np.empty((h, w, 3))
    for c in range(3):
        out[:, :, c] = ndimage.map_coordinates(
            rgb_half[:, :, c], coords, order=1, mode="nearest")
    return out


def demosaic(mosaic, cfa: CfaLayout, binned: Optional[bool] = None) -> np.ndarray:
    """Reconstruct a full-resolution linear RGB image from a mosaic.

    EVS cells are treated as missing APS samples and in-filled first. With
    binned=True (the default whenever the layout has 2x2 single-channel
    groups), each group is averaged to a conventional Bayer grid, demosaiced
    there, and bilinearly mapped back to full resolution; binned=False
    interpolates each channel in place, exact at native sample sites.
    """
    plane = as_image(mosaic)
    h, w = plane.shape
    cfa.validate_dims(h, w)
    groups = cfa.quad_group_channels()
    if binned is None:
        binned = groups is not None
    if binned and groups is None:
        raise LayoutError("binned demosaic needs 2x2 single-channel groups")

    plane = _infill_evs_cells(plane, cfa)
    if not binned:
        channel_pattern = cfa.infill_map(h, w)
        return _demosaic_full(plane, channel_pattern,
                              (cfa.block_height, cfa.block_width))

    half = _bin_quad_groups(plane)
    pattern = np.tile(groups, (h // 2 // groups.shape[0],
                               w // 2 // groups.shape[1]))
    rgb_half = _demosaic_full(half, pattern, groups.shape)
    return _upsample_2x(rgb_half, h, w)


def forward_pipeline(raw: RawFrame, aps: Optional[ApsNoiseParams],
                     config: IspConfig, cfa: Optional[CfaLayout] = None) -> np.ndarray:
    """RAW to sRGB: black-level correction, demosaic, white balance, color
    matrix, gamma and tone mapping, clipped to [0, 1]."""
    layout = cfa or raw.cfa
    if layout is None:
        raise LayoutError("forward_pipeline needs a CFA layout")
    data = raw.data.astype(float)
    h, w = data.shape
    layout.validate_dims(h, w)

    corrected = data - config.black_level
    if aps is not None:
        if aps.shape != (h, w):
            raise LayoutError("noise parameter maps do not match the frame")
        corrected = corrected - aps.n_blc - aps.n_row[:, None]
    corrected = np.maximum(corrected, 0.0)
    norm = corrected / config.dn_range

    rgb = demosaic(norm, layout, binned=None if config.quad_binning else False)
    rgb = rgb * config.wb_gains
    rgb = rgb @ config.ccm.T
    rgb = np.clip(rgb, 0.0, None)
    out = _apply_tone(_encode_gamma(rgb, config), config)
    return np.clip(out, 0.0, 1.0)
