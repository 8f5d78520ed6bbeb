"""Shared domain types and the deterministic random-sampling contract.

Images are plain 2-D float64 arrays in linear digital numbers (DN); the
composite records below wrap them with the metadata the pipelines need.
Random draws are counter based: a (seed, frame, pixel, draw) key maps to one
value through a mixing function, so parallel and serial evaluation of the
same simulation are bit identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cfa import CfaLayout
from .errors import DomainError, InsufficientDataError, ParameterError
from .numerics import _norm_ppf_initial

# -- events -----------------------------------------------------------------

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")])


class EventRecord(NamedTuple):
    """One event: timestamp (microseconds), EVS-grid coordinates, polarity."""

    t: int
    x: int
    y: int
    polarity: int


def empty_events() -> np.ndarray:
    return np.empty(0, dtype=EVENT_DTYPE)


def make_events(t, x, y, polarity) -> np.ndarray:
    ev = np.empty(len(np.atleast_1d(t)), dtype=EVENT_DTYPE)
    ev["t"] = t
    ev["x"] = x
    ev["y"] = y
    ev["p"] = polarity
    return ev


def sort_events(events: np.ndarray) -> np.ndarray:
    """Canonical stream order: by t, ties broken by (y, x)."""
    order = np.lexsort((events["x"], events["y"], events["t"]))
    return events[order]


def events_are_sorted(events: np.ndarray) -> bool:
    if events.size < 2:
        return True
    t, y, x = (events["t"].astype(np.int64), events["y"].astype(np.int64),
               events["x"].astype(np.int64))
    key = (t[1:] - t[:-1], y[1:] - y[:-1], x[1:] - x[:-1])
    ahead = (key[0] > 0) | ((key[0] == 0) & ((key[1] > 0) |
                                             ((key[1] == 0) & (key[2] >= 0))))
    return bool(np.all(ahead))


# -- counter-based random sampling -------------------------------------------

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


@dataclass(frozen=True)
class RandomKey:
    """Stream coordinates of one deterministic draw.

    Identical keys always yield identical samples, independent of evaluation
    order or thread count.
    """

    seed: int
    frame: int = 0
    pixel: int = 0
    draw: int = 0


def uniform_field(seed: int, frame: int, pixels, draw: int = 0) -> np.ndarray:
    """Open-interval (0, 1) uniforms, one per pixel index.

    The scalar key fields are folded into a hash base first so only one
    array-wide mixing pass is needed per call.
    """
    pix = np.asarray(pixels, dtype=np.uint64)
    base = _mix64(np.asarray([seed], dtype=np.uint64))
    base = _mix64(base ^ _U64(frame & 0xFFFFFFFFFFFFFFFF))
    base = _mix64(base ^ _U64(draw & 0xFFFFFFFFFFFFFFFF))
    h = _mix64(base ^ pix)
    return ((h >> _U64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal_field(seed: int, frame: int, pixels, draw: int = 0) -> np.ndarray:
    """Standard normal draws via the inverse-quantile transform.

    Uses the rational quantile approximation directly: its error (~1e-9 in
    the quantile) is orders of magnitude below any sampling-error bound, and
    skipping the Newton polish keeps bulk synthesis fast.
    """
    u = uniform_field(seed, frame, pixels, draw)
    return _norm_ppf_initial(u)


def gaussian_sample(key: RandomKey, mean: float, sigma: float) -> float:
    """One deterministic N(mean, sigma^2) draw for the given key."""
    if not np.isfinite(mean) or not np.isfinite(sigma):
        raise DomainError("gaussian_sample requires finite mean and sigma")
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    z = normal_field(key.seed, key.frame, [key.pixel], key.draw)[0]
    return float(mean + sigma * z)


# -- frames and stacks --------------------------------------------------------


def as_image(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2:
        raise DomainError("image planes must be 2-D")
    if not np.all(np.isfinite(arr)):
        raise DomainError("image planes must be finite")
    return arr


@dataclass(frozen=True)
class RawFrame:
    """Quantized sensor readout in integer DN."""

    data: np.ndarray
    bit_depth: int
    exposure_us: int
    cfa: CfaLayout | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DomainError("RawFrame data must be 2-D")
        if not np.issubdtype(data.dtype, np.integer):
            raise DomainError("RawFrame data must be integer DN")
        if not 1 <= self.bit_depth <= 16:
            raise DomainError("bit_depth must be in 1..16")
        if self.exposure_us <= 0:
            raise DomainError("exposure must be positive")
        if data.size and (data.min() < 0 or data.max() >= (1 << self.bit_depth)):
            raise DomainError("RawFrame data exceeds the bit depth range")
        object.__setattr__(self, "data", data.astype(np.uint16))

    @property
    def exposure_ms(self) -> float:
        return self.exposure_us / 1000.0

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FrameStack:
    """Same-exposure frames of one static scene; the unit of calibration input."""

    frames: np.ndarray  # (n_frames, height, width) float DN
    exposure_ms: float
    is_dark: bool = False

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 3:
            raise DomainError("FrameStack expects an (n, h, w) array")
        if frames.shape[0] < 2:
            raise InsufficientDataError("a FrameStack needs at least 2 frames")
        if self.exposure_ms <= 0:
            raise DomainError("exposure must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]


def stack_mean_var(stack: FrameStack) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel sample mean and unbiased (n-1) sample variance."""
    if stack.n_frames < 2:
        raise InsufficientDataError("variance needs at least 2 frames")
    mean = stack.frames.mean(axis=0)
    var = stack.frames.var(axis=0, ddof=1)
    return mean, var


# -- parameter sets -----------------------------------------------------------


@dataclass(frozen=True)
class ApsNoiseParams:
    """Fixed-pattern maps plus per-position variance polynomial coefficients.

    beta_a rows follow cfa.aps_positions order; each row holds the six
    coefficients of the variance polynomial in (I_c, exposure).
    """

    n_blc: np.ndarray   # (h, w) per-pixel black-level offset, DN
    n_row: np.ndarray   # (h,) per-row offset, DN
    n_dp: np.ndarray    # (h, w) dark drift, DN per ms
    beta_a: np.ndarray  # (n_positions, 6)
    bit_depth: int = 10

    def __post_init__(self):
        n_blc = np.asarray(self.n_blc, dtype=float)
        n_row = np.asarray(self.n_row, dtype=float)
        n_dp = np.asarray(self.n_dp, dtype=float)
        beta = np.asarray(self.beta_a, dtype=float)
        if n_blc.ndim != 2 or n_dp.shape != n_blc.shape:
            raise ParameterError("n_blc and n_dp must be matching 2-D maps")
        if n_row.shape != (n_blc.shape[0],):
            raise ParameterError("n_row must have one entry per pixel row")
        if beta.ndim != 2 or beta.shape[1] != 6:
            raise ParameterError("beta_a must be (n_positions, 6)")
        if not 1 <= self.bit_depth <= 16:
            raise ParameterError("bit_depth must be in 1..16")
        object.__setattr__(self, "n_blc", n_blc)
        object.__setattr__(self, "n_row", n_row)
        object.__setattr__(self, "n_dp", n_dp)
        object.__setattr__(self, "beta_a", beta)

    @classmethod
    def zeros(cls, height: int, width: int, n_positions: int,
              bit_depth: int = 10) -> "ApsNoiseParams":
        return cls(
            n_blc=np.zeros((height, width)),
            n_row=np.zeros(height),
            n_dp=np.zeros((height, width)),
            beta_a=np.zeros((n_positions, 6)),
            bit_depth=bit_depth,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_blc.shape


@dataclass(frozen=True)
class EvsNoiseParams:
    """Trigger parameters: threshold scale, affine voltage map, noise terms.

    beta_e = (b0..b5): b0 converts the hardware threshold to model units,
    (b1, b2) map clean intensity to effective voltage, b3 is the shot-noise
    slope, b4 the dark-current sigma, and the noise correlation is -b5.
    mu_n holds the calibrated per-pixel offset of the log-difference noise.
    """

    theta_hw_mv: float
    beta_e: np.ndarray            # (6,)
    mu_n: np.ndarray              # (evs_h, evs_w)
    bad_pixel_mask: np.ndarray    # bool (evs_h, evs_w)

    def __post_init__(self):
        beta = np.asarray(self.beta_e, dtype=float)
        mu = np.asarray(self.mu_n, dtype=float)
        mask = np.asarray(self.bad_pixel_mask, dtype=bool)
        if beta.shape != (6,):
            raise ParameterError("beta_e must contain six coefficients")
        if abs(beta[5]) > 1.0:
            raise ParameterError("|beta_e[5]| must not exceed 1 (correlation)")
        if self.theta_hw_mv <= 0:
            raise ParameterError("hardware threshold must be positive")
        if mu.ndim != 2 or mask.shape != mu.shape:
            raise ParameterError("mu_n and bad_pixel_mask must be matching maps")
        object.__setattr__(self, "beta_e", beta)
        object.__setattr__(self, "mu_n", mu)
        object.__setattr__(self, "bad_pixel_mask", mask)

    @property
    def theta(self) -> float:
        """Model-unit threshold: beta_e[0] times the hardware threshold."""
        return float(self.beta_e[0] * self.theta_hw_mv)

    @classmethod
    def quiet(cls, evs_height: int, evs_width: int, beta_e=None,
              theta_hw_mv: float = 0.75) -> "EvsNoiseParams":
        beta = np.asarray(beta_e, dtype=float) if beta_e is not None else \
            np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        return cls(
            theta_hw_mv=theta_hw_mv,
            beta_e=beta,
            mu_n=np.zeros((evs_height, evs_width)),
            bad_pixel_mask=np.zeros((evs_height, evs_width), dtype=bool),
        )
