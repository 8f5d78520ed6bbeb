"""Simulator orchestration: frame ingest, synchronized RAW and event
synthesis, and statistical validation of event output.

A high-frame-rate input sequence drives both paths from one shared clean
signal: the inverse ISP renders each frame to the clean mosaic, APS frames
average the mosaics inside each exposure window before noise synthesis,
and the EVS path differences consecutive samples of the embedded event
pixels in the log-voltage domain.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .aps_model import synthesize_raw
from .cfa import CfaLayout, cfa_preset
from .core import (
    ApsNoiseParams,
    EvsNoiseParams,
    RandomKey,
    RawFrame,
    empty_events,
    make_events,
)
from .errors import DomainError, FormatError, LayoutError
from .evs_model import intensity_to_voltage, noise_moments, step_events
from .isp import IspConfig, inverse_pipeline
from .numerics import fit_linear_least_squares, q_function
from . import formats

_APS_DRAW = 0
_EVS_DRAW = 1


@dataclass(frozen=True)
class SimConfig:
    """Timing and reproducibility settings for one simulation run."""

    input_fps: float = 3200.0
    aps_exposure_ms: float = 10.0
    aps_frame_period_ms: float = 10.0
    evs_rate_divisor: int = 1
    seed: int = 0
    cfa: CfaLayout = field(default_factory=lambda: cfa_preset("gen2"))
    baseline: str = "per-step"  # or "on-event"
    threads: int = 1

    def __post_init__(self):
        if self.input_fps <= 0:
            raise DomainError("input_fps must be positive")
        if self.aps_exposure_ms <= 0 or \
                self.aps_exposure_ms > self.aps_frame_period_ms:
            raise DomainError("need 0 < exposure <= frame period")
        if self.input_fps * self.aps_exposure_ms / 1000.0 < 1.0:
            raise DomainError("exposure must cover at least one input frame")
        if self.evs_rate_divisor < 1:
            raise DomainError("evs_rate_divisor must be >= 1")
        if self.baseline not in ("per-step", "on-event"):
            raise DomainError("baseline must be 'per-step' or 'on-event'")
        if self.threads < 1:
            raise DomainError("threads must be >= 1")


def ingest_frames(source, config: SimConfig) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (timestamp_us, rgb image in [0, 1]) at the configured rate.

    Accepts a directory of numbered PNG/PPM frames or any sequence of
    arrays. Timestamps are round(k * 1e6 / fps) microseconds.
    """
    if isinstance(source, (str, Path)):
        frames: Iterable = _frame_files(Path(source))
    else:
        frames = source
    shape = None
    for k, item in enumerate(frames):
        if isinstance(item, (str, Path)):
            try:
                img = formats.read_image(item)
            except OSError as exc:
                raise FormatError(f"frame {k} ({item}): unreadable: {exc}")
        else:
            img = np.asarray(item, dtype=float)
        if img.ndim != 3 or img.shape[2] != 3:
            raise FormatError(f"frame {k}: expected an (h, w, 3) image")
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise FormatError(
                f"frame {k}: dimensions {img.shape[:2]} changed mid-stream "
                f"(first frame was {shape[:2]})"
            )
        t_us = int(round(k * 1_000_000.0 / config.input_fps))
        yield t_us, img


def _frame_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise FormatError(f"{directory}: not a directory of frames")
    files = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in (".png", ".ppm", ".pnm"))
    return files


@dataclass
class SimOutput:
    raw_frames: list[RawFrame]
    raw_timestamps_us: list[int]
    events: np.ndarray
    evs_shape: tuple[int, int]
    manifest: dict


def simulate(source, config: SimConfig, aps: ApsNoiseParams,
             evs: EvsNoiseParams, isp: IspConfig) -> SimOutput:
    """Run the full pipeline over an input sequence.

    Outputs are a deterministic function of (source, config, parameters):
    every random draw is keyed by (seed, stream index, pixel), so thread
    count cannot change results.
    """
    cfa = config.cfa
    evs_shape: Optional[tuple[int, int]] = None
    evs_rows = evs_cols = None

    exposure_us = config.aps_exposure_ms * 1000.0
    period_us = config.aps_frame_period_ms * 1000.0

    raw_frames: list[RawFrame] = []
    raw_times: list[int] = []
    acc: Optional[np.ndarray] = None
    acc_count = 0
    window = 0  # index of the exposure window being accumulated

    v_prev: Optional[np.ndarray] = None
    ref_log: Optional[np.ndarray] = None
    event_chunks: list[np.ndarray] = []
    theta = evs.theta
    last_t = 0
    n_inputs = 0

    def clean_of(img: np.ndarray) -> np.ndarray:
        return inverse_pipeline(img, isp, cfa)

    stream = ingest_frames(source, config)
    if config.threads > 1:
        mosaics = _threaded_map(stream, clean_of, config.threads)
    else:
        mosaics = ((t, clean_of(img)) for t, img in stream)

    for idx, (t_us, mosaic) in enumerate(mosaics):
        n_inputs += 1
        last_t = t_us
        if evs_shape is None:
            h, w = mosaic.shape
            if aps.shape != (h, w):
                raise LayoutError("APS parameter maps do not match the input")
            evs_shape = cfa.evs_shape(h, w)
            if cfa.has_evs:
                evs_rows, evs_cols = cfa.evs_site_indices(h, w)
                if evs.mu_n.shape != evs_shape:
                    raise LayoutError("EVS parameter maps do not match the input")

        # APS: accumulate within [window*period, window*period + exposure)
        while t_us >= window * period_us + exposure_us:
            if acc is not None and acc_count > 0:
                raw_frames.append(synthesize_raw(
                    acc / acc_count, config.aps_exposure_ms, aps, cfa,
                    RandomKey(config.seed, frame=len(raw_frames),
                              draw=_APS_DRAW)))
                raw_times.append(int(round(window * period_us + exposure_us)))
            acc = None
            acc_count = 0
            window += 1
        if window * period_us <= t_us < window * period_us + exposure_us:
            acc = mosaic.copy() if acc is None else acc + mosaic
            acc_count += 1

        # EVS: difference consecutive sampling instants
        if cfa.has_evs and idx % config.evs_rate_divisor == 0:
            i_c = mosaic[evs_rows, evs_cols].reshape(evs_shape)
            v_curr = intensity_to_voltage(i_c, evs)
            if v_prev is not None:
                if config.baseline == "per-step":
                    chunk = step_events(v_prev, v_curr, i_c, evs, theta, t_us,
                                        RandomKey(config.seed, frame=idx,
                                                  draw=_EVS_DRAW))
                else:
                    chunk, ref_log = _on_event_step(
                        v_prev, v_curr, i_c, evs, theta, t_us, ref_log,
                        RandomKey(config.seed, frame=idx, draw=_EVS_DRAW))
                if chunk.size:
                    event_chunks.append(chunk)
            elif config.baseline == "on-event":
                ref_log = np.log(v_curr)
            v_prev = v_curr

    if acc is not None and acc_count > 0:
        raw_frames.append(synthesize_raw(
            acc / acc_count, config.aps_exposure_ms, aps, cfa,
            RandomKey(config.seed, frame=len(raw_frames), draw=_APS_DRAW)))
        raw_times.append(int(round(window * period_us + exposure_us)))

    events = (np.concatenate(event_chunks) if event_chunks else empty_events())
    manifest = {
        "input_frames": n_inputs,
        "input_fps": config.input_fps,
        "aps_exposure_ms": config.aps_exposure_ms,
        "aps_frame_period_ms": config.aps_frame_period_ms,
        "evs_rate_divisor": config.evs_rate_divisor,
        "baseline": config.baseline,
        "seed": config.seed,
        "cfa": cfa.name,
        "evs_sites_in_raw": "synthesized-with-nearest-position-coefficients",
        "last_input_t_us": last_t,
    }
    return SimOutput(raw_frames=raw_frames, raw_timestamps_us=raw_times,
                     events=events, evs_shape=evs_shape or (0, 0),
                     manifest=manifest)


def _threaded_map(stream, func, threads: int):
    """Apply func to the image of each (t, img) pair with a bounded pool,
    preserving order so outputs are identical to the serial path."""
    def worker(item):
        t, img = item
        return t, func(img)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        batch: list = []
        for item in stream:
            batch.append(pool.submit(worker, item))
            if len(batch) >= 4 * threads:
                yield batch.pop(0).result()
        for fut in batch:
            yield fut.result()


def _on_event_step(v_prev, v_curr, i_c, evs: EvsNoiseParams, theta: float,
                   t_us: int, ref_log: np.ndarray, key: RandomKey):
    """Integrator baseline: compare against a reference that moves by one
    threshold per emitted event, so sub-threshold drift accumulates."""
    mu, sigma = noise_moments(v_prev, v_curr, i_c, evs)
    h, w = v_curr.shape
    from .core import normal_field

    noise = mu + sigma * normal_field(
        key.seed, key.frame, np.arange(h * w, dtype=np.uint64),
        key.draw).reshape(h, w)
    dv = np.log(v_curr) - ref_log + noise
    live = ~evs.bad_pixel_mask
    on = (dv > theta) & live
    off = (dv < -theta) & live
    ref_log = ref_log + theta * on - theta * off
    ys, xs = np.nonzero(on | off)
    polarity = np.where(on[ys, xs], 1, -1).astype(np.int8)
    chunk = make_events(t=np.full(ys.size, t_us, dtype=np.uint64),
                        x=xs.astype(np.uint16), y=ys.astype(np.uint16),
                        polarity=polarity)
    return chunk, ref_log


# -- statistical validation -----------------------------------------------------


@dataclass
class ValidationReport:
    """Per-pixel event statistics of a static-scene stream plus the
    log-histogram linearity fit and brightness binning."""

    n_trials: int
    on_counts: np.ndarray
    off_counts: np.ndarray
    probability: np.ndarray        # (n+ + n-) / (2 N), the averaged-polarity rate
    expected_probability: Optional[np.ndarray]
    histogram_counts: np.ndarray   # pixels with k total events, k = 0..max
    log_fit_slope: float
    log_fit_r2: float
    brightness_bin_edges: np.ndarray
    brightness_bin_probability: np.ndarray
    on_off_correlation: float
    total_on: int
    total_off: int

    def summary_lines(self) -> list[str]:
        lines = [
            f"trials = {self.n_trials}",
            f"total_on = {self.total_on}",
            f"total_off = {self.total_off}",
            f"mean_probability = {float(self.probability.mean()):.6g}",
            f"log_fit_slope = {self.log_fit_slope:.6g}",
            f"log_fit_r2 = {self.log_fit_r2:.6g}",
            f"on_off_correlation = {self.on_off_correlation:.6g}",
        ]
        for lo, hi, p in zip(self.brightness_bin_edges[:-1],
                             self.brightness_bin_edges[1:],
                             self.brightness_bin_probability):
            lines.append(f"bin [{lo:.4g}, {hi:.4g}) mean_probability = {p:.6g}")
        return lines


def validate_statistics(events: np.ndarray, brightness_map: np.ndarray,
                        expected: Optional[EvsNoiseParams], n_trials: int,
                        n_bins: int = 8) -> ValidationReport:
    """Summarize a static-scene event stream against the trigger model."""
    eh, ew = brightness_map.shape
    on_counts = np.zeros((eh, ew), dtype=np.int64)
    off_counts = np.zeros((eh, ew), dtype=np.int64)
    if events.size:
        flat = events["y"].astype(np.int64) * ew + events["x"].astype(np.int64)
        on_counts = np.bincount(flat[events["p"] > 0], minlength=eh * ew)
        off_counts = np.bincount(flat[events["p"] < 0], minlength=eh * ew)
        on_counts = on_counts.reshape(eh, ew)
        off_counts = off_counts.reshape(eh, ew)
    total = on_counts + off_counts
    probability = total / (2.0 * max(n_trials, 1))

    expected_probability = None
    if expected is not None:
        from .evs_calib import trigger_quantile_curve

        y_model = trigger_quantile_curve(expected.beta_e, expected.theta_hw_mv,
                                         brightness_map)
        expected_probability = q_function(y_model)

    hist = np.bincount(total.ravel())
    slope, r2 = _log_histogram_fit(hist)

    edges = np.linspace(brightness_map.min(), brightness_map.max() + 1e-9,
                        n_bins + 1)
    bin_prob = np.zeros(n_bins)
    which = np.digitize(brightness_map.ravel(), edges) - 1
    which = np.clip(which, 0, n_bins - 1)
    flat_p = probability.ravel()
    for b in range(n_bins):
        sel = which == b
        bin_prob[b] = flat_p[sel].mean() if np.any(sel) else 0.0

    if events.size and on_counts.std() > 0 and off_counts.std() > 0:
        corr = float(np.corrcoef(on_counts.ravel(), off_counts.ravel())[0, 1])
    else:
        corr = 0.0

    return ValidationReport(
        n_trials=n_trials, on_counts=on_counts, off_counts=off_counts,
        probability=probability, expected_probability=expected_probability,
        histogram_counts=hist, log_fit_slope=slope, log_fit_r2=r2,
        brightness_bin_edges=edges, brightness_bin_probability=bin_prob,
        on_off_correlation=corr, total_on=int(on_counts.sum()),
        total_off=int(off_counts.sum()))


def _log_histogram_fit(hist: np.ndarray, min_count: int = 5
                       ) -> tuple[float, float]:
    """Linear fit of log pixel-frequency against the event count, over bins
    populated well enough for the log to be stable."""
    ks = np.nonzero(hist >= min_count)[0]
    if ks.size < 3:
        return 0.0, 0.0
    y = np.log(hist[ks].astype(float))
    design = np.stack([np.ones_like(ks, dtype=float), ks.astype(float)],
                      axis=1)
    res = fit_linear_least_squares(design, y)
    pred = design @ res.coefficients
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(res.coefficients[1]), r2
