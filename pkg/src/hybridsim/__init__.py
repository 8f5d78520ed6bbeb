"""Noise modeling, calibration, and simulation for hybrid APS/EVS sensors."""

from .cfa import CfaLayout, cfa_preset
from .core import (
    ApsNoiseParams,
    EventRecord,
    EvsNoiseParams,
    FrameStack,
    RandomKey,
    RawFrame,
    gaussian_sample,
    stack_mean_var,
)
from .numerics import (
    FitConfig,
    FitResult,
    fit_linear_least_squares,
    fit_nonlinear_gd,
    q_function,
    q_inverse,
)
from .isp import IspConfig, demosaic, forward_pipeline, inverse_pipeline
from .aps_model import aps_variance, synthesize_raw
from .aps_calib import DarkCalibration, calibrate_dark, calibrate_variance
from .evs_model import (
    intensity_to_voltage,
    noise_moments,
    step_events,
    trigger_probabilities,
)
from .evs_calib import (
    EventCountObservation,
    build_bad_pixel_mask,
    estimate_mu_offsets,
    fit_evs_params,
    trigger_quantile_curve,
)
from .sim import SimConfig, SimOutput, ingest_frames, simulate, validate_statistics
from .formats import CalibrationData, load_calibration, save_calibration

__version__ = "0.1.0"

__all__ = [
    "ApsNoiseParams", "CalibrationData", "CfaLayout", "DarkCalibration",
    "EventCountObservation", "EventRecord", "EvsNoiseParams", "FitConfig",
    "FitResult", "FrameStack", "IspConfig", "RandomKey", "RawFrame",
    "SimConfig", "SimOutput", "aps_variance", "build_bad_pixel_mask",
    "calibrate_dark", "calibrate_variance", "cfa_preset", "demosaic",
    "estimate_mu_offsets", "fit_evs_params", "fit_linear_least_squares",
    "fit_nonlinear_gd", "forward_pipeline", "gaussian_sample",
    "ingest_frames", "intensity_to_voltage", "inverse_pipeline",
    "load_calibration", "noise_moments", "q_function", "q_inverse",
    "save_calibration", "simulate", "stack_mean_var", "step_events",
    "synthesize_raw", "trigger_probabilities", "trigger_quantile_curve",
    "validate_statistics",
]
