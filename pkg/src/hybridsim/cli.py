"""Command-line surface: calibrate, simulate, render, validate.

Exit codes: 0 success, 1 usage error, 2 data/processing error.
"""
from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import formats
from .aps_calib import calibrate_dark, calibrate_variance
from .cfa import cfa_preset
from .core import EvsNoiseParams, FrameStack
from .errors import HybridSimError
from .evs_calib import (
    build_bad_pixel_mask,
    estimate_mu_offsets,
    fit_evs_params,
    observations_from_counts,
)
from .isp import IspConfig, forward_pipeline, inverse_pipeline
from .sim import SimConfig, simulate, validate_statistics


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="hybridsim",
                     description="Hybrid APS/EVS sensor noise toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate-aps", help="estimate APS noise parameters")
    p.add_argument("--dark", required=True, help="directory of dark HRAW stacks")
    p.add_argument("--illum", required=True,
                   help="directory of illuminated HRAW stacks")
    p.add_argument("--out", required=True, help="calibration file to write")
    p.add_argument("--cfa", default="gen2",
                   choices=["quad_bayer", "gen2", "eiger"])
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--black-level", type=float, default=64.0)
    p.add_argument("--white-level", type=float, default=1023.0)

    p = sub.add_parser("calibrate-evs", help="estimate EVS trigger parameters")
    p.add_argument("--events", required=True, help="HEVT stream (graded scene)")
    p.add_argument("--intensity", required=True,
                   help="per-pixel clean intensity plane (HPLF)")
    p.add_argument("--trials", required=True, type=int,
                   help="number of sampling intervals in the stream")
    p.add_argument("--cal", required=True,
                   help="calibration file to update (must exist)")
    p.add_argument("--dark-events", default=None,
                   help="HEVT stream recorded in darkness (for offset map)")
    p.add_argument("--dark-trials", type=int, default=None)
    p.add_argument("--theta-mv", type=float, default=0.75,
                   help="hardware threshold in mV")
    p.add_argument("--mask-k", type=float, default=5.0)

    p = sub.add_parser("simulate", help="synthesize RAW frames and events")
    p.add_argument("--input", required=True, help="directory of input frames")
    p.add_argument("--cal", required=True)
    p.add_argument("--config", required=True, help="simulation config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="bound parallelism; never changes outputs")

    p = sub.add_parser("isp", help="forward or inverse rendering")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--forward", action="store_true")
    group.add_argument("--inverse", action="store_true")
    p.add_argument("--cal", required=True)
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("validate", help="statistical report on an event stream")
    p.add_argument("--events", required=True)
    p.add_argument("--intensity", required=True)
    p.add_argument("--cal", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--trials", type=int, default=None,
                   help="sampling intervals; inferred from timestamps if omitted")
    return parser


def _read_stack_dirs(directory: Path, is_dark: bool) -> list[FrameStack]:
    """Group HRAW files into stacks by (subdirectory, exposure)."""
    groups: dict[tuple[str, int], list] = defaultdict(list)
    files = sorted(directory.rglob("*.hraw"))
    if not files:
        raise HybridSimError(f"{directory}: no .hraw files found")
    for f in files:
        frame = formats.read_raw(f)
        groups[(str(f.parent), frame.exposure_us)].append(frame)
    stacks = []
    for (_, exposure_us), frames in sorted(groups.items()):
        data = np.stack([fr.data.astype(float) for fr in frames])
        stacks.append(FrameStack(data, exposure_ms=exposure_us / 1000.0,
                                 is_dark=is_dark))
    return stacks


def _cmd_calibrate_aps(args) -> int:
    cfa = cfa_preset(args.cfa)
    dark_stacks = _read_stack_dirs(Path(args.dark), is_dark=True)
    illum_stacks = _read_stack_dirs(Path(args.illum), is_dark=False)
    dark = calibrate_dark(dark_stacks)
    beta = calibrate_variance(illum_stacks, dark, cfa)
    h, w = dark.n_fp.shape
    sample = formats.read_raw(sorted(Path(args.dark).rglob("*.hraw"))[0])
    from .core import ApsNoiseParams

    aps = ApsNoiseParams(n_blc=dark.n_blc, n_row=dark.n_row, n_dp=dark.n_dp,
                         beta_a=beta, bit_depth=sample.bit_depth)
    isp = IspConfig(gamma=args.gamma, black_level=args.black_level,
                    white_level=args.white_level)
    cal = formats.CalibrationData(cfa=cfa, height=h, width=w, isp=isp,
                                  aps=aps)
    formats.save_calibration(args.out, cal)
    print(f"wrote {args.out}: {cfa.n_positions} position coefficient sets, "
          f"{h}x{w} fixed-pattern maps")
    return 0


def _count_events(events: np.ndarray, shape: tuple[int, int]):
    eh, ew = shape
    flat = events["y"].astype(np.int64) * ew + events["x"].astype(np.int64)
    on = np.bincount(flat[events["p"] > 0], minlength=eh * ew).reshape(eh, ew)
    off = np.bincount(flat[events["p"] < 0], minlength=eh * ew).reshape(eh, ew)
    return on, off


def _cmd_calibrate_evs(args) -> int:
    cal = formats.load_calibration(args.cal)
    events, evs_shape = formats.read_events(args.events)
    intensity = formats.read_plane(args.intensity)
    if intensity.shape != evs_shape:
        raise HybridSimError(
            f"intensity plane {intensity.shape} does not match the event "
            f"stream grid {evs_shape}"
        )
    on, off = _count_events(events, evs_shape)
    observations = observations_from_counts(on, off, intensity, args.trials)
    beta_e, diag = fit_evs_params(observations, theta_hw_mv=args.theta_mv)

    theta = float(beta_e[0] * args.theta_mv)
    if args.dark_events:
        dark_events, dark_shape = formats.read_events(args.dark_events)
        if dark_shape != evs_shape:
            raise HybridSimError("dark stream grid does not match")
        trials = args.dark_trials or args.trials
        d_on, d_off = _count_events(dark_events, evs_shape)
        dark_obs = observations_from_counts(d_on, d_off,
                                            np.zeros(evs_shape), trials)
        mu = estimate_mu_offsets(dark_obs, theta=theta, shape=evs_shape).mu_n
    else:
        mu = np.zeros(evs_shape)

    mask = build_bad_pixel_mask(observations, beta_e, args.theta_mv,
                                evs_shape, k=args.mask_k, mu_n=mu)
    cal.evs = EvsNoiseParams(theta_hw_mv=args.theta_mv, beta_e=beta_e,
                             mu_n=mu, bad_pixel_mask=mask)
    formats.save_calibration(args.cal, cal)
    print(f"updated {args.cal}: beta_e = {np.array2string(beta_e, precision=6)}, "
          f"{int(mask.sum())} bad pixels, fit converged = {diag.fit.converged}")
    return 0


def _read_sim_config(path, seed: int, threads: int, cal) -> SimConfig:
    entries = formats.read_manifest(path)
    return SimConfig(
        input_fps=float(entries.get("input_fps", 3200.0)),
        aps_exposure_ms=float(entries.get("aps_exposure_ms", 10.0)),
        aps_frame_period_ms=float(entries.get("aps_frame_period_ms", 10.0)),
        evs_rate_divisor=int(entries.get("evs_rate_divisor", 1)),
        baseline=entries.get("baseline", "per-step"),
        seed=seed,
        cfa=cal.cfa,
        threads=threads,
    )


def _cmd_simulate(args) -> int:
    cal = formats.load_calibration(args.cal)
    if cal.aps is None or cal.evs is None:
        raise HybridSimError(
            f"{args.cal}: simulation needs both APS and EVS calibration"
        )
    config = _read_sim_config(args.config, args.seed, args.threads, cal)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = simulate(args.input, config, cal.aps, cal.evs, cal.isp)
    for k, frame in enumerate(result.raw_frames):
        formats.write_raw(out_dir / f"raw_{k:06d}.hraw", frame)
    formats.write_events(out_dir / "events.hevt", result.events,
                         result.evs_shape)
    manifest = dict(result.manifest)
    manifest["calibration_sha256"] = formats.file_digest(args.cal)
    manifest["config_sha256"] = formats.file_digest(args.config)
    manifest["raw_frames"] = len(result.raw_frames)
    manifest["events"] = int(result.events.size)
    formats.write_manifest(out_dir / "manifest.txt", manifest)
    print(f"wrote {len(result.raw_frames)} RAW frames and "
          f"{result.events.size} events to {out_dir}")
    return 0


def _cmd_isp(args) -> int:
    cal = formats.load_calibration(args.cal)
    if args.inverse:
        img = formats.read_image(args.input)
        mosaic = inverse_pipeline(img, cal.isp, cal.cfa)
        formats.write_plane(args.output, mosaic)
    else:
        frame = formats.read_raw(args.input, cfa=cal.cfa)
        srgb = forward_pipeline(frame, cal.aps, cal.isp, cfa=cal.cfa)
        formats.write_image(args.output, srgb)
    print(f"wrote {args.output}")
    return 0


def _cmd_validate(args) -> int:
    cal = formats.load_calibration(args.cal)
    events, evs_shape = formats.read_events(args.events)
    intensity = formats.read_plane(args.intensity)
    if intensity.shape != evs_shape:
        raise HybridSimError("intensity plane does not match the event grid")
    if args.trials is not None:
        trials = args.trials
    else:
        trials = int(np.unique(events["t"]).size) if events.size else 0
    report = validate_statistics(events, intensity, cal.evs, trials)
    with open(args.report, "w") as f:
        f.write("\n".join(report.summary_lines()) + "\n")
    print(f"wrote {args.report}: log_fit_r2 = {report.log_fit_r2:.4f}")
    return 0


_COMMANDS = {
    "calibrate-aps": _cmd_calibrate_aps,
    "calibrate-evs": _cmd_calibrate_evs,
    "simulate": _cmd_simulate,
    "isp": _cmd_isp,
    "validate": _cmd_validate,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (HybridSimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
