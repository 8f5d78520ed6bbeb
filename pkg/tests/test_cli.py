"""Command-line surface: exit codes, determinism, end-to-end smoke."""
import numpy as np

from hybridsim import formats
from hybridsim.aps_model import synthesize_raw
from hybridsim.cfa import cfa_preset
from hybridsim.cli import cli_main
from hybridsim.core import ApsNoiseParams, EvsNoiseParams, RandomKey
from hybridsim.isp import IspConfig, inverse_pipeline


def write_sim_config(path, fps, exposure_ms, period_ms, divisor=1):
    formats.write_manifest(path, {
        "input_fps": fps,
        "aps_exposure_ms": exposure_ms,
        "aps_frame_period_ms": period_ms,
        "evs_rate_divisor": divisor,
    })


def basic_calibration(tmp_path, h=32, w=32, preset="gen2",
                      beta_e=(1.0, 1.0, 0.5, 0.002, 0.3, 0.0)):
    cfa = cfa_preset(preset)
    aps = ApsNoiseParams(
        n_blc=np.zeros((h, w)), n_row=np.zeros(h), n_dp=np.zeros((h, w)),
        beta_a=np.tile(np.array([2.0, 0.01, 0.02, 0, 0, 0]),
                       (cfa.n_positions, 1)),
        bit_depth=10)
    eh, ew = cfa.evs_shape(h, w)
    evs = EvsNoiseParams.quiet(eh, ew, beta_e=np.asarray(beta_e),
                               theta_hw_mv=0.75)
    isp = IspConfig(gamma=1.0, black_level=64.0, white_level=1023.0)
    cal = formats.CalibrationData(cfa=cfa, height=h, width=w, isp=isp,
                                  aps=aps, evs=evs)
    path = tmp_path / "sensor.cal"
    formats.save_calibration(path, cal)
    return path


def write_frames(directory, frames):
    directory.mkdir(parents=True, exist_ok=True)
    for k, img in enumerate(frames):
        formats.write_image(directory / f"frame_{k:05d}.png", img)


class TestExitCodes:
    def test_missing_required_flag_is_usage_error(self, capsys):
        assert cli_main(["simulate", "--input", "x", "--out", "y"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self, capsys):
        assert cli_main(["validate", "--bogus"]) == 1

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        rc = cli_main(["isp", "--forward",
                       "--cal", str(tmp_path / "nope.cal"),
                       str(tmp_path / "in.hraw"), str(tmp_path / "out.png")])
        assert rc == 2
        assert "error" in capsys.readouterr().err


class TestSimulateCommand:
    def test_seed_reproducibility_and_thread_invariance(self, tmp_path):
        cal = basic_calibration(tmp_path)
        frames_dir = tmp_path / "frames"
        write_frames(frames_dir, [np.full((32, 32, 3), 0.5)] * 24)
        cfg = tmp_path / "sim.cfg"
        write_sim_config(cfg, fps=1000.0, exposure_ms=4.0, period_ms=4.0)

        outputs = []
        for name, threads in (("a", "1"), ("b", "8"), ("c", "1")):
            out = tmp_path / name
            rc = cli_main(["simulate", "--input", str(frames_dir),
                           "--cal", str(cal), "--config", str(cfg),
                           "--seed", "5", "--out", str(out),
                           "--threads", threads])
            assert rc == 0
            blob = b"".join(sorted_file.read_bytes() for sorted_file in
                            sorted(out.glob("*.hraw")))
            blob += (out / "events.hevt").read_bytes()
            outputs.append(blob)
        assert outputs[0] == outputs[1] == outputs[2]

    def test_different_seed_changes_output(self, tmp_path):
        cal = basic_calibration(tmp_path)
        frames_dir = tmp_path / "frames"
        write_frames(frames_dir, [np.full((32, 32, 3), 0.5)] * 8)
        cfg = tmp_path / "sim.cfg"
        write_sim_config(cfg, fps=1000.0, exposure_ms=2.0, period_ms=2.0)
        blobs = []
        for seed in ("1", "2"):
            out = tmp_path / f"s{seed}"
            assert cli_main(["simulate", "--input", str(frames_dir),
                             "--cal", str(cal), "--config", str(cfg),
                             "--seed", seed, "--out", str(out)]) == 0
            blobs.append((out / "raw_000000.hraw").read_bytes())
        assert blobs[0] != blobs[1]

    def test_manifest_written(self, tmp_path):
        cal = basic_calibration(tmp_path)
        frames_dir = tmp_path / "frames"
        write_frames(frames_dir, [np.full((32, 32, 3), 0.4)] * 6)
        cfg = tmp_path / "sim.cfg"
        write_sim_config(cfg, fps=1000.0, exposure_ms=2.0, period_ms=2.0)
        out = tmp_path / "run"
        assert cli_main(["simulate", "--input", str(frames_dir),
                         "--cal", str(cal), "--config", str(cfg),
                         "--seed", "0", "--out", str(out)]) == 0
        manifest = formats.read_manifest(out / "manifest.txt")
        assert manifest["seed"] == "0"
        assert "calibration_sha256" in manifest


class TestIspCommand:
    def test_inverse_then_forward(self, tmp_path):
        cal = basic_calibration(tmp_path)
        img = np.full((32, 32, 3), 0.5)
        formats.write_image(tmp_path / "in.png", img)
        assert cli_main(["isp", "--inverse", "--cal", str(cal),
                         str(tmp_path / "in.png"),
                         str(tmp_path / "mosaic.hplf")]) == 0
        mosaic = formats.read_plane(tmp_path / "mosaic.hplf")
        assert mosaic.shape == (32, 32)
        # quantize to a RAW frame and render forward
        raw = np.clip(np.rint(mosaic), 0, 1023).astype(np.uint16)
        from hybridsim.core import RawFrame

        formats.write_raw(tmp_path / "frame.hraw",
                          RawFrame(raw, bit_depth=10, exposure_us=1000))
        assert cli_main(["isp", "--forward", "--cal", str(cal),
                         str(tmp_path / "frame.hraw"),
                         str(tmp_path / "out.png")]) == 0
        out = formats.read_image(tmp_path / "out.png")
        assert np.abs(out - img)[2:-2, 2:-2].max() <= 2.5 / 255.0


class TestEndToEndSmoke:
    """Calibrate both paths on toolkit-generated fixtures, simulate, and
    check the validation report, mirroring a full field workflow."""

    def test_full_pipeline(self, tmp_path):
        h = w = 128
        preset = "eiger"
        cfa = cfa_preset(preset)
        isp = IspConfig(gamma=2.2, black_level=64.0, white_level=1023.0)

        # ---- ground-truth parameters the fixtures are generated from
        rng = np.random.default_rng(123)
        beta_true = np.empty((cfa.n_positions, 6))
        beta_true[:, 0] = rng.uniform(1.5, 2.5, cfa.n_positions)
        beta_true[:, 1] = rng.uniform(0.005, 0.02, cfa.n_positions)
        beta_true[:, 2] = rng.uniform(0.01, 0.05, cfa.n_positions)
        beta_true[:, 3:] = 0.0
        aps_true = ApsNoiseParams(
            n_blc=rng.uniform(58, 70, (h, w)),
            n_row=rng.uniform(-2, 2, h),
            n_dp=rng.uniform(0.05, 0.2, (h, w)),
            beta_a=beta_true, bit_depth=10)
        evs_true = np.array([1.0, 0.01, 3.0, 0.004, 0.5, 0.0])

        # ---- APS fixtures: dark + flat-field stacks written as HRAW dirs
        n_cal = 40
        frame_counter = 0
        dark_dir = tmp_path / "dark"
        dark_dir.mkdir()
        for dt in (10.0, 40.0, 80.0):
            for k in range(n_cal):
                raw = synthesize_raw(np.zeros((h, w)), dt, aps_true, cfa,
                                     RandomKey(1000, frame=frame_counter))
                formats.write_raw(dark_dir / f"d_{frame_counter:05d}.hraw", raw)
                frame_counter += 1
        illum_dir = tmp_path / "illum"
        for li, i_c in enumerate((150.0, 400.0, 800.0)):
            sub = illum_dir / f"level{li}"
            sub.mkdir(parents=True)
            for dt in (10.0, 40.0, 80.0):
                for k in range(n_cal):
                    raw = synthesize_raw(np.full((h, w), i_c), dt, aps_true,
                                         cfa, RandomKey(2000,
                                                        frame=frame_counter))
                    formats.write_raw(sub / f"w_{frame_counter:05d}.hraw", raw)
                    frame_counter += 1

        cal_path = tmp_path / "sensor.cal"
        rc = cli_main(["calibrate-aps", "--dark", str(dark_dir),
                       "--illum", str(illum_dir), "--out", str(cal_path),
                       "--cfa", preset, "--gamma", "2.2"])
        assert rc == 0
        cal = formats.load_calibration(cal_path)
        assert np.abs(cal.aps.n_dp - aps_true.n_dp).max() < 0.2

        # ---- EVS fixture: graded-brightness static scene simulated with
        # the true parameters, then calibrated back through the CLI
        eh, ew = cfa.evs_shape(h, w)
        bands = np.repeat(np.linspace(0.1, 0.9, 8), w // 8)[None, :]
        ramp_img = np.broadcast_to(bands[:, :, None], (h, w, 3)).astype(float)
        mosaic = inverse_pipeline(ramp_img, isp, cfa)
        rows, cols = cfa.evs_site_indices(h, w)
        intensity = mosaic[rows, cols].reshape(eh, ew)
        formats.write_plane(tmp_path / "intensity.hplf", intensity)

        truth_cal = formats.CalibrationData(
            cfa=cfa, height=h, width=w, isp=isp, aps=aps_true,
            evs=EvsNoiseParams.quiet(eh, ew, beta_e=evs_true,
                                     theta_hw_mv=0.75))
        truth_path = tmp_path / "truth.cal"
        formats.save_calibration(truth_path, truth_cal)

        ramp_dir = tmp_path / "ramp_frames"
        n_trials = 1200
        write_frames(ramp_dir, [ramp_img] * (n_trials + 1))
        cfg = tmp_path / "sim.cfg"
        write_sim_config(cfg, fps=1000.0, exposure_ms=500.0, period_ms=500.0)
        out_cal_run = tmp_path / "cal_run"
        assert cli_main(["simulate", "--input", str(ramp_dir),
                         "--cal", str(truth_path), "--config", str(cfg),
                         "--seed", "7", "--out", str(out_cal_run)]) == 0

        rc = cli_main(["calibrate-evs",
                       "--events", str(out_cal_run / "events.hevt"),
                       "--intensity", str(tmp_path / "intensity.hplf"),
                       "--trials", str(n_trials), "--cal", str(cal_path),
                       "--theta-mv", "0.75"])
        assert rc == 0

        # ---- validation run: fixed brightness, event rate tuned so the
        # per-pixel count histogram spans a few occupied bins
        gray = np.full((h, w, 3), 0.5)
        gray_dir = tmp_path / "gray_frames"
        n_val = 40
        write_frames(gray_dir, [gray] * (n_val + 1))
        out_val = tmp_path / "val_run"
        assert cli_main(["simulate", "--input", str(gray_dir),
                         "--cal", str(cal_path), "--config", str(cfg),
                         "--seed", "9", "--out", str(out_val)]) == 0

        gray_mosaic = inverse_pipeline(gray, cal.isp, cfa)
        gray_intensity = gray_mosaic[rows, cols].reshape(eh, ew)
        formats.write_plane(tmp_path / "gray_intensity.hplf", gray_intensity)
        report_path = tmp_path / "report.txt"
        rc = cli_main(["validate", "--events", str(out_val / "events.hevt"),
                       "--intensity", str(tmp_path / "gray_intensity.hplf"),
                       "--cal", str(cal_path), "--report", str(report_path),
                       "--trials", str(n_val)])
        assert rc == 0
        report = formats.read_manifest(report_path)
        assert float(report["log_fit_r2"]) > 0.95
