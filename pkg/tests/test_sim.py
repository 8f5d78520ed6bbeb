"""Simulator orchestration: timing, event generation, validation report."""
import numpy as np
import pytest

from hybridsim.cfa import cfa_preset
from hybridsim.core import ApsNoiseParams, EvsNoiseParams, empty_events, make_events
from hybridsim.errors import DomainError, FormatError
from hybridsim.isp import IspConfig
from hybridsim.numerics import q_function
from hybridsim.sim import SimConfig, ingest_frames, simulate, validate_statistics


def quiet_setup(h=16, w=16, preset="gen2", beta_e=None, theta_hw=0.75):
    cfa = cfa_preset(preset)
    aps = ApsNoiseParams.zeros(h, w, cfa.n_positions, bit_depth=12)
    eh, ew = cfa.evs_shape(h, w)
    evs = EvsNoiseParams.quiet(eh, ew, beta_e=beta_e, theta_hw_mv=theta_hw)
    isp = IspConfig(gamma=1.0, black_level=0.0, white_level=1.0)
    return cfa, aps, evs, isp


def gray_frames(values, h=16, w=16):
    return [np.full((h, w, 3), v) for v in values]


class TestIngestFrames:
    def test_timestamps_at_3200fps(self):
        config = SimConfig(input_fps=3200.0, aps_exposure_ms=1.0,
                           aps_frame_period_ms=1.0, cfa=cfa_preset("gen2"))
        frames = gray_frames([0.1, 0.2, 0.3])
        ts = [t for t, _ in ingest_frames(frames, config)]
        assert ts == [0, 312, 625]

    def test_empty_source(self):
        config = SimConfig(cfa=cfa_preset("gen2"))
        assert list(ingest_frames([], config)) == []

    def test_single_frame(self):
        config = SimConfig(cfa=cfa_preset("gen2"))
        out = list(ingest_frames(gray_frames([0.5]), config))
        assert len(out) == 1 and out[0][0] == 0

    def test_dimension_change_rejected(self):
        config = SimConfig(cfa=cfa_preset("gen2"))
        frames = [np.zeros((8, 8, 3)), np.zeros((8, 12, 3))]
        with pytest.raises(FormatError, match="changed mid-stream"):
            list(ingest_frames(frames, config))


class TestSimConfig:
    def test_exposure_beyond_period_rejected(self):
        with pytest.raises(DomainError):
            SimConfig(aps_exposure_ms=20.0, aps_frame_period_ms=10.0)

    def test_exposure_must_cover_a_frame(self):
        with pytest.raises(DomainError):
            SimConfig(input_fps=10.0, aps_exposure_ms=1.0,
                      aps_frame_period_ms=1.0)


class TestSimulate:
    def test_static_noiseless_scene(self):
        cfa, aps, evs, isp = quiet_setup()
        config = SimConfig(input_fps=1000.0, aps_exposure_ms=5.0,
                           aps_frame_period_ms=5.0, seed=3, cfa=cfa)
        result = simulate(gray_frames([0.5] * 20), config, aps, evs, isp)
        assert result.events.size == 0
        assert len(result.raw_frames) == 4
        first = result.raw_frames[0].data
        for frame in result.raw_frames[1:]:
            assert np.array_equal(frame.data, first)

    def test_brightness_doubling_single_on_event(self):
        # gamma 1 keeps the doubling exact; voltage slope only, so the
        # log-difference is ln 2 > 0.5 at every EVS pixel exactly once
        cfa, aps, evs, isp = quiet_setup(beta_e=[1.0, 1.0, 0.0, 0, 0, 0],
                                         theta_hw=0.5)
        config = SimConfig(input_fps=1000.0, aps_exposure_ms=1.0,
                           aps_frame_period_ms=1.0, seed=0, cfa=cfa)
        frames = gray_frames([0.3, 0.3, 0.6, 0.6])
        result = simulate(frames, config, aps, evs, isp)
        eh, ew = result.evs_shape
        on = result.events[result.events["p"] == 1]
        assert on.size == eh * ew
        assert result.events.size == on.size
        assert np.all(on["t"] == 2000)

    def test_brightness_halving_single_off_event(self):
        cfa, aps, evs, isp = quiet_setup(beta_e=[1.0, 1.0, 0.0, 0, 0, 0],
                                         theta_hw=0.5)
        config = SimConfig(input_fps=1000.0, aps_exposure_ms=1.0,
                           aps_frame_period_ms=1.0, seed=0, cfa=cfa)
        frames = gray_frames([0.6, 0.6, 0.3, 0.3])
        result = simulate(frames, config, aps, evs, isp)
        eh, ew = result.evs_shape
        off = result.events[result.events["p"] == -1]
        assert off.size == eh * ew
        assert result.events.size == off.size

    def test_aps_window_averages_input(self):
        # two frames per exposure window; clean DN is the window mean
        cfa, aps, evs, isp = quiet_setup()
        config = SimConfig(input_fps=1000.0, aps_exposure_ms=2.0,
                           aps_frame_period_ms=2.0, seed=0, cfa=cfa)
        isp2 = IspConfig(gamma=1.0, black_level=0.0, white_level=100.0)
        frames = gray_frames([0.2, 0.4, 0.8, 0.6])
        result = simulate(frames, config, aps, evs, isp2)
        assert len(result.raw_frames) == 2
        assert np.all(result.raw_frames[0].data == 30)
        assert np.all(result.raw_frames[1].data == 70)

    def test_determinism_and_thread_invariance(self):
        cfa, aps, evs, isp = quiet_setup(
            beta_e=[1.0, 1.0, 0.5, 0.002, 0.3, 0.0])
        frames = gray_frames([0.5] * 30)
        outs = []
        for threads in (1, 4):
            config = SimConfig(input_fps=1000.0, aps_exposure_ms=3.0,
                               aps_frame_period_ms=3.0, seed=11, cfa=cfa,
                               threads=threads)
            outs.append(simulate(frames, config, aps, evs, isp))
        a, b = outs
        assert np.array_equal(a.events, b.events)
        assert len(a.raw_frames) == len(b.raw_frames)
        for fa, fb in zip(a.raw_frames, b.raw_frames):
            assert np.array_equal(fa.data, fb.data)

    def test_events_within_time_span(self):
        cfa, aps, evs, isp = quiet_setup(
            beta_e=[1.0, 1.0, 0.5, 0.002, 0.3, 0.0])
        config = SimConfig(input_fps=1000.0, aps_exposure_ms=1.0,
                           aps_frame_period_ms=1.0, seed=5, cfa=cfa)
        result = simulate(gray_frames([0.5] * 25), config, aps, evs, isp)
        if result.events.size:
            assert result.events["t"].max() <= result.manifest["last_input_t_us"]
            assert result.events["t"].min() >= 0

    def test_static_trigger_rate_matches_model(self, q_oracle):
        # theta/sigma = 2.5 static scene; pooled two-sided rate approx
        # 2 Q(2.5) within 3 binomial sigma
        theta_over_sigma = 2.5
        sigma = 0.08
        theta = theta_over_sigma * sigma
        beta = [1.0, 0.0, 1.0, 0.0, sigma / np.sqrt(2.0), 0.0]
        cfa, aps, _, isp = quiet_setup(h=16, w=16)
        eh, ew = cfa.evs_shape(16, 16)
        evs = EvsNoiseParams.quiet(eh, ew, beta_e=beta, theta_hw_mv=theta)
        config = SimConfig(input_fps=1000.0, aps_exposure_ms=1000.0,
                           aps_frame_period_ms=1000.0, seed=21, cfa=cfa)
        n_steps = 8000
        result = simulate(gray_frames([0.5] * (n_steps + 1), 16, 16), config,
                          aps, evs, isp)
        n = n_steps * eh * ew
        rate = result.events.size / n
        expected = 2.0 * q_oracle(theta_over_sigma)
        bound = 3.0 * np.sqrt(expected * (1 - expected) / n)
        assert abs(rate - expected) < bound

    def test_evs_rate_divisor(self):
        cfa, aps, evs, isp = quiet_setup(beta_e=[1.0, 1.0, 0.0, 0, 0, 0],
                                         theta_hw=0.5)
        config = SimConfig(input_fps=1000.0, aps_exposure_ms=1.0,
                           aps_frame_period_ms=1.0, seed=0, cfa=cfa,
                           evs_rate_divisor=2)
        # doubling happens at frame 1, which the divisor-2 sampler skips;
        # the step from frame 0 to frame 2 still sees it
        frames = gray_frames([0.3, 0.6, 0.6, 0.6, 0.6])
        result = simulate(frames, config, aps, evs, isp)
        eh, ew = result.evs_shape
        assert result.events.size == eh * ew
        assert np.all(result.events["t"] == 2000)

    def test_on_event_baseline_conservation(self):
        # integrator baseline: over a closed brightness excursion with
        # sub-threshold steps, |net events| <= |total log change|/theta + 1
        cfa, aps, _, isp = quiet_setup(h=8, w=8)
        eh, ew = cfa.evs_shape(8, 8)
        theta = 0.08
        evs = EvsNoiseParams.quiet(eh, ew, beta_e=[1.0, 1.0, 0.0, 0, 0, 0],
                                   theta_hw_mv=theta)
        up = np.exp(np.linspace(np.log(0.3), np.log(0.75), 15))
        values = np.concatenate([up, up[::-1][1:]])
        config = SimConfig(input_fps=1000.0, aps_exposure_ms=1.0,
                           aps_frame_period_ms=1.0, seed=0, cfa=cfa,
                           baseline="on-event")
        result = simulate(gray_frames(list(values), 8, 8), config, aps, evs, isp)
        net = int(np.sum(result.events["p"]))
        assert abs(net) <= eh * ew  # |delta log| = 0, bound is 1 per pixel

    def test_per_step_symmetric_excursion_nets_zero(self):
        cfa, aps, _, isp = quiet_setup(h=8, w=8)
        eh, ew = cfa.evs_shape(8, 8)
        evs = EvsNoiseParams.quiet(eh, ew, beta_e=[1.0, 1.0, 0.0, 0, 0, 0],
                                   theta_hw_mv=0.2)
        up = np.exp(np.linspace(np.log(0.3), np.log(0.75), 4))
        values = np.concatenate([up, up[::-1][1:]])
        config = SimConfig(input_fps=1000.0, aps_exposure_ms=1.0,
                           aps_frame_period_ms=1.0, seed=0, cfa=cfa)
        result = simulate(gray_frames(list(values), 8, 8), config, aps, evs, isp)
        assert int(np.sum(result.events["p"])) == 0


class TestValidateStatistics:
    def test_zero_events(self):
        report = validate_statistics(empty_events(), np.full((4, 4), 100.0),
                                     None, n_trials=100)
        assert report.probability.max() == 0.0
        assert report.total_on == 0

    def test_binomial_synthetic_log_histogram(self):
        # independent binomial counts at uniform small rate: log-scale
        # histogram of per-pixel totals is near linear
        rng = np.random.default_rng(0)
        eh = ew = 96
        n_trials = 1000
        p = 1.5e-4
        on = rng.binomial(n_trials, p, (eh, ew))
        off = rng.binomial(n_trials, p, (eh, ew))
        ys, xs = np.mgrid[0:eh, 0:ew]
        t_list, x_list, y_list, p_list = [], [], [], []
        for (count, pol) in ((on, 1), (off, -1)):
            for rep in range(count.max()):
                sel = count > rep
                n_sel = int(sel.sum())
                t_list.append(np.full(n_sel, rep, dtype=np.uint64))
                x_list.append(xs[sel].astype(np.uint16))
                y_list.append(ys[sel].astype(np.uint16))
                p_list.append(np.full(n_sel, pol, dtype=np.int8))
        events = make_events(t=np.concatenate(t_list),
                             x=np.concatenate(x_list),
                             y=np.concatenate(y_list),
                             polarity=np.concatenate(p_list))
        report = validate_statistics(events, np.full((eh, ew), 200.0), None,
                                     n_trials=n_trials)
        assert report.log_fit_r2 > 0.95
        assert report.log_fit_slope < 0

    def test_brightness_bins_follow_model_ordering(self):
        # a quantile curve decreasing in intensity means brighter pixels
        # trigger more often; the per-bin mean probability must increase
        from hybridsim.evs_calib import trigger_quantile_curve

        beta = np.array([1.0, 0.01, 2.0, 0.004, 0.5, 0.1])
        theta_hw = 0.75
        lo, hi = 100.0, 900.0
        y_lo = trigger_quantile_curve(beta, theta_hw, lo)
        y_hi = trigger_quantile_curve(beta, theta_hw, hi)
        assert y_hi < y_lo  # oracle: curve decreases over this range
        p_lo, p_hi = q_function(y_lo), q_function(y_hi)

        rng = np.random.default_rng(5)
        eh = ew = 32
        n_trials = 4000
        brightness = np.where(np.arange(ew)[None, :] < ew // 2, lo, hi)
        brightness = np.broadcast_to(brightness, (eh, ew)).astype(float)
        prob = np.where(brightness == lo, p_lo, p_hi)
        on = rng.binomial(n_trials, prob)
        off = rng.binomial(n_trials, prob)
        ys, xs = np.mgrid[0:eh, 0:ew]
        counts = on + off
        reps = []
        for rep in range(counts.max()):
            sel = counts > rep
            reps.append(make_events(
                t=np.full(int(sel.sum()), rep, dtype=np.uint64),
                x=xs[sel].astype(np.uint16), y=ys[sel].astype(np.uint16),
                polarity=np.ones(int(sel.sum()), dtype=np.int8)))
        events = np.concatenate(reps)
        report = validate_statistics(events, brightness, None,
                                     n_trials=n_trials, n_bins=2)
        assert report.brightness_bin_probability[1] > \
            report.brightness_bin_probability[0]
