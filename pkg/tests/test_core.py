"""Domain types, deterministic sampling, and stack statistics."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridsim.core import (
    EVENT_DTYPE,
    ApsNoiseParams,
    EvsNoiseParams,
    FrameStack,
    RandomKey,
    RawFrame,
    empty_events,
    events_are_sorted,
    gaussian_sample,
    make_events,
    normal_field,
    sort_events,
    stack_mean_var,
    uniform_field,
)
from hybridsim.errors import (
    DomainError,
    InsufficientDataError,
    ParameterError,
)


class TestStackMeanVar:
    def test_identical_frames_zero_variance(self):
        frame = np.full((4, 4), 9.0)
        stack = FrameStack(np.stack([frame, frame]), exposure_ms=10.0)
        mean, var = stack_mean_var(stack)
        assert np.allclose(mean, 9.0)
        assert np.allclose(var, 0.0)

    def test_two_point_sample(self):
        stack = FrameStack(np.stack([np.zeros((2, 2)), np.full((2, 2), 2.0)]),
                           exposure_ms=5.0)
        mean, var = stack_mean_var(stack)
        assert np.allclose(mean, 1.0)
        assert np.allclose(var, 2.0)

    def test_monte_carlo_moments(self):
        # 1e4 Gaussian(100, 25) samples per pixel, fixed counter seed;
        # bounds are 3 standard errors of the respective estimators.
        n = 10_000
        z = normal_field(2024, 0, np.arange(n * 4, dtype=np.uint64), 0)
        frames = 100.0 + 5.0 * z.reshape(n, 2, 2)
        stack = FrameStack(frames, exposure_ms=1.0)
        mean, var = stack_mean_var(stack)
        se_mean = 5.0 / np.sqrt(n)
        se_var = 25.0 * np.sqrt(2.0 / (n - 1))
        assert np.all(np.abs(mean - 100.0) < 3 * se_mean)
        assert np.all(np.abs(var - 25.0) < 3 * se_var)
        assert np.all(np.abs(mean - 100.0) < 0.5)
        assert np.all(np.abs(var - 25.0) < 2.0)

    def test_single_frame_rejected(self):
        with pytest.raises(InsufficientDataError):
            FrameStack(np.zeros((1, 2, 2)), exposure_ms=1.0)


class TestCounterSampling:
    def test_sigma_zero_returns_mean(self):
        assert gaussian_sample(RandomKey(1), 7.0, 0.0) == 7.0

    def test_same_key_same_value(self):
        key = RandomKey(seed=9, frame=3, pixel=17, draw=2)
        a = gaussian_sample(key, 0.0, 1.0)
        b = gaussian_sample(key, 0.0, 1.0)
        assert a == b

    def test_negative_sigma_rejected(self):
        with pytest.raises(DomainError):
            gaussian_sample(RandomKey(0), 0.0, -1.0)

    def test_moments_of_million_draws(self):
        n = 1_000_000
        z = normal_field(777, 0, np.arange(n, dtype=np.uint64), 0)
        # 4-sigma chi-square bound on the sample variance and mean.
        assert abs(z.var() - 1.0) < 0.006
        assert abs(z.mean()) < 4.0 / np.sqrt(n)

    def test_order_independence(self):
        pix = np.arange(1000, dtype=np.uint64)
        forward = uniform_field(5, 1, pix, 0)
        perm = np.random.default_rng(0).permutation(1000)
        scrambled = uniform_field(5, 1, pix[perm], 0)
        assert np.array_equal(forward[perm], scrambled)

    def test_distinct_key_fields_decorrelate(self):
        pix = np.arange(64, dtype=np.uint64)
        base = uniform_field(1, 0, pix, 0)
        assert not np.array_equal(base, uniform_field(2, 0, pix, 0))
        assert not np.array_equal(base, uniform_field(1, 1, pix, 0))
        assert not np.array_equal(base, uniform_field(1, 0, pix, 1))

    def test_uniform_open_interval(self):
        u = uniform_field(3, 0, np.arange(100_000, dtype=np.uint64), 0)
        assert u.min() > 0.0
        assert u.max() < 1.0


class TestEvents:
    def test_dtype_layout(self):
        assert EVENT_DTYPE.itemsize == 13
        assert empty_events().size == 0

    def test_sorting_and_check(self):
        ev = make_events(
            t=[5, 1, 5, 1], x=[0, 3, 1, 2], y=[2, 0, 2, 0], polarity=[1, -1, 1, 1]
        )
        assert not events_are_sorted(ev)
        canon = sort_events(ev)
        assert events_are_sorted(canon)
        assert list(canon["t"]) == [1, 1, 5, 5]
        assert list(canon["x"]) == [2, 3, 0, 1]

    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 7),
                              st.integers(0, 7)), min_size=2, max_size=40))
    @settings(max_examples=100)
    def test_sort_is_canonical(self, rows):
        t = [r[0] for r in rows]
        y = [r[1] for r in rows]
        x = [r[2] for r in rows]
        ev = make_events(t=t, x=x, y=y, polarity=[1] * len(rows))
        assert events_are_sorted(sort_events(ev))


class TestRawFrame:
    def test_range_enforced(self):
        with pytest.raises(DomainError):
            RawFrame(np.array([[0, 1024]], dtype=np.int32), bit_depth=10,
                     exposure_us=1000)

    def test_exposure_ms(self):
        frame = RawFrame(np.zeros((2, 2), dtype=np.uint16), bit_depth=10,
                         exposure_us=2500)
        assert frame.exposure_ms == 2.5


class TestParamSets:
    def test_aps_zeros_shapes(self):
        params = ApsNoiseParams.zeros(8, 12, 16, bit_depth=12)
        assert params.shape == (8, 12)
        assert params.beta_a.shape == (16, 6)

    def test_aps_shape_mismatch(self):
        with pytest.raises(ParameterError):
            ApsNoiseParams(n_blc=np.zeros((4, 4)), n_row=np.zeros(3),
                           n_dp=np.zeros((4, 4)), beta_a=np.zeros((16, 6)))

    def test_evs_correlation_bound(self):
        with pytest.raises(ParameterError):
            EvsNoiseParams(theta_hw_mv=0.75,
                           beta_e=np.array([1, 1, 0, 0, 0, 1.5]),
                           mu_n=np.zeros((2, 2)),
                           bad_pixel_mask=np.zeros((2, 2), dtype=bool))

    def test_evs_theta_is_scaled_hardware_threshold(self):
        params = EvsNoiseParams.quiet(2, 2, beta_e=[2.0, 1, 0, 0, 0, 0],
                                      theta_hw_mv=0.75)
        assert params.theta == pytest.approx(1.5)
