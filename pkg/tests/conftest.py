"""Shared oracles and fixtures.

The quadrature oracle integrates the Gaussian tail directly and is the
reference for every Q-function assertion; it never touches the erfc-based
implementation path.
"""
import numpy as np
import pytest
from scipy import integrate


def gaussian_tail_quadrature(x: float) -> float:
    """Adaptive quadrature of the standard normal upper tail."""
    val, _ = integrate.quad(
        lambda t: np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi), x, np.inf
    )
    return val


def gaussian_tail_inverse_bisection(p: float, lo: float = -12.0,
                                    hi: float = 12.0) -> float:
    """Bisection on the quadrature oracle: x with tail(x) = p."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gaussian_tail_quadrature(mid) > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture(scope="session")
def q_oracle():
    return gaussian_tail_quadrature


@pytest.fixture(scope="session")
def q_inverse_oracle():
    return gaussian_tail_inverse_bisection


def smooth_test_image(rng: np.ndarray | int, height: int, width: int,
                      low: float = 0.22, high: float = 0.92,
                      blur_sigma: float = 12.0,
                      contrast: float = 0.12) -> np.ndarray:
    """Naturalistic smooth RGB content: blurred chroma noise plus gentle
    gradients, rescaled into [low, high] without clipping kinks."""
    from scipy import ndimage

    gen = np.random.default_rng(rng) if isinstance(rng, int) else rng
    img = gen.uniform(size=(height, width, 3))
    for c in range(3):
        img[:, :, c] = ndimage.gaussian_filter(img[:, :, c], blur_sigma,
                                               mode="nearest")
    img -= img.mean(axis=(0, 1))
    img *= contrast / max(img.std(), 1e-9)
    yy, xx = np.mgrid[0:height, 0:width]
    ramp = 0.1 * (xx / max(width - 1, 1)) + 0.08 * (yy / max(height - 1, 1))
    img += 0.5 + (ramp - 0.09)[:, :, None]
    lo, hi = img.min(), img.max()
    if lo < low or hi > high:
        img = low + (img - lo) * (high - low) / (hi - lo)
    return img
