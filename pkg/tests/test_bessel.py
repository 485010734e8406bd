import numpy as np
import pytest

from flrkit.bessel import j0


def integral_oracle(x, n=8192):
    """J0(x) = (1/pi) integral_0^pi cos(x sin t) dt, periodic-trapezoid exact."""
    t = np.linspace(0.0, np.pi, n + 1)
    return np.trapezoid(np.cos(np.outer(x, np.sin(t))), t, axis=1) / np.pi


def test_matches_integral_oracle_everywhere():
    x = np.linspace(0.0, 60.0, 6001)
    assert np.abs(j0(x) - integral_oracle(x)).max() <= 1e-13


def test_series_validation_100_random_points():
    # high-precision series evaluation as the reference on the series branch
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 40
    rng = np.random.default_rng(7)
    xs = rng.uniform(0.0, 8.0, 100)
    ref = np.array([float(mp.besselj(0, mp.mpf(float(x)))) for x in xs])
    assert np.abs(j0(xs) - ref).max() <= 1e-15


def test_asymptotic_branch_accuracy():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 40
    rng = np.random.default_rng(8)
    xs = rng.uniform(8.0, 200.0, 100)
    ref = np.array([float(mp.besselj(0, mp.mpf(float(x)))) for x in xs])
    assert np.abs(j0(xs) - ref).max() <= 1e-15


def test_branch_seam_is_continuous():
    left = j0(np.nextafter(8.0, 0.0))
    right = j0(np.nextafter(8.0, 16.0))
    assert abs(left - right) <= 1e-14


def test_scalar_and_symmetry():
    assert isinstance(j0(1.5), float)
    assert j0(0.0) == 1.0
    assert j0(-3.7) == j0(3.7)
    x = np.linspace(0.0, 100.0, 10001)
    assert np.abs(j0(x)).max() <= 1.0 + 1e-15
