import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvlock.stats import (allan_deviation, amplitude_spectral_density, analyze_noise,
                          loglog_slope, noise_equivalent_field)


def test_allan_white_noise_slope_and_level():
    rng = np.random.default_rng(11)
    rate, s = 100.0, 2.0
    y = s * rng.standard_normal(200_000)
    taus, adev = allan_deviation(y, rate)
    # white frequency noise: adev(tau) = s / sqrt(tau * rate)
    short = taus * rate <= 2000  # long taus have too few independent averages
    assert np.allclose(adev[short], s / np.sqrt(taus[short] * rate), rtol=0.1)
    assert loglog_slope(taus, adev) == pytest.approx(-0.5, abs=0.03)


def test_allan_constant_is_zero():
    taus, adev = allan_deviation(np.full(1000, 3.0), 10.0)
    assert np.allclose(adev, 0.0, atol=1e-12)
    assert taus[0] == pytest.approx(0.1)


def test_allan_linear_drift_slope_plus_one():
    y = np.arange(10_000) * 1e-3
    taus, adev = allan_deviation(y, 1.0)
    assert loglog_slope(taus, adev) == pytest.approx(1.0, abs=0.01)


def test_allan_explicit_taus_rounded_to_samples():
    taus, _ = allan_deviation(np.random.default_rng(0).standard_normal(1000), 10.0,
                              taus=[0.1, 0.24, 1.0, 1000.0])
    assert np.allclose(taus, [0.1, 0.2, 1.0])


def test_allan_needs_samples():
    with pytest.raises(ValueError):
        allan_deviation([1.0, 2.0], 1.0)


def test_allan_matches_direct_definition():
    rng = np.random.default_rng(3)
    y = rng.standard_normal(500)
    m = 5
    avg = np.convolve(y, np.ones(m) / m, mode="valid")
    direct = np.sqrt(0.5 * np.mean((avg[m:] - avg[:-m]) ** 2))
    taus, adev = allan_deviation(y, 1.0, taus=[m])
    assert adev[0] == pytest.approx(direct, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 10_000))
def test_asd_of_white_noise_is_flat(s, seed):
    rng = np.random.default_rng(seed)
    rate = 1000.0
    y = s * rng.standard_normal(50_000)
    f, a = amplitude_spectral_density(y, rate)
    # one-sided density of white noise with variance s^2: s * sqrt(2 / rate)
    band = (f > 10) & (f < 400)
    assert np.median(a[band]) == pytest.approx(s * np.sqrt(2 / rate), rel=0.1)


def test_nef_linear_in_amplitude():
    rng = np.random.default_rng(5)
    y = rng.standard_normal(40_000)
    a = noise_equivalent_field(y, 500.0)
    assert noise_equivalent_field(3 * y, 500.0) == pytest.approx(3 * a, rel=1e-12)


def test_nef_band_errors():
    with pytest.raises(ValueError):
        noise_equivalent_field(np.ones(1000) + np.arange(1000), 10.0, band=(100.0, 200.0))


def test_analyze_noise_report():
    rng = np.random.default_rng(9)
    y = rng.standard_normal(100_000)
    rep = analyze_noise(y, 1000.0, 1e-6)
    assert rep.adev_slope == pytest.approx(-0.5, abs=0.05)
    assert rep.nef == pytest.approx(np.sqrt(2 / 1000.0), rel=0.1)
    text = rep.text()
    assert "allan_slope: " in text and "nef_nt_rthz: " in text
    lo, hi = rep.fit_range
    assert lo == pytest.approx(0.02) and hi == pytest.approx(10.0)


def test_analyze_noise_short_series_has_nan_slope():
    rep = analyze_noise(np.random.default_rng(1).standard_normal(60), 1.0, fit_min_tau=50.0)
    assert np.isnan(rep.adev_slope)
