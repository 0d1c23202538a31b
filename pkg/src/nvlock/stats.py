"""Noise statistics of field time series: Allan deviation, ASD, NEF."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import welch


def allan_deviation(y, rate, taus=None):
    """Overlapping Allan deviation of a rate-sampled series ``y``.

    ``taus`` are averaging times in seconds; by default octave spaced from
    one sample up to a tenth of the record. Returns ``(taus, adev)`` with
    taus rounded to whole samples.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n < 4:
        raise ValueError("need at least 4 samples")
    tau0 = 1.0 / rate
    if taus is None:
        m = np.unique(np.floor(2.0 ** np.arange(0, np.log2(n / 10) + 1e-9, 0.5)).astype(int))
    else:
        m = np.unique(np.maximum(1, np.round(np.asarray(taus) / tau0)).astype(int))
    m = m[(m >= 1) & (2 * m < n)]
    # phase (time-error) form: x_k = tau0 * sum(y[:k])
    x = np.concatenate([[0.0], np.cumsum(y)]) * tau0
    adev = np.empty(m.size)
    for k, mm in enumerate(m):
        d = x[2 * mm:] - 2 * x[mm:-mm] + x[:-2 * mm]
        adev[k] = np.sqrt(np.mean(d * d) / (2.0 * (mm * tau0) ** 2))
    return m * tau0, adev


def loglog_slope(x, y, weights=None):
    """Least-squares slope of log(y) against log(x), optionally weighted."""
    return float(np.polyfit(np.log(x), np.log(y), 1, w=weights)[0])


def amplitude_spectral_density(y, rate, nperseg=None):
    """One-sided ASD (units/sqrt(Hz)) by Welch's method with a Hann window."""
    y = np.asarray(y, dtype=float)
    nperseg = nperseg or min(y.size, 256)
    f, p = welch(y - np.mean(y), fs=rate, nperseg=nperseg, detrend="constant")
    return f, np.sqrt(p)


def noise_equivalent_field(y, rate, band=None, nperseg=None):
    """Median ASD over ``band`` (Hz); defaults to the lower fifth of Nyquist."""
    f, a = amplitude_spectral_density(y, rate, nperseg)
    lo, hi = band or (f[1], rate / 10.0)
    sel = (f >= lo) & (f <= hi)
    if not np.any(sel):
        raise ValueError(f"no spectral bins in band {lo:g}..{hi:g} Hz")
    return float(np.median(a[sel]))


@dataclass
class NoiseReport:
    white_noise_density: float
    rate: float
    nef: float
    adev_slope: float
    taus: np.ndarray
    adev: np.ndarray
    freqs: np.ndarray
    asd: np.ndarray
    fit_range: tuple

    def text(self):
        lo, hi = self.fit_range
        return (f"white_noise_density_v_rthz: {self.white_noise_density:.6g}\n"
                f"sample_rate_hz: {self.rate:.6g}\n"
                f"nef_nt_rthz: {self.nef:.6g}\n"
                f"allan_slope: {self.adev_slope:.4f}\n"
                f"allan_fit_tau_s: {lo:.6g} {hi:.6g}\n")


def analyze_noise(y, rate, white_noise_density=0.0, fit_min_tau=None, band=None):
    """Allan slope over the white region plus NEF for a field series (nT).

    The white region starts at ``fit_min_tau`` (default 20 samples, past
    the loop's correlation time) and ends at a tenth of the record. Points
    are weighted by sqrt(N/m), the inverse of the relative uncertainty of
    an Allan estimate averaging m of N samples.
    """
    taus, adev = allan_deviation(y, rate)
    lo = fit_min_tau if fit_min_tau is not None else 20.0 / rate
    hi = len(y) / rate / 10.0
    sel = (taus >= lo) & (taus <= hi) & (adev > 0)
    if np.count_nonzero(sel) >= 2:
        w = np.sqrt(len(y) / (taus[sel] * rate))
        slope = loglog_slope(taus[sel], adev[sel], w)
    else:
        slope = float("nan")
    f, a = amplitude_spectral_density(y, rate)
    nef = noise_equivalent_field(y, rate, band)
    return NoiseReport(white_noise_density, rate, nef, slope, taus, adev, f, a, (lo, hi))
