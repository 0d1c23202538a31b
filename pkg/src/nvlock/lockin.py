"""Digital lock-in amplifier with a single-pole IIR low-pass."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .odmr import LineShapeParams, lorentz_dip


class LinearizationWarning(UserWarning):
    """Modulation depth outside the small-signal validity range."""


def default_alpha(f_ref, sample_rate, corner_ratio=0.1):
    """Filter coefficient placing the -3 dB corner at ``corner_ratio * f_ref``."""
    return 1.0 - np.exp(-2 * np.pi * corner_ratio * f_ref / sample_rate)


def quantize_f_ref(f_ref, sample_rate):
    """Nearest reference frequency with a whole number of samples per period.

    Averaging the filtered output over one period then cancels every
    harmonic of the reference exactly, including the large ripple from
    the fluorescence background.
    """
    return sample_rate / max(2, int(round(sample_rate / f_ref)))


def update_alpha(alpha, n_samples):
    """Equivalent coefficient of ``n_samples`` filter steps sampled once."""
    return 1.0 - (1.0 - alpha) ** n_samples


@dataclass(frozen=True)
class LockInConfig:
    f_ref: float
    sample_rate: float
    phase: float = np.pi
    alpha: float | None = None

    def __post_init__(self):
        if self.alpha is None:
            object.__setattr__(self, "alpha", default_alpha(self.f_ref, self.sample_rate))
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.f_ref < self.sample_rate / 2:
            raise ValueError(f"f_ref must lie below Nyquist ({self.sample_rate / 2:g} Hz)")

    @property
    def samples_per_period(self):
        return self.sample_rate / self.f_ref


@dataclass(frozen=True)
class LockInState:
    in_phase: float = 0.0
    quadrature: float = 0.0
    index: int = 0


def _reference(cfg, index):
    theta = 2 * np.pi * cfg.f_ref * (np.asarray(index, dtype=float) / cfg.sample_rate) + cfg.phase
    return 2.0 * np.cos(theta), 2.0 * np.sin(theta)


def demodulate_step(state, sample, cfg):
    """Advance the lock-in by one sample; returns ``(state, (I, Q))``."""
    ref_c, ref_s = _reference(cfg, state.index)
    a = cfg.alpha
    i = (1 - a) * state.in_phase + a * sample * ref_c
    q = (1 - a) * state.quadrature + a * sample * ref_s
    return LockInState(float(i), float(q), state.index + 1), (float(i), float(q))


def demodulate_block(state, samples, cfg):
    """Vectorised :func:`demodulate_step` over a block of samples.

    Returns ``(state, I, Q)`` with the filter output at every sample.
    """
    samples = np.asarray(samples, dtype=float)
    ref_c, ref_s = _reference(cfg, state.index + np.arange(samples.size))
    a = cfg.alpha
    b, den = [a], [1.0, a - 1.0]
    i, _ = lfilter(b, den, samples * ref_c, zi=[(1 - a) * state.in_phase])
    q, _ = lfilter(b, den, samples * ref_s, zi=[(1 - a) * state.quadrature])
    if samples.size == 0:
        return state, i, q
    return LockInState(float(i[-1]), float(q[-1]), state.index + samples.size), i, q


class LockInAmplifier(TransformerMixin, BaseEstimator):
    """Transformer form of the lock-in: a sample stream in, (I, Q) out.

    ``transform`` takes an array of shape (n_samples,) or (n_samples, 1),
    starting at sample index 0, and returns an (n_samples, 2) array.
    """

    def __init__(self, f_ref=1824.0, sample_rate=1e6, phase=np.pi, alpha=None):
        self.f_ref = f_ref
        self.sample_rate = sample_rate
        self.phase = phase
        self.alpha = alpha

    def fit(self, X, y=None):
        X = check_array(np.reshape(X, (-1, 1)) if np.ndim(X) == 1 else X)
        if X.shape[1] != 1:
            raise ValueError(f"expected a single detector channel, got {X.shape[1]} columns")
        self.config_ = LockInConfig(self.f_ref, self.sample_rate, self.phase, self.alpha)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_array(np.reshape(X, (-1, 1)) if np.ndim(X) == 1 else X)
        if X.shape[1] != 1:
            raise ValueError(f"expected a single detector channel, got {X.shape[1]} columns")
        _, i, q = demodulate_block(LockInState(), X[:, 0], self.config_)
        return np.column_stack([i, q])


def small_signal_gain(lines, f_dev):
    """Static plant gain ``2 C V0 f_dev / sigma**2`` in V/Hz.

    Warns with :class:`LinearizationWarning` when ``f_dev > sigma``.
    """
    if f_dev > lines.sigma:
        warnings.warn(f"f_dev={f_dev:g} Hz exceeds sigma={lines.sigma:g} Hz; "
                      "small-signal gain is not valid", LinearizationWarning, stacklevel=2)
    return 2.0 * lines.contrast * lines.v0 * f_dev / lines.sigma ** 2


def discriminant(f_lo, centers, lines, f_dev, phase=np.pi, n_phase=256):
    """Quasi-static settled in-phase output (V) by quadrature over one period.

    Independent of the time-domain path: the settled output of a coherent
    detector equals the first Fourier coefficient of the periodic
    fluorescence, which the uniform rule evaluates to spectral accuracy.
    """
    f_lo = np.asarray(f_lo, dtype=float)
    theta = 2 * np.pi * np.arange(n_phase) / n_phase
    f = f_lo[..., None] + f_dev * np.cos(theta)
    v = lines.v0 * (1.0 - lines.contrast * lorentz_dip(f, np.asarray(centers, dtype=float),
                                                       lines.sigma))
    return np.mean(v * 2 * np.cos(theta + phase), axis=-1)


def discriminant_slope(center, centers, lines, f_dev, h=None):
    """d(in-phase)/d(line centre) at ``f_lo = center`` in V/Hz (positive)."""
    h = h or lines.sigma * 1e-3
    lo = discriminant(center - h, centers, lines, f_dev)
    hi = discriminant(center + h, centers, lines, f_dev)
    return float((lo - hi) / (2 * h))


def lock_point(center, centers, lines, f_dev):
    """Zero crossing of the discriminant nearest ``center`` (Hz).

    Differs from ``center`` when neighbouring lines pull the error signal.
    """
    half = 0.25 * lines.sigma
    return brentq(lambda f: discriminant(f, centers, lines, f_dev), center - half,
                  center + half, xtol=1e-6, rtol=1e-15)


def calibrate_phase(samples_at, cfg, delta):
    """Reference phase that maximises the in-phase slope at a resonance.

    ``samples_at(f_lo)`` must return a settled sample stream starting at
    sample index 0 for a drive at ``f_lo``; the slope is probed at
    ``center +/- delta`` through ``settled_output`` with zero phase.
    """
    zero = LockInConfig(cfg.f_ref, cfg.sample_rate, 0.0, cfg.alpha)
    lo_i, lo_q = settled_output(samples_at(-delta), zero)
    hi_i, hi_q = settled_output(samples_at(+delta), zero)
    s_i, s_q = hi_i - lo_i, hi_q - lo_q
    # in-phase slope s_i*cos(p) - s_q*sin(p) is most negative at this phase
    return float(np.arctan2(s_q, -s_i) % (2 * np.pi))


def settle_samples(cfg, lines=None, f_dev=None):
    """Samples to settle, then one averaging period: ``(n_settle, n_avg)``.

    At least 10 filter time constants. Given the line shape and depth, also
    long enough that the start-up transient (bounded by the 2*v0 mixer
    swing) falls below 1e-4 of the error-signal peak, whichever is later.
    """
    n = 10.0 / cfg.alpha
    if lines is not None and f_dev:
        # derivative-of-Lorentzian peak, about 0.65 of gain * sigma
        peak = 0.65 * small_signal_gain(lines, min(f_dev, lines.sigma)) * lines.sigma
        n = max(n, np.log(2.0 * lines.v0 / (1e-4 * peak)) / -np.log1p(-cfg.alpha))
    return int(np.ceil(n)), int(round(cfg.samples_per_period))


def settled_output(samples, cfg):
    """Average (I, Q) over the final reference period of ``samples``.

    Ripple cancels exactly when ``cfg.samples_per_period`` is an integer
    (see :func:`quantize_f_ref`).
    """
    _, i, q = demodulate_block(LockInState(), samples, cfg)
    n_avg = int(round(cfg.samples_per_period))
    return float(np.mean(i[-n_avg:])), float(np.mean(q[-n_avg:]))


def lockin_spectrum(cfg, lines, centers, f_lo, f_dev, chunk=64):
    """Settled lock-in output swept over ``f_lo`` for a noiseless stream.

    ``centers`` are the hyperfine line centres (Hz) of the static world.
    Returns ``(in_phase, quadrature)`` arrays matching ``f_lo``.
    """
    f_lo = np.asarray(f_lo, dtype=float)
    if f_lo.size > 1 and np.max(np.abs(np.diff(f_lo))) > lines.sigma / 10 * (1 + 1e-9):
        raise ValueError("sweep step must not exceed sigma/10")
    centers = np.asarray(centers, dtype=float)
    n_settle, n_avg = settle_samples(cfg, lines, f_dev)
    n = n_settle + n_avg
    k = np.arange(n)
    t = k / cfg.sample_rate
    drive = f_dev * np.cos(2 * np.pi * cfg.f_ref * t)
    ref_c, ref_s = _reference(cfg, k)
    a = cfg.alpha
    out_i = np.empty(f_lo.shape)
    out_q = np.empty(f_lo.shape)
    flat = f_lo.ravel()
    for s in range(0, flat.size, chunk):
        f = flat[s:s + chunk, None] + drive
        v = lines.v0 * (1.0 - lines.contrast * lorentz_dip(f, centers, lines.sigma))
        i = lfilter([a], [1.0, a - 1.0], v * ref_c, axis=-1)
        q = lfilter([a], [1.0, a - 1.0], v * ref_s, axis=-1)
        out_i.ravel()[s:s + chunk] = i[:, -n_avg:].mean(axis=-1)
        out_q.ravel()[s:s + chunk] = q[:, -n_avg:].mean(axis=-1)
    return out_i, out_q


def zero_crossings(f_lo, in_phase, slope="negative"):
    """Linearly interpolated zero crossings of a swept in-phase curve."""
    f_lo = np.asarray(f_lo, dtype=float)
    y = np.asarray(in_phase, dtype=float)
    a, b = y[:-1], y[1:]
    if slope == "negative":
        idx = np.nonzero((a > 0) & (b <= 0))[0]
    elif slope == "positive":
        idx = np.nonzero((a < 0) & (b >= 0))[0]
    else:
        idx = np.nonzero(np.signbit(a) != np.signbit(b))[0]
    return f_lo[idx] + (f_lo[idx + 1] - f_lo[idx]) * a[idx] / (a[idx] - b[idx])
