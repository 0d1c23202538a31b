"""ODMR signal synthesis: FM drive, Lorentzian dips, detector noise."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spin import (DEFAULT_CONSTANTS, DEFAULT_ORIENTATIONS, MODELS, PhysicalConstants,
                   all_class_frequencies)


@dataclass(frozen=True)
class LineShapeParams:
    """Off-resonance level ``v0`` (V), per-line ``contrast`` and HWHM ``sigma`` (Hz)."""

    v0: float = 1.0
    contrast: float = 0.01
    sigma: float = 5e5

    def __post_init__(self):
        if not self.v0 > 0:
            raise ValueError(f"v0 must be positive, got {self.v0}")
        if not 0 < self.contrast < 1:
            raise ValueError(f"contrast must lie in (0, 1), got {self.contrast}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class ModulationParams:
    f_lo: float
    f_dev: float = 3.2e5
    f_ref: float = 1824.0
    max_f_ref: float = 2e4

    def __post_init__(self):
        if not self.f_ref > 0:
            raise ValueError(f"f_ref must be positive, got {self.f_ref}")
        if self.f_ref > self.max_f_ref:
            raise ValueError(
                f"f_ref={self.f_ref:g} Hz exceeds the NV response bandwidth bound "
                f"of {self.max_f_ref:g} Hz; lower the modulation frequency")
        if self.f_dev < 0:
            raise ValueError(f"f_dev must be non-negative, got {self.f_dev}")


@dataclass(frozen=True)
class NoiseParams:
    """Detector noise. Densities are one-sided; ``laser_rin_density`` and
    the drift are fractional and multiply the whole signal."""

    white_noise_density: float = 0.0
    laser_rin_density: float = 0.0
    drift_amplitude: float = 0.0
    drift_period: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("white_noise_density", "laser_rin_density", "drift_amplitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.drift_period > 0:
            raise ValueError("drift_period must be positive")


NOISELESS = NoiseParams()


@dataclass
class SimClock:
    sample_rate: float = 1e6
    index: int = 0

    @property
    def t(self):
        return self.index / self.sample_rate

    def check_headroom(self, f_refs):
        fmax = max(f_refs, default=0.0)
        if self.sample_rate < 20 * fmax:
            raise ValueError(
                f"sample_rate {self.sample_rate:g} is below 20x the highest f_ref ({fmax:g} Hz)")


def fm_frequency(t, m):
    """Instantaneous drive frequency in Hz."""
    return m.f_lo + m.f_dev * np.cos(2 * np.pi * m.f_ref * np.asarray(t, dtype=float))


def lorentz_dip(f, centers, sigma):
    """Sum of unit-depth Lorentzian dips; ``f`` (...,) against ``centers`` (..., L)."""
    d = np.asarray(f, dtype=float)[..., None] - centers
    s2 = sigma * sigma
    return np.sum(s2 / (d * d + s2), axis=-1)


def odmr_response(f, centers, lines):
    """Fluorescence (V) at drive frequency ``f`` for dips at ``centers`` (Hz)."""
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    return lines.v0 * (1.0 - lines.contrast * lorentz_dip(f, centers, lines.sigma))


@dataclass(frozen=True)
class Profile:
    """Time profile added to the world: ``step``, ``ramp`` or ``triangle``.

    ``amplitude`` is a 3-vector (nT) for field profiles or a scalar (K) for
    temperature profiles. A ramp rises linearly over [start, stop] and then
    holds; a triangle peaks at the midpoint and returns to zero at stop.
    """

    kind: str
    start: float
    amplitude: object
    stop: float | None = None

    def __post_init__(self):
        if self.kind not in ("step", "ramp", "triangle"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind != "step" and (self.stop is None or self.stop <= self.start):
            raise ValueError(f"{self.kind} profile needs stop > start")

    def shape(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "step":
            return (t >= self.start).astype(float)
        x = np.clip((t - self.start) / (self.stop - self.start), 0.0, 1.0)
        if self.kind == "ramp":
            return x
        return np.where(t >= self.stop, 0.0, 1.0 - np.abs(2.0 * x - 1.0))

    def breakpoints(self):
        if self.kind == "step":
            return [self.start]
        if self.kind == "ramp":
            return [self.start, self.stop]
        return [self.start, 0.5 * (self.start + self.stop), self.stop]


@dataclass
class World:
    """Ground truth seen by the sensor: bias field plus scheduled changes."""

    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt0: float = 0.0
    field_profiles: list = field(default_factory=list)
    temperature_profiles: list = field(default_factory=list)
    model: str = "linear"
    constants: PhysicalConstants = DEFAULT_CONSTANTS
    splitting: float = 2.16e6

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=float)
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")

    def field(self, t):
        t = np.asarray(t, dtype=float)
        b = np.broadcast_to(self.bias, t.shape + (3,)).copy()
        for p in self.field_profiles:
            b += p.shape(t)[..., None] * np.asarray(p.amplitude, dtype=float)
        return b

    def temperature(self, t):
        t = np.asarray(t, dtype=float)
        dt = np.full(t.shape, float(self.dt0))
        for p in self.temperature_profiles:
            dt += p.shape(t) * float(p.amplitude)
        return dt

    def transitions(self, t):
        return all_class_frequencies(self.field(t), self.temperature(t), self.model,
                                     self.constants, DEFAULT_ORIENTATIONS, self.splitting)

    def lines(self, t):
        """All 24 hyperfine line centres (Hz) at times ``t``; shape (..., 24)."""
        return self.transitions(t).all_lines()

    def breakpoints(self):
        pts = []
        for p in self.field_profiles + self.temperature_profiles:
            pts.extend(p.breakpoints())
        return sorted(set(pts))


class Synthesizer:
    """Sequential photodetector sample generator on a shared clock.

    Drives are given per block as ``(f_lo, f_dev, f_ref)`` tuples and held
    constant within the block. Line centres are evaluated at block edges
    and interpolated linearly in between; blocks are split at world
    breakpoints so steps land on the right sample.
    """

    def __init__(self, world, lines, noise=NOISELESS, sample_rate=1e6, balanced=True):
        self.world = world
        self.lines = lines
        self.noise = noise
        self.clock = SimClock(sample_rate)
        self.balanced = balanced
        self.rng = np.random.default_rng(noise.rng_seed)
        self._breaks = np.array(world.breakpoints(), dtype=float)
        self._cache = {}
        self._static = self._breaks.size == 0

    def _lines_at(self, index):
        """Line centres at one sample index; adjacent blocks share edges."""
        if self._static:
            index = 0
        hit = self._cache.get(index)
        if hit is None:
            if len(self._cache) > 8:
                self._cache.clear()
            hit = self.world.lines(np.asarray(index / self.clock.sample_rate))
            self._cache[index] = hit
        return hit

    @property
    def sample_rate(self):
        return self.clock.sample_rate

    def _line_block(self, i0, n):
        fs = self.clock.sample_rate
        if self._static:
            return self._lines_at(0)[None, :]
        # cut points: first sample index at or after each breakpoint
        all_cuts = set(np.ceil(self._breaks * fs - 1e-9).astype(np.int64).tolist())
        cuts = sorted(c for c in all_cuts if i0 < c < i0 + n)
        edges = [i0, *cuts, i0 + n]
        parts = []
        for a, b in zip(edges[:-1], edges[1:]):
            first = self._lines_at(a)
            m = b - a
            if b in all_cuts or m == 1:
                # left limit at a breakpoint: interpolate to the last sample before it
                last = self._lines_at(b - 1)
                w = np.arange(m) / max(m - 1, 1)
            else:
                last = self._lines_at(b)
                w = np.arange(m) / m
            parts.append(first + w[:, None] * (last - first))
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def block(self, n, drives):
        """Produce the next ``n`` samples (V) for the given channel drives."""
        i0 = self.clock.index
        fs = self.clock.sample_rate
        t = (i0 + np.arange(n)) / fs
        centers = self._line_block(i0, n)
        dip = np.zeros(n)
        for f_lo, f_dev, f_ref in drives:
            f = f_lo + f_dev * np.cos(2 * np.pi * f_ref * t)
            dip += lorentz_dip(f, centers, self.lines.sigma)
        v = self.lines.v0 * (1.0 - self.lines.contrast * dip)

        nz = self.noise
        if nz.white_noise_density == 0 and nz.laser_rin_density == 0:
            white = rin = np.zeros(n)
        else:
            white = self.rng.standard_normal(n)
            rin = self.rng.standard_normal(n)
        if not self.balanced:
            gain = 1.0 + nz.laser_rin_density * np.sqrt(fs / 2) * rin
            if nz.drift_amplitude:
                gain += nz.drift_amplitude * np.sin(2 * np.pi * t / nz.drift_period)
            v = v * gain
        if nz.white_noise_density:
            v = v + nz.white_noise_density * np.sqrt(fs / 2) * white
        self.clock.index += n
        return v


def check_distinct_refs(f_refs):
    seen = set()
    for f in f_refs:
        if f in seen:
            raise ValueError(f"duplicate f_ref {f:g} Hz across channels; each channel "
                             "needs its own modulation frequency")
        seen.add(f)


def synthesize_samples(duration, channels, world, lines, noise=NOISELESS,
                       clock=None, balanced=True):
    """Detector stream (V) for fixed channel drives over ``duration`` seconds."""
    clock = clock or SimClock()
    check_distinct_refs([m.f_ref for m in channels])
    clock.check_headroom([m.f_ref for m in channels])
    syn = Synthesizer(world, lines, noise, clock.sample_rate, balanced)
    syn.clock.index = clock.index
    n = int(round(duration * clock.sample_rate))
    out = syn.block(n, [(m.f_lo, m.f_dev, m.f_ref) for m in channels])
    clock.index = syn.clock.index
    return out


def write_raw(path, samples, sample_rate, duration, seed):
    """Dump samples as little-endian float64 with a ``.hdr`` text sidecar."""
    path = Path(path)
    np.asarray(samples, dtype="<f8").tofile(path)
    header = path.with_name(path.name + ".hdr")
    header.write_text(
        f"sample_rate: {sample_rate!r}\nduration: {duration!r}\nseed: {seed}\n"
        f"dtype: <f8\ncount: {len(samples)}\n")
    return path, header


def read_raw(path):
    """Inverse of :func:`write_raw`; returns ``(samples, header dict)``."""
    path = Path(path)
    meta = {}
    for line in path.with_name(path.name + ".hdr").read_text().splitlines():
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    return np.fromfile(path, dtype="<f8"), meta
