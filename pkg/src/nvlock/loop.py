"""Frequency-locked loop: integrator feedback, z-domain analysis, and the
shared-clock simulation engine for one or more locked channels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lockin import (LockInConfig, LockInState, demodulate_block, discriminant,
                     discriminant_slope, lock_point, quantize_f_ref, update_alpha,
                     zero_crossings)
from .odmr import (NOISELESS, LineShapeParams, ModulationParams, SimClock, Synthesizer,
                   check_distinct_refs)
from .spin import DEFAULT_CONSTANTS, hyperfine_lines, hyperfine_offset

MW_BAND = (2.5e9, 3.5e9)


def integrator_step(f_lo, error, k_i, band=MW_BAND):
    """One update of the discrete integrator ``C(z) = K_I z / (z - 1)``.

    Returns ``(f_lo_new, railed)``. Positive error (drive below resonance)
    raises the drive frequency. At a band edge the output is clamped.
    """
    f_new = f_lo + k_i * error
    lo, hi = band
    if f_new < lo:
        return lo, True
    if f_new > hi:
        return hi, True
    return f_new, False


@dataclass
class LoopAnalysis:
    gain: float
    alpha: float
    k_i: float
    poles: np.ndarray
    stable: bool
    dc_gain: complex
    update_period: float
    settling_time: float

    @property
    def dominant_pole(self):
        return self.poles[np.argmax(np.abs(self.poles))]

    def report(self):
        lines = [
            f"plant gain g        : {self.gain:.6g} V/Hz",
            f"filter alpha        : {self.alpha:.6g}",
            f"integrator K_I      : {self.k_i:.6g} Hz/V",
            f"loop gain g*K_I     : {self.gain * self.k_i:.6g}",
        ]
        for p in self.poles:
            lines.append(f"pole                : {p.real:+.9f} {p.imag:+.9f}j  |z|={abs(p):.9f}")
        lines += [
            f"stable              : {self.stable}",
            f"DC gain T(1)        : {abs(self.dc_gain):.12g}",
            f"update period       : {self.update_period:.6g} s",
            f"2% settling time    : {self.settling_time:.6g} s",
        ]
        return "\n".join(lines) + "\n"


def closed_loop_polynomials(g, alpha, k_i, actuator_delay=False):
    """Numerator and denominator of T(z) in descending powers of z.

    With ``actuator_delay`` the plant carries one extra update of delay,
    ``G(z) = g*alpha / (z + alpha - 1)``, which is how a causal sampled
    loop realises the drive hold between updates.
    """
    lam = g * k_i * alpha
    if actuator_delay:
        num = np.array([0.0, lam, 0.0])
        den = np.array([1.0, alpha - 2.0 + lam, 1.0 - alpha])
    else:
        num = np.array([lam, 0.0, 0.0])
        den = np.array([1.0 + lam, alpha - 2.0, 1.0 - alpha])
    return num, den


def closed_loop_analysis(g, alpha, k_i, update_period=1.0, actuator_delay=False):
    """Poles, stability, DC gain and settling time of the integrator loop.

    The loop is ``T = G C / (1 + G C)`` with ``G(z) = g alpha z/(z+alpha-1)``
    and ``C(z) = K_I z/(z-1)``, all at the controller update rate.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    num, den = closed_loop_polynomials(g, alpha, k_i, actuator_delay)
    poles = np.roots(den)
    poles = poles[np.abs(poles) > 1e-15] if np.any(np.abs(poles) > 1e-15) else poles
    stable = bool(np.all(np.abs(poles) < 1.0))
    dc = np.polyval(num, 1.0) / np.polyval(den, 1.0)
    settling = _settling(float(np.max(np.abs(poles))), stable, update_period)
    return LoopAnalysis(g, alpha, k_i, poles, stable, dc, update_period, settling)


def _settling(r, stable, update_period):
    """2% settling time of a pole radius ``r``; at least one update."""
    if not stable:
        return math.inf
    if r <= 0.02:
        return update_period
    return update_period * math.log(0.02) / math.log(r)


def step_response(g, alpha, k_i, n, actuator_delay=False):
    """Unit-step response of T(z) over ``n`` updates."""
    from scipy.signal import lfilter
    num, den = closed_loop_polynomials(g, alpha, k_i, actuator_delay)
    return lfilter(num, den, np.ones(n))


def open_loop_linear_range(sigma, constants=DEFAULT_CONSTANTS):
    """Open-loop lock-in linear range in nT: a tenth of the linewidth over gamma."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return (2.0 * sigma / 10.0) / constants.gamma


def open_loop_readout(detuning, lines, f_dev, splitting=None):
    """Field (nT-equivalent Hz) inferred by a fixed-f_LO, scale-factor readout.

    ``detuning`` is the line shift (Hz) away from the fixed drive. The
    scale factor is the calibrated slope at zero detuning. Returns the
    inferred shift in Hz.
    """
    centers = [0.0] if splitting is None else hyperfine_lines(0.0, splitting)
    slope = discriminant_slope(0.0, centers, lines, f_dev)
    return discriminant(-np.asarray(detuning, dtype=float), centers, lines, f_dev) / slope


def open_loop_range(lines, f_dev, constants=DEFAULT_CONSTANTS, rel_tol=0.05):
    """Largest field shift (nT) read open-loop with relative error <= ``rel_tol``."""
    d = np.linspace(lines.sigma * 1e-3, 2 * lines.sigma, 20001)
    ratio = open_loop_readout(d, lines, f_dev) / d
    bad = np.nonzero(np.abs(ratio - 1.0) > rel_tol)[0]
    edge = d[bad[0] - 1] if bad.size else d[-1]
    return edge / constants.gamma


def field_from_pair(f_plus, f_minus, constants=DEFAULT_CONSTANTS, offset_plus=0.0,
                    offset_minus=0.0):
    """Invert a locked (upper, lower) pair to ``(b_nv [nT], dt [K])``.

    The offsets are the known displacements of each locked line from its
    transition centre (hyperfine offset plus any discriminant pull).
    """
    fp = np.asarray(f_plus, dtype=float) - offset_plus
    fm = np.asarray(f_minus, dtype=float) - offset_minus
    b_nv = (fp - fm) / (2.0 * constants.gamma)
    dt = (fp + fm - 2.0 * constants.delta) / (2.0 * constants.beta_t)
    return b_nv, dt


@dataclass(frozen=True)
class LockTarget:
    """Which line a channel locks: orientation class, branch (+1/-1), m_I."""

    axis: int
    branch: int
    m_i: int

    def __post_init__(self):
        if self.axis not in range(4):
            raise ValueError(f"axis must be in 0..3, got {self.axis}")
        if self.branch not in (-1, 1):
            raise ValueError(f"branch must be -1 or +1, got {self.branch}")
        if self.m_i not in (-1, 0, 1):
            raise ValueError(f"m_I must be -1, 0 or +1, got {self.m_i}")

    @property
    def index(self):
        """Position of this transition in the interleaved 8-vector."""
        return 2 * self.axis + (1 if self.branch == 1 else 0)

    def line_index(self):
        """Position of the locked line in the 24-line array."""
        # lines are (centre - A, centre, centre + A); this line sits at branch*m_I
        return 3 * self.index + self.branch * self.m_i + 1


def line_offset(target, lines, f_dev, splitting=2.16e6):
    """Displacement (Hz) of the lock point from the transition centre.

    Sum of the hyperfine offset and the pull of the two neighbouring
    hyperfine lines on the discriminant zero crossing.
    """
    hf = hyperfine_offset(target.branch, target.m_i, splitting)
    if splitting == 0:
        return hf
    triplet = hyperfine_lines(0.0, splitting)
    return lock_point(hf, triplet, lines, f_dev)


@dataclass
class ChannelConfig:
    target: LockTarget
    modulation: ModulationParams
    lockin: LockInConfig
    k_i: float
    f_lo_init: float | None = None
    offset: float = 0.0
    update_periods: int = 1

    def __post_init__(self):
        if not self.k_i > 0:
            raise ValueError(f"k_i must be positive, got {self.k_i}")
        if int(self.update_periods) != self.update_periods or self.update_periods < 1:
            raise ValueError(f"update_periods must be a positive integer, got {self.update_periods}")
        if abs(self.lockin.f_ref - self.modulation.f_ref) > 0:
            raise ValueError("lock-in and modulation reference frequencies differ")


def make_channel(target, f_ref, sample_rate, lines, f_dev=3.2e5, loop_gain=0.2,
                 k_i=None, f_lo_init=None, phase=np.pi, alpha=None, splitting=2.16e6,
                 max_f_ref=2e4, update_periods=1):
    """Channel with defaults derived from the line model.

    ``loop_gain`` is the dimensionless product g*K_I used when ``k_i`` is
    not given; g is the discriminant slope at the lock point. ``f_ref`` is
    moved to the nearest whole number of samples per period.
    """
    f_ref = quantize_f_ref(f_ref, sample_rate)
    mod = ModulationParams(f_lo=0.0, f_dev=f_dev, f_ref=f_ref, max_f_ref=max_f_ref)
    cfg = LockInConfig(f_ref, sample_rate, phase, alpha)
    offset = line_offset(target, lines, f_dev, splitting)
    if k_i is None:
        g = plant_gain(target, lines, f_dev, splitting)
        k_i = loop_gain / g
    return ChannelConfig(target, mod, cfg, k_i, f_lo_init, offset, update_periods)


def synchronize(channels):
    """Copies of ``channels`` that all update once per common reference period.

    Every update window then holds whole periods of every reference, so
    neither the fluorescence ripple nor the other channels' modulation
    leaks into the error signal.
    """
    ones = [replace(c, update_periods=1) for c in channels]
    return [replace(c, update_periods=n) for c, n in zip(channels, beat_updates(ones))]


def plant_gain(target, lines, f_dev, splitting=2.16e6):
    """Static discriminant slope (V/Hz) at the lock point of ``target``."""
    triplet = hyperfine_lines(0.0, splitting) if splitting else np.array([0.0])
    off = line_offset(target, lines, f_dev, splitting)
    return discriminant_slope(off, triplet, lines, f_dev)


def channel_analysis(ch, lines, splitting=2.16e6, actuator_delay=False, exact=False):
    """Loop analysis at the channel's update cadence.

    By default the per-update filter is the equivalent single pole of the
    samples in one update window. With ``exact`` the poles are those of the
    window-averaged sampled loop the engine actually runs
    (:func:`sampled_loop_poles`).
    """
    g = plant_gain(ch.target, lines, ch.modulation.f_dev, splitting)
    n = int(round(ch.lockin.samples_per_period)) * ch.update_periods
    period = ch.update_periods / ch.lockin.f_ref
    a = update_alpha(ch.lockin.alpha, n)
    an = closed_loop_analysis(g, a, ch.k_i, period, actuator_delay)
    if exact:
        poles = sampled_loop_poles(g, ch.lockin.alpha, ch.k_i, n)
        an.poles = poles
        an.stable = bool(np.all(np.abs(poles) < 1.0))
        an.settling_time = _settling(np.max(np.abs(poles)), an.stable, period)
    return an


@dataclass
class ChannelTrace:
    target: LockTarget
    offset: float
    t: list = field(default_factory=list)
    f_lo: list = field(default_factory=list)
    error: list = field(default_factory=list)
    truth: list = field(default_factory=list)
    railed: list = field(default_factory=list)
    lock_lost: bool = False

    def arrays(self):
        return (np.asarray(self.t), np.asarray(self.f_lo), np.asarray(self.error),
                np.asarray(self.truth))

    def center(self):
        """Locked frequency minus the known line offset: the transition estimate."""
        return np.asarray(self.f_lo) - self.offset


@dataclass
class LoopTrace:
    channels: list
    lock_lost: bool = False

    def pair(self, upper=1, lower=0, constants=DEFAULT_CONSTANTS):
        """(t, b_nv, dt) on the lower channel's update times, upper held."""
        lo, up = self.channels[lower], self.channels[upper]
        t = np.asarray(lo.t)
        t_up = np.asarray(up.t)
        idx = np.searchsorted(t_up, t, side="right") - 1
        valid = idx >= 0
        f_up = np.asarray(up.f_lo)[np.clip(idx, 0, None)]
        b, dt = field_from_pair(f_up[valid], np.asarray(lo.f_lo)[valid], constants,
                                up.offset, lo.offset)
        return t[valid], b, dt

    def truth_pair(self, upper=1, lower=0, constants=DEFAULT_CONSTANTS):
        """Same as :meth:`pair` but from the true transition centres."""
        lo, up = self.channels[lower], self.channels[upper]
        t = np.asarray(lo.t)
        idx = np.searchsorted(np.asarray(up.t), t, side="right") - 1
        valid = idx >= 0
        f_up = np.asarray(up.truth)[np.clip(idx, 0, None)]
        b, dt = field_from_pair(f_up[valid], np.asarray(lo.truth)[valid], constants)
        return t[valid], b, dt


class _Channel:
    """Mutable per-channel pipeline: demodulator, window average, integrator."""

    def __init__(self, cfg, band, saturation_v, fs, origin):
        self.cfg = cfg
        self.origin = origin
        self.band = band
        self.saturation_v = saturation_v
        self.f_lo = cfg.f_lo_init
        self.state = LockInState()
        self.acc = 0.0
        self.count = 0
        self.next_update = 1
        self.saturated_run = 0
        self.fs = fs
        self.last_error = 0.0

    def next_update_index(self):
        k = self.next_update * self.cfg.update_periods
        return self.origin + int(round(k * self.fs / self.cfg.lockin.f_ref))

    def reset(self, f_lo, index):
        # the filter keeps running: its reference ripple state stays valid
        self.f_lo = f_lo
        self.origin = index
        self.acc = 0.0
        self.count = 0
        self.next_update = 1
        self.saturated_run = 0


def warmup_time(channels, sample_rate, periods=30):
    """Length (s) of the held warm-up the engine runs before the first update."""
    if not periods or not channels:
        return 0.0
    slowest = min(c.lockin.f_ref for c in channels)
    return round(periods / slowest * sample_rate) / sample_rate


class LockEngine:
    """Advances synthesizer, demodulators and integrators on one clock.

    Each channel updates its integrator once per update window
    (``update_periods`` reference periods) using the mean of its filtered
    in-phase output over the window. Assign ``recorder`` a callable to
    receive every synthesized sample block.
    """

    def __init__(self, world, channels, lines, noise=NOISELESS, sample_rate=1e6,
                 balanced=True, band=MW_BAND, lock_loss_updates=100, warmup_periods=30):
        check_distinct_refs([c.modulation.f_ref for c in channels])
        SimClock(sample_rate).check_headroom([c.modulation.f_ref for c in channels])
        self.world = world
        self.lines = lines
        self.syn = Synthesizer(world, lines, noise, sample_rate, balanced)
        self.fs = sample_rate
        self.band = band
        self.lock_loss_updates = lock_loss_updates
        self.channels = []
        self.traces = []
        for c in channels:
            self._add(c)
        self.recorder = None
        if warmup_periods and self.channels:
            self.run(warmup_time(channels, sample_rate, warmup_periods), hold=True)
            for k, ch in enumerate(self.channels):
                ch.reset(ch.f_lo, self.syn.clock.index)
                self.traces[k] = ChannelTrace(ch.cfg.target, ch.cfg.offset)

    def _add(self, cfg):
        g = plant_gain(cfg.target, self.lines, cfg.modulation.f_dev, self.world.splitting)
        # beyond sigma of detuning the error signal has left its linear region
        sat = g * self.lines.sigma
        ch = _Channel(cfg, self.band, sat, self.fs, self.syn.clock.index)
        if ch.f_lo is None:
            ch.f_lo = float(self.true_center(cfg.target, self.syn.clock.t)) + cfg.offset
        ch.state = LockInState(0.0, 0.0, self.syn.clock.index)
        self.channels.append(ch)
        self.traces.append(ChannelTrace(cfg.target, cfg.offset))

    def true_center(self, target, t):
        """True transition centre (Hz) of the target at time ``t``."""
        return self.world.transitions(np.asarray(t)).as_array()[..., target.index]

    def retarget(self, k, cfg, f_lo):
        """Point channel ``k`` at a new target, restarting its pipeline."""
        ch = self.channels[k]
        ch.cfg = cfg
        g = plant_gain(cfg.target, self.lines, cfg.modulation.f_dev, self.world.splitting)
        ch.saturation_v = g * self.lines.sigma
        ch.reset(f_lo, self.syn.clock.index)
        self.traces[k] = ChannelTrace(cfg.target, cfg.offset)

    def run(self, duration, hold=False):
        """Advance ``duration`` seconds. With ``hold`` the drives stay fixed."""
        end = self.syn.clock.index + int(round(duration * self.fs))
        while self.syn.clock.index < end:
            now = self.syn.clock.index
            nxt = min(ch.next_update_index() for ch in self.channels)
            stop = min(max(nxt, now + 1), end)
            n = stop - now
            drives = [(ch.f_lo, ch.cfg.modulation.f_dev, ch.cfg.modulation.f_ref)
                      for ch in self.channels]
            v = self.syn.block(n, drives)
            if self.recorder is not None:
                self.recorder(v)
            for ch in self.channels:
                ch.state, i, _ = demodulate_block(ch.state, v, ch.cfg.lockin)
                ch.acc += float(np.sum(i))
                ch.count += n
            for k, ch in enumerate(self.channels):
                if ch.next_update_index() == stop:
                    self._update(k, ch, stop, hold)
        return self.trace()

    def _update(self, k, ch, index, hold):
        error = ch.acc / ch.count if ch.count else 0.0
        ch.acc, ch.count = 0.0, 0
        ch.next_update += 1
        railed = False
        if not hold:
            ch.f_lo, railed = integrator_step(ch.f_lo, error, ch.cfg.k_i, ch.band)
        ch.last_error = error
        if abs(error) > ch.saturation_v or railed:
            ch.saturated_run += 1
        else:
            ch.saturated_run = 0
        tr = self.traces[k]
        if ch.saturated_run > self.lock_loss_updates:
            tr.lock_lost = True
        t = index / self.fs
        tr.t.append(t)
        tr.f_lo.append(ch.f_lo)
        tr.error.append(error)
        tr.railed.append(railed)
        tr.truth.append(float(self.true_center(ch.cfg.target, t)))

    def trace(self):
        return LoopTrace(self.traces, any(tr.lock_lost for tr in self.traces))

    def sweep(self, k, f_values, periods=12):
        """Step channel ``k`` through ``f_values`` open-loop; return settled errors.

        Each point holds the drive for ``periods`` reference periods and
        records the mean error over the last one.
        """
        ch = self.channels[k]
        out = np.empty(len(f_values))
        for j, f in enumerate(f_values):
            ch.reset(float(f), self.syn.clock.index)
            self.run(periods / ch.cfg.lockin.f_ref, hold=True)
            out[j] = ch.last_error
        return out


def run_lock(world, channels, duration, lines, noise=NOISELESS, sample_rate=1e6,
             balanced=True, band=MW_BAND):
    """Lock all channels on a shared clock for ``duration`` seconds."""
    return LockEngine(world, channels, lines, noise, sample_rate, balanced, band).run(duration)


def beat_updates(channels):
    """Updates per channel spanning one common period of all update windows.

    With whole samples per period the multi-channel cross-talk is periodic
    over the least common multiple of the periods, so averages of locked
    values over whole multiples of it are free of the beat.
    """
    ns = [int(round(c.lockin.samples_per_period)) * c.update_periods for c in channels]
    common = math.lcm(*ns)
    return [common // n for n in ns]


def hold_mean(values, n_hold, beat=1):
    """Mean of the last ``n_hold`` values rounded down to whole beats."""
    values = np.asarray(values, dtype=float)
    n = max(beat, (min(n_hold, values.size) // beat) * beat)
    return float(np.mean(values[-n:]))


def find_triplet_line(f_lo, in_phase, target, splitting, sigma, seed):
    """Locate the target's hyperfine line in a local sweep.

    Groups negative-slope zero crossings into triplets spaced by the
    hyperfine splitting and returns the member matching the target's
    ``branch * m_I`` position in the triplet closest to ``seed``.
    Returns None when no complete triplet is found.
    """
    zc = zero_crossings(f_lo, in_phase, "negative")
    best = None
    tol = 0.5 * sigma
    for z in zc:
        group = [z]
        for k in (1, 2):
            near = zc[np.abs(zc - (z + k * splitting)) < tol]
            if near.size == 0:
                break
            group.append(near[0])
        if len(group) == 3:
            pick = group[target.branch * target.m_i + 1]
            if best is None or abs(pick - seed) < abs(best - seed):
                best = pick
    return best


def sampled_loop_poles(g, alpha, k_i, n_samples):
    """Exact closed-loop poles of the simulated controller.

    The engine holds the drive for ``n_samples`` samples, filters every
    sample with coefficient ``alpha`` and feeds the integrator the mean
    filter output over the period. Per update this gives
    ``(z - 1)(z - A) + g K_I [(1 - m) z + (m - A)] = 0`` with
    ``A = (1-alpha)**n`` and ``m`` the mean of ``(1-alpha)**j, j = 1..n``.
    """
    a = 1.0 - alpha
    big_a = a ** n_samples
    m = a * (1.0 - big_a) / (n_samples * alpha) if alpha < 1 else 0.0
    gk = g * k_i
    return np.roots([1.0, -(1.0 + big_a) + gk * (1.0 - m), big_a + gk * (m - big_a)])


@dataclass
class ClassVisit:
    axis: int
    cycle: int
    t_start: float
    t_end: float
    f_minus: float
    f_plus: float
    flagged: bool = False
    reacquired: bool = False


@dataclass
class SequenceResult:
    visits: list
    dwell: float

    def cycle_frequencies(self):
        """Held centres (Hz) at the end of every full cycle, shape (cycles, 8)."""
        cycles = max(v.cycle for v in self.visits) + 1
        out = np.full((cycles, 8), np.nan)
        for v in self.visits:
            out[v.cycle, 2 * v.axis] = v.f_minus
            out[v.cycle, 2 * v.axis + 1] = v.f_plus
        return out

    def cycle_times(self):
        cycles = max(v.cycle for v in self.visits) + 1
        ends = np.zeros(cycles)
        for v in self.visits:
            ends[v.cycle] = max(ends[v.cycle], v.t_end)
        return ends

    def held_series(self, t):
        """Sample-and-hold of all eight centres on timeline ``t``; NaN before first visit."""
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape + (8,), np.nan)
        for v in sorted(self.visits, key=lambda v: v.t_end):
            after = t >= v.t_end
            out[after, 2 * v.axis] = v.f_minus
            out[after, 2 * v.axis + 1] = v.f_plus
        return out

    @property
    def flagged(self):
        return [v for v in self.visits if v.flagged]


def sequence_classes(world, pairs, dwell, cycles, lines, noise=NOISELESS, sample_rate=1e6,
                     balanced=True, hold_fraction=0.5, capture=None, band=MW_BAND):
    """Lock the four class pairs in round robin, ``dwell`` seconds each.

    ``pairs[axis]`` is a ``(lower, upper)`` tuple of :class:`ChannelConfig`.
    Both slots reuse one reference frequency per slot across classes. Each
    visit seeds from the last locked value for that class (the first from
    ``f_lo_init`` or, if unset, the world's initial line positions). The
    held value is the mean locked centre over the last ``hold_fraction``
    of the dwell. A visit whose error leaves the capture range is flagged
    and re-acquired with a local search over +/-10 sigma.
    """
    for lower, upper in pairs:
        for ch in (lower, upper):
            an = channel_analysis(ch, lines, world.splitting, exact=True)
            if not an.stable:
                raise ValueError(f"unstable loop for {ch.target}:\n{an.report()}")
            if dwell < 20 * an.settling_time:
                raise ValueError(
                    f"dwell {dwell:g} s is shorter than 20x the loop settling time "
                    f"({an.settling_time:.3g} s) for {ch.target}")
    capture = capture if capture is not None else 2.0 * lines.sigma
    engine = LockEngine(world, list(pairs[0]), lines, noise, sample_rate, balanced, band)
    last = {}
    visits = []
    for cycle in range(cycles):
        for axis in range(4):
            t0 = engine.syn.clock.t
            seeds = []
            for slot, cfg in enumerate(pairs[axis]):
                if (axis, slot) in last:
                    seed = last[(axis, slot)]
                elif cfg.f_lo_init is not None:
                    seed = cfg.f_lo_init
                else:
                    seed = float(engine.true_center(cfg.target, t0)) + cfg.offset
                seeds.append(seed)
                engine.retarget(slot, cfg, seed)
            tr = engine.run(dwell)
            flagged, reacq = False, False
            refound = {}
            for slot, cfg in enumerate(pairs[axis]):
                ct = tr.channels[slot]
                err = np.asarray(ct.error)
                g = plant_gain(cfg.target, lines, cfg.modulation.f_dev, world.splitting)
                tail = err[len(err) // 2:]
                # travelling beyond the capture range means the loop slipped lines
                lost = (ct.lock_lost or bool(tail.size and np.max(np.abs(tail)) / g > capture)
                        or abs(ct.f_lo[-1] - seeds[slot]) > capture)
                if lost:
                    flagged = True
                    found = _reacquire(engine, slot, cfg, seeds[slot], lines, world.splitting)
                    if found is not None:
                        reacq = True
                        refound[slot] = found
            if refound:
                # a slipping drive disturbs the other slot too: relock both
                for slot, cfg in enumerate(pairs[axis]):
                    engine.retarget(slot, cfg, refound.get(slot, engine.channels[slot].f_lo))
                tr = engine.run(dwell)
            centers = []
            beats = beat_updates(pairs[axis])
            for slot in range(2):
                ct = tr.channels[slot]
                f = ct.center()
                n_hold = max(1, int(round(len(f) * hold_fraction)))
                centers.append(hold_mean(f, n_hold, beats[slot]))
                last[(axis, slot)] = float(ct.f_lo[-1])
            visits.append(ClassVisit(axis, cycle, t0, engine.syn.clock.t, centers[0],
                                     centers[1], flagged, reacq))
    return SequenceResult(visits, dwell)


def _reacquire(engine, slot, cfg, seed, lines, splitting):
    """Local spectral search around ``seed``; returns the target line centre or None."""
    sigma = lines.sigma
    grid = seed + np.arange(-10 * sigma, 10 * sigma + 1, sigma / 5)
    # widen by one splitting each side so the whole triplet fits in the window
    grid = np.concatenate([seed - 10 * sigma - splitting + np.arange(0, splitting, sigma / 5),
                           grid, seed + 10 * sigma + sigma / 5 + np.arange(0, splitting, sigma / 5)])
    err = engine.sweep(slot, grid)
    return find_triplet_line(grid, err, cfg.target, splitting, sigma, seed)
