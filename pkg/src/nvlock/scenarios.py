"""Scenario runners behind the CLI: step, range, vector, sensitivity, spectrum.

Each runner takes a validated :class:`~nvlock.config.ScenarioConfig` and an
output directory, writes its CSV artifacts plus a manifest, and returns a
:class:`ScenarioResult` whose ``passed`` flag reflects the scenario's
property checks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .io import (write_csv, write_gnuplot, write_manifest, write_recon_csv,
                 write_spectrum_csv, write_trace_csv)
from .lockin import (LockInConfig, default_alpha, lock_point, lockin_spectrum, quantize_f_ref,
                     zero_crossings)
from .loop import (LockEngine, LockTarget, channel_analysis, hold_mean, make_channel,
                   open_loop_linear_range, open_loop_range, open_loop_readout,
                   sequence_classes, synchronize, warmup_time)
from .odmr import Profile, World, write_raw
from .recon import FieldReconstructor, nonlinear_reconstruct, redundancy_check
from .spin import DEFAULT_ORIENTATIONS, all_class_frequencies, project_field
from .stats import analyze_noise


class UnstableLoopError(ValueError):
    """A configured loop has a closed-loop pole on or outside the unit circle."""

    def __init__(self, report):
        super().__init__("unstable loop configuration; pole report:\n" + report)
        self.report = report


@dataclass
class ScenarioResult:
    name: str
    passed: bool
    lock_lost: bool = False
    summary: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    out_dir: Path | None = None

    def lines(self):
        out = [f"scenario: {self.name}", f"passed: {self.passed}", f"lock_lost: {self.lock_lost}"]
        out += [f"{k}: {_show(v)}" for k, v in self.summary.items()]
        return out


def _show(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_show(x) for x in v) + "]"
    return str(v)


# ---------------------------------------------------------------- helpers

def world_for(cfg, field_profiles=(), temperature_profiles=(), dt0=0.0):
    return World(cfg.bias_vector(), dt0, list(field_profiles), list(temperature_profiles),
                 cfg.model, cfg.physical_constants(), cfg.splitting)


def build_channels(cfg, lines, axis=None):
    """Channel configs from the config's channel list, synchronised if several."""
    fs = cfg.sample_rate
    out = []
    for spec in cfg.channels:
        target = LockTarget(spec.axis if axis is None else axis, spec.branch, spec.m_i)
        alpha = default_alpha(quantize_f_ref(spec.f_ref, fs), fs, spec.corner_ratio)
        out.append(make_channel(target, spec.f_ref, fs, lines, f_dev=spec.f_dev,
                                loop_gain=spec.loop_gain, phase=spec.phase, alpha=alpha,
                                splitting=cfg.splitting, max_f_ref=cfg.max_f_ref))
    return synchronize(out) if len(out) > 1 else out


def loop_report(channels, lines, splitting):
    """Text report of both loop models for every channel; raises if unstable."""
    parts = []
    stable = True
    for k, ch in enumerate(channels):
        model = channel_analysis(ch, lines, splitting)
        exact = channel_analysis(ch, lines, splitting, exact=True)
        stable &= model.stable and exact.stable
        parts.append(f"[channel {k}] target axis={ch.target.axis} branch={ch.target.branch:+d} "
                     f"m_I={ch.target.m_i:+d} f_ref={ch.lockin.f_ref:.9g} Hz "
                     f"update_periods={ch.update_periods}\n")
        parts.append("-- single-pole filter model --\n" + model.report())
        parts.append("-- window-averaged sampled loop --\n")
        for p in exact.poles:
            parts.append(f"pole                : {p.real:+.9f} {p.imag:+.9f}j  |z|={abs(p):.9f}\n")
        parts.append(f"stable              : {exact.stable}\n"
                     f"2% settling time    : {exact.settling_time:.6g} s\n\n")
    text = "".join(parts)
    if not stable:
        raise UnstableLoopError(text)
    return text


def _finish(cfg, out_dir, result, files, gnuplot, started):
    out_dir = Path(out_dir)
    cfg_path = out_dir / "config.yaml"
    cfg_path.write_text(cfg.dump())
    files = [cfg_path, *files]
    if gnuplot:
        files.append(write_gnuplot(out_dir, cfg.scenario))
    summary = out_dir / "summary.txt"
    summary.write_text("\n".join(result.lines()) + "\n")
    files.append(summary)
    fields = {
        "scenario": cfg.scenario,
        "version": __version__,
        "seed": cfg.seed,
        "wall_clock_s": f"{time.perf_counter() - started:.3f}",
        "passed": result.passed,
        "lock_lost": result.lock_lost,
    }
    files.append(write_manifest(out_dir, fields, files))
    result.files = files
    result.out_dir = out_dir
    return result


# ---------------------------------------------------------------- step

def scenario_step_response(cfg, out_dir, gnuplot=False):
    """Dual-channel lock through an axial field step at several contrasts.

    The integrator gain is fixed once (at the largest contrast), so the
    contrast levels stand in for laser power: transients differ, the
    steady state must not.
    """
    started = time.perf_counter()
    out_dir = Path(out_dir)
    s = cfg.schedule
    fs = cfg.sample_rate
    consts = cfg.physical_constants()
    ref_lines = cfg.line_shape(max(s.contrasts))
    channels = build_channels(cfg, ref_lines)
    report = "".join(loop_report(channels, cfg.line_shape(c), cfg.splitting)
                     for c in s.contrasts)
    axis = channels[0].target.axis
    step = s.step_nt * DEFAULT_ORIENTATIONS.axes[axis]
    world = world_for(cfg, [Profile("step", s.step_time, step)])
    files = [out_dir / "loop_analysis.txt"]
    files[0].write_text(report)
    rows, post, lost = [], [], False
    for k, c in enumerate(s.contrasts):
        lines = cfg.line_shape(c)
        engine = LockEngine(world, channels, lines, cfg.noise_params(), fs,
                            cfg.noise.balanced)
        tr = engine.run(s.duration)
        lost |= tr.lock_lost
        t, b, dt = tr.pair()
        files.append(write_trace_csv(out_dir / f"trace_level{k}.csv", tr, consts))
        pre_sel = t < s.step_time
        n_pre = max(1, np.count_nonzero(pre_sel) // 4)
        b_pre = hold_mean(b[pre_sel], n_pre) if np.any(pre_sel) else float("nan")
        n_post = max(1, len(b) // 4)
        b_post = hold_mean(b, n_post)
        dt_post = hold_mean(dt, n_post)
        post.append(b_post)
        rows.append((k, c, channels[0].k_i, channels[1].k_i, b_pre, b_post, b_post - b_pre, dt_post))
    files.append(write_csv(out_dir / "summary.csv",
                           ("level", "contrast", "k_i_lower_hz_per_v", "k_i_upper_hz_per_v",
                            "b_pre_nt", "b_post_nt", "step_nt", "dt_k"), rows))
    truth_pre = project_field(cfg.bias_vector(), axis)
    spread = float(np.max(post) - np.min(post))
    step_err = max(abs(r[6] - s.step_nt) for r in rows)
    summary = {
        "levels": len(s.contrasts),
        "applied_step_nt": s.step_nt,
        "true_b_nv_after_nt": float(truth_pre + s.step_nt),
        "steady_b_nv_nt": [float(p) for p in post],
        "steady_state_spread_nt": spread,
        "max_step_error_nt": float(step_err),
        "split_change_hz": float(2 * consts.gamma * np.mean([r[6] for r in rows])),
    }
    passed = spread < s.tolerance_nt and step_err < s.tolerance_nt and not lost
    result = ScenarioResult("step", bool(passed), lost, summary)
    return _finish(cfg, out_dir, result, files, gnuplot, started)


# ---------------------------------------------------------------- range

def scenario_dynamic_range(cfg, out_dir, gnuplot=False):
    """Closed-loop tracking of a triangular axial ramp vs the open-loop readout."""
    started = time.perf_counter()
    out_dir = Path(out_dir)
    s = cfg.schedule
    fs = cfg.sample_rate
    consts = cfg.physical_constants()
    lines = cfg.line_shape()
    channels = build_channels(cfg, lines)
    report = loop_report(channels, lines, cfg.splitting)
    axis = channels[0].target.axis
    d = np.asarray(s.direction, dtype=float)
    d = d / (d @ DEFAULT_ORIENTATIONS.axes[axis])
    # slew bound: lag behind the ramp within a tenth of a linewidth
    slew_hz = 2 * s.amplitude_nt / s.duration * consts.gamma
    tau = max(channel_analysis(ch, lines, cfg.splitting, exact=True).settling_time
              for ch in channels) / 4.0
    lag_hz = slew_hz * tau
    if lag_hz > lines.sigma / 10:
        raise UnstableLoopError(report + f"ramp too fast: predicted lag {lag_hz:.3g} Hz "
                                f"exceeds sigma/10 = {lines.sigma / 10:.3g} Hz\n")
    world = world_for(cfg, [Profile("triangle", 0.0, s.amplitude_nt * d, s.duration)])
    engine = LockEngine(world, channels, lines, cfg.noise_params(), fs, cfg.noise.balanced)
    tr = engine.run(s.duration)
    t, b, dt = tr.pair()
    _, b_true, _ = tr.truth_pair()
    sel = t >= s.settle_time
    err = b[sel] - b_true[sel]
    max_err = float(np.max(np.abs(err))) if err.size else float("nan")
    (out_dir / "loop_analysis.txt").write_text(report)
    files = [out_dir / "loop_analysis.txt", write_trace_csv(out_dir / "trace.csv", tr, consts)]

    ol_dev = s.open_loop_f_dev
    ol_range = open_loop_range(lines, ol_dev, consts, s.open_loop_tolerance)
    analytic = open_loop_linear_range(lines.sigma, consts)
    det_nt = np.linspace(0.0, 4 * lines.sigma / consts.gamma, 401)
    readout = open_loop_readout(det_nt * consts.gamma, lines, ol_dev) / consts.gamma
    files.append(write_csv(out_dir / "open_loop.csv", ("detuning_nt", "readout_nt"),
                           zip(det_nt, readout)))
    ratio = s.amplitude_nt / ol_range
    summary = {
        "ramp_amplitude_nt": s.amplitude_nt,
        "ramp_duration_s": s.duration,
        "predicted_lag_hz": float(lag_hz),
        "max_tracking_error_nt": max_err,
        "open_loop_range_nt": float(ol_range),
        "open_loop_linear_range_nt": float(analytic),
        "open_loop_readout_at_ramp_peak_nt": float(
            open_loop_readout(s.amplitude_nt * consts.gamma, lines, ol_dev) / consts.gamma),
        "range_ratio": float(ratio),
        "analytic_range_ratio": float(s.amplitude_nt / analytic),
    }
    passed = max_err < s.max_error_nt and ratio >= s.min_ratio and not tr.lock_lost
    result = ScenarioResult("range", bool(passed), tr.lock_lost, summary)
    return _finish(cfg, out_dir, result, files, gnuplot, started)


# ---------------------------------------------------------------- temperature

def temperature_ramp(cfg, amplitude_k=2.0, duration=10.0, hold=1.0, settle=0.05):
    """Lock through a temperature ramp from -amplitude to +amplitude at fixed field.

    Returns ``(t, b_nv, dt, b_true, dt_true, lock_lost)``; arrays are on the
    update times after ``settle``.
    """
    lines = cfg.line_shape()
    channels = build_channels(cfg, lines)
    loop_report(channels, lines, cfg.splitting)
    ramp = Profile("ramp", hold, 2 * amplitude_k, hold + duration)
    world = world_for(cfg, temperature_profiles=[ramp], dt0=-amplitude_k)
    engine = LockEngine(world, channels, lines, cfg.noise_params(), cfg.sample_rate,
                        cfg.noise.balanced)
    tr = engine.run(duration + 2 * hold)
    t, b, dt = tr.pair()
    _, b_true, dt_true = tr.truth_pair()
    sel = t >= settle
    return t[sel], b[sel], dt[sel], b_true[sel], dt_true[sel], tr.lock_lost


# ---------------------------------------------------------------- vector

def vector_schedule(cfg, pairs):
    """Field profiles applying +field along x, y, z in turn, one phase each.

    Phase boundaries fall on whole cycles after the engine's warm-up, so no
    class visit straddles a field change.
    """
    s = cfg.schedule
    t_w = warmup_time(list(pairs[0]), cfg.sample_rate)
    phase = s.cycles_per_field * 4 * s.dwell
    eye = np.eye(3) * s.field_nt
    profiles = []
    for k in range(3):
        start = t_w + (k + 1) * phase
        profiles.append(Profile("step", start, eye[k]))
        if k < 2:
            profiles.append(Profile("step", start + phase, -eye[k]))
    return profiles, t_w, phase


def scenario_vector(cfg, out_dir, gnuplot=False):
    """Four-class sequential locking with fields along x, y, z; vector readout."""
    started = time.perf_counter()
    out_dir = Path(out_dir)
    s = cfg.schedule
    fs = cfg.sample_rate
    consts = cfg.physical_constants()
    lines = cfg.line_shape()
    pairs = [tuple(build_channels(cfg, lines, axis)) for axis in range(4)]
    report = "".join(loop_report(p, lines, cfg.splitting) for p in pairs)
    (out_dir / "loop_analysis.txt").write_text(report)
    profiles, t_w, phase = vector_schedule(cfg, pairs)
    world = world_for(cfg, profiles)
    cycles = 4 * s.cycles_per_field
    seq = sequence_classes(world, pairs, s.dwell, cycles, lines, cfg.noise_params(), fs,
                           cfg.noise.balanced)
    freqs = seq.cycle_frequencies()
    t_end = seq.cycle_times()
    est = FieldReconstructor(model=cfg.model, constants=consts).fit(freqs)
    params = est.transform(freqs)
    results = [nonlinear_reconstruct(f, model=cfg.model, constants=consts) for f in freqs]
    scores = [redundancy_check(r, s.redundancy_noise_hz) for r in results]
    flagged_cycles = [k for k, sc in enumerate(scores) if sc > s.redundancy_threshold]
    files = [out_dir / "loop_analysis.txt",
             write_recon_csv(out_dir / "reconstruction.csv", t_end, params,
                             est.residual_norm_, est.converged_)]
    cols = ["t_s"] + [f"f{a}_{'minus' if b == 0 else 'plus'}_hz" for a in range(4) for b in (0, 1)]
    files.append(write_csv(out_dir / "resonances.csv", cols,
                           (np.concatenate([[t], f]) for t, f in zip(t_end, freqs))))

    # last cycle of each phase against the last zero-field cycle
    last = [(k + 1) * s.cycles_per_field - 1 for k in range(4)]
    base = params[last[0], :3]
    on_axis, leakage, signs_ok = [], [], True
    for k in range(3):
        delta = params[last[k + 1], :3] - base
        on_axis.append(float(delta[k] - s.field_nt))
        leakage.append(float(np.max(np.abs(np.delete(delta, k)))))
        # per-class splitting change must follow the axis projections
        split = (freqs[last[k + 1], 1::2] - freqs[last[k + 1], 0::2]
                 - freqs[last[0], 1::2] + freqs[last[0], 0::2])
        proj = DEFAULT_ORIENTATIONS.axes[:, k] * s.field_nt
        big = np.abs(proj) > 0.1 * s.field_nt
        signs_ok &= bool(np.all(np.sign(split[big]) == np.sign(proj[big])))
    bias = cfg.bias_vector()
    fwd = all_class_frequencies(bias, 0.0, "full", consts).as_array()
    res_lin = nonlinear_reconstruct(fwd, model="linear", constants=consts)
    res_full = nonlinear_reconstruct(fwd, model="full", constants=consts)
    summary = {
        "cycles": cycles,
        "vector_refresh_s": 4 * s.dwell,
        "on_axis_error_nt": on_axis,
        "max_leakage_nt": leakage,
        "shift_signs_match_projections": signs_ok,
        "flagged_visits": len(seq.flagged),
        "redundancy_flagged_cycles": flagged_cycles,
        "all_converged": bool(np.all(est.converged_)),
        "bias_linear_model_residual_hz": res_lin.residual_norm,
        "bias_full_model_residual_hz": res_full.residual_norm,
        "bias_full_model_error_nt": float(np.max(np.abs(res_full.b - bias))),
    }
    lost = any(v.flagged and not v.reacquired for v in seq.visits)
    passed = (max(abs(e) for e in on_axis) < s.tolerance_nt and max(leakage) < s.tolerance_nt
              and signs_ok and res_full.residual_norm < 1.0 and not lost)
    result = ScenarioResult("vector", bool(passed), lost, summary)
    return _finish(cfg, out_dir, result, files, gnuplot, started)


# ---------------------------------------------------------------- sensitivity

def scenario_sensitivity(cfg, out_dir, gnuplot=False):
    """Allan deviation and NEF of the locked field output vs detector noise."""
    started = time.perf_counter()
    out_dir = Path(out_dir)
    s = cfg.schedule
    fs = cfg.sample_rate
    consts = cfg.physical_constants()
    lines = cfg.line_shape()
    channels = build_channels(cfg, lines)
    report = loop_report(channels, lines, cfg.splitting)
    (out_dir / "loop_analysis.txt").write_text(report)
    files = [out_dir / "loop_analysis.txt"]
    world = world_for(cfg)
    reports, lost = [], False
    for k, dens in enumerate(s.densities):
        noise = cfg.noise_params(white=dens)
        noise = type(noise)(noise.white_noise_density, noise.laser_rin_density,
                            noise.drift_amplitude, noise.drift_period, cfg.seed + k)
        engine = LockEngine(world, channels, lines, noise, fs, cfg.noise.balanced)
        raw = []
        if k == 0 and s.raw_seconds > 0:
            n_raw = int(round(s.raw_seconds * fs))
            engine.recorder = lambda v: raw.append(v) if sum(map(len, raw)) < n_raw else None
        tr = engine.run(s.duration + s.settle_time)
        lost |= tr.lock_lost
        t, b, _ = tr.pair()
        b = b[t >= s.settle_time]
        rate = 1.0 / float(np.median(np.diff(t)))
        reports.append(analyze_noise(b, rate, dens))
        if k == 0:
            files.append(write_trace_csv(out_dir / "trace.csv", tr, consts))
            if raw:
                data = np.concatenate(raw)[:n_raw]
                files += list(write_raw(out_dir / "detector.f64", data, fs, len(data) / fs,
                                        noise.rng_seed))
    r0 = reports[0]
    files.append(write_csv(out_dir / "allan.csv",
                           ["tau_s"] + [f"adev_nt_d{k}" for k in range(len(reports))],
                           zip(r0.taus, *[r.adev for r in reports])))
    files.append(write_csv(out_dir / "asd.csv",
                           ["f_hz"] + [f"asd_nt_rthz_d{k}" for k in range(len(reports))],
                           zip(r0.freqs, *[r.asd for r in reports])))
    (out_dir / "noise_report.txt").write_text(
        "".join(f"[density {k}]\n" + r.text() for k, r in enumerate(reports)))
    files.append(out_dir / "noise_report.txt")
    slopes = [r.adev_slope for r in reports]
    ratios = [r.nef / r0.nef for r in reports]
    expected = [d / s.densities[0] for d in s.densities]
    lin_err = [abs(a / e - 1.0) for a, e in zip(ratios, expected)]
    summary = {
        "densities_v_rthz": list(s.densities),
        "nef_nt_rthz": [r.nef for r in reports],
        "allan_slopes": slopes,
        "nef_ratios": ratios,
        "expected_ratios": expected,
        "max_linearity_error": max(lin_err),
    }
    passed = (all(abs(x + 0.5) <= s.slope_tolerance for x in slopes)
              and max(lin_err) <= s.linearity_tolerance and not lost)
    result = ScenarioResult("sensitivity", bool(passed), lost, summary)
    return _finish(cfg, out_dir, result, files, gnuplot, started)


# ---------------------------------------------------------------- spectrum

def scenario_spectrum(cfg, out_dir, gnuplot=False):
    """Swept lock-in spectrum of the static world; counts line zero crossings."""
    started = time.perf_counter()
    out_dir = Path(out_dir)
    s = cfg.schedule
    fs = cfg.sample_rate
    lines = cfg.line_shape()
    world = world_for(cfg)
    centers = np.sort(world.lines(np.asarray(0.0)))
    step = s.step or lines.sigma / 10
    f_min = s.f_min if s.f_min is not None else centers[0] - s.margin
    f_max = s.f_max if s.f_max is not None else centers[-1] + s.margin
    f_lo = f_min + step * np.arange(int(np.floor((f_max - f_min) / step)) + 1)
    f_ref = quantize_f_ref(s.f_ref, fs)
    lcfg = LockInConfig(f_ref, fs, np.pi, default_alpha(f_ref, fs, s.corner_ratio))
    i, q = lockin_spectrum(lcfg, lines, centers, f_lo, s.f_dev)
    files = [write_spectrum_csv(out_dir / "spectrum.csv", f_lo, i, q)]
    zc = zero_crossings(f_lo, i, "negative")
    # distinct line positions inside the sweep, merged when closer than sigma
    inside = centers[(centers > f_lo[0]) & (centers < f_lo[-1])]
    groups = []
    for c in inside:
        if groups and c - groups[-1][-1] < lines.sigma:
            groups[-1].append(c)
        else:
            groups.append([c])
    expected = [lock_point(float(np.mean(g)), centers, lines, s.f_dev) for g in groups]
    errs = []
    if len(zc) == len(expected):
        errs = [abs(a - b) for a, b in zip(zc, expected)]
    summary = {
        "points": int(f_lo.size),
        "f_ref_hz": f_ref,
        "distinct_lines": len(expected),
        "zero_crossings": int(len(zc)),
        "max_crossing_error_hz": float(max(errs)) if errs else float("nan"),
    }
    passed = len(zc) == len(expected) and (not errs or max(errs) < lines.sigma / 100)
    result = ScenarioResult("spectrum", bool(passed), False, summary)
    return _finish(cfg, out_dir, result, files, gnuplot, started)


RUNNERS = {
    "step": scenario_step_response,
    "range": scenario_dynamic_range,
    "vector": scenario_vector,
    "sensitivity": scenario_sensitivity,
    "spectrum": scenario_spectrum,
}


def run_scenario(cfg, out_dir, gnuplot=False):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg.scenario](cfg, out_dir, gnuplot)

