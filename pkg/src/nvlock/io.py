"""Artifact writers: CSV tables, run manifest, gnuplot scripts."""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np

SPECTRUM_COLUMNS = ("f_lo_hz", "in_phase_v", "quadrature_v")
TRACE_COLUMNS = ("t_s", "channel_id", "f_lo_hz", "error_v", "b_nv_nt", "dt_k")
RECON_COLUMNS = ("t_s", "bx_nt", "by_nt", "bz_nt", "dt_k", "residual_hz", "converged")
MANIFEST_NAME = "manifest.txt"


def fmt(x):
    """Locale-free text for one cell; floats get 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, columns, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    """Header and float array of a CSV written by :func:`write_csv`."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float) if len(rows) > 1 else np.empty((0, len(rows[0])))
    return rows[0], data


def write_spectrum_csv(path, f_lo, in_phase, quadrature):
    return write_csv(path, SPECTRUM_COLUMNS, zip(f_lo, in_phase, quadrature))


def trace_rows(trace, constants, upper=1, lower=0):
    """Rows of a two-channel :class:`LoopTrace` with the pair-derived field.

    ``b_nv_nt`` and ``dt_k`` use the latest value of each channel at or
    before the row time; they are NaN until both channels have updated.
    """
    from .loop import field_from_pair
    lo, up = trace.channels[lower], trace.channels[upper]
    events = []
    for cid, ch in enumerate(trace.channels):
        events += [(t, cid, f, e) for t, f, e in zip(ch.t, ch.f_lo, ch.error)]
    events.sort(key=lambda r: (r[0], r[1]))
    t_lo, t_up = np.asarray(lo.t), np.asarray(up.t)
    f_lo_arr, f_up_arr = np.asarray(lo.f_lo), np.asarray(up.f_lo)
    rows = []
    for t, cid, f, e in events:
        i = np.searchsorted(t_lo, t, side="right") - 1
        j = np.searchsorted(t_up, t, side="right") - 1
        if i < 0 or j < 0:
            b, dt = np.nan, np.nan
        else:
            b, dt = field_from_pair(f_up_arr[j], f_lo_arr[i], constants, up.offset, lo.offset)
        rows.append((t, cid, f, e, float(b), float(dt)))
    return rows


def write_trace_csv(path, trace, constants, upper=1, lower=0):
    return write_csv(path, TRACE_COLUMNS, trace_rows(trace, constants, upper, lower))


def write_recon_csv(path, t, params, residual, converged):
    params = np.asarray(params, dtype=float)
    rows = ((ti, p[0], p[1], p[2], p[3], r, bool(c))
            for ti, p, r, c in zip(t, params, residual, converged))
    return write_csv(path, RECON_COLUMNS, rows)


def sha256_file(path):
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, fields, files):
    """Write ``manifest.txt``: ``key: value`` lines, one digest per artifact.

    ``files`` are paths inside ``out_dir``. The closing ``manifest_sha256``
    line digests all artifact lines, so editing the list is detected too.
    """
    out_dir = Path(out_dir)
    lines = [f"{k}: {v}" for k, v in fields.items()]
    art = []
    for p in sorted(Path(f).relative_to(out_dir).as_posix() for f in files):
        art.append(f"sha256 {p}: {sha256_file(out_dir / p)}")
    lines += art
    lines.append(f"manifest_sha256: {hashlib.sha256(chr(10).join(art).encode()).hexdigest()}")
    path = out_dir / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path):
    """Return ``(fields, artifacts)``; artifacts map relative path to digest."""
    fields, artifacts = {}, {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(": ")
        if not sep:
            raise ValueError(f"malformed manifest line: {line!r}")
        if key.startswith("sha256 "):
            artifacts[key[len("sha256 "):]] = value.strip()
        else:
            fields[key] = value
    return fields, artifacts


def verify_manifest(path):
    """List of problems with a manifest and its artifacts; empty when valid."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        return [f"manifest not found: {path}"]
    try:
        fields, artifacts = read_manifest(path)
    except ValueError as exc:
        return [str(exc)]
    problems = []
    if not artifacts:
        problems.append("manifest lists no artifacts")
    art = "\n".join(f"sha256 {p}: {d}" for p, d in sorted(artifacts.items()))
    if fields.get("manifest_sha256") != hashlib.sha256(art.encode()).hexdigest():
        problems.append("manifest_sha256 does not match the artifact list")
    for rel, digest in sorted(artifacts.items()):
        f = path.parent / rel
        if not f.exists():
            problems.append(f"missing artifact: {rel}")
        elif sha256_file(f) != digest:
            problems.append(f"digest mismatch: {rel}")
    return problems


_GNUPLOT = {
    "spectrum": """set datafile separator ','
set key autotitle columnhead
set xlabel 'f_LO (Hz)'
set ylabel 'lock-in output (V)'
plot 'spectrum.csv' using 1:2 with lines title 'in-phase', \\
     '' using 1:3 with lines title 'quadrature'
""",
    "step": """set datafile separator ','
set key autotitle columnhead
set xlabel 't (s)'
set ylabel 'B_NV (nT)'
plot for [f in system('ls trace_level*.csv')] f using 1:5 with lines title f
""",
    "range": """set datafile separator ','
set key autotitle columnhead
set xlabel 't (s)'
set ylabel 'B_NV (nT)'
plot 'trace.csv' using 1:5 with lines title 'locked'
""",
    "vector": """set datafile separator ','
set key autotitle columnhead
set xlabel 't (s)'
set ylabel 'field (nT)'
plot 'reconstruction.csv' using 1:2 with linespoints title 'bx', \\
     '' using 1:3 with linespoints title 'by', '' using 1:4 with linespoints title 'bz'
""",
    "sensitivity": """set datafile separator ','
set key autotitle columnhead
set logscale xy
set xlabel 'tau (s)'
set ylabel 'Allan deviation (nT)'
plot 'allan.csv' using 1:2 with linespoints title 'ADEV'
""",
}


def write_gnuplot(out_dir, scenario):
    path = Path(out_dir) / f"{scenario}.gp"
    path.write_text(_GNUPLOT[scenario])
    return path
