"""Trace ingestion and synthetic workload generation.

Traces are CSV files with a header row and two numeric columns, time and work.
The work column is either cumulative (``time,cumulative_work``) or per-row
increments (``time,work_increment``). Lines starting with ``#`` are ignored.

Synthetic sources draw from numpy's PCG64 generator seeded through
``SeedSequence(seed)``, so a given seed yields the same process on every
platform numpy supports.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .process import LINEAR, STEP, CumulativeProcess

CUMULATIVE = "cumulative"
INCREMENTS = "increments"

POISSON_BATCH = "poisson-batch"
ONOFF = "onoff"
CONSTANT_RATE = "constant-rate"
TRACE = "trace"

PRNG = "PCG64"

_HEADERS = {CUMULATIVE: ("time", "cumulative_work"), INCREMENTS: ("time", "work_increment")}


class TraceError(ValueError):
    """A trace file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class TraceSpec:
    """Where a trace lives and how to read it.

    ``time_unit`` converts file ticks to seconds and ``work_unit`` scales the
    work column. ``time_column`` and ``work_column`` select columns by header
    name or zero-based index, so arbitrary trace schemas can be read without
    reformatting. ``interpolation`` chooses between discrete jumps (``step``)
    and fluid arrivals between rows (``linear``); when left as ``None`` a
    ``# interpolation: linear`` comment in the file selects fluid mode and
    discrete jumps are assumed otherwise.
    """

    path: str
    format: str = CUMULATIVE
    time_unit: float = 1.0
    work_unit: float = 1.0
    sort: bool = False
    time_column: int | str = 0
    work_column: int | str = 1
    interpolation: str | None = None

    def __post_init__(self):
        if self.format not in (CUMULATIVE, INCREMENTS):
            raise ValueError("trace format must be 'cumulative' or 'increments', got %r" % (self.format,))
        if not (self.time_unit > 0 and self.work_unit > 0):
            raise ValueError("time_unit and work_unit must be positive")
        if self.interpolation not in (None, STEP, LINEAR):
            raise ValueError("interpolation must be 'step' or 'linear'")


def _column_index(header, col, line_no):
    if isinstance(col, int):
        if not 0 <= col < len(header):
            raise TraceError("column %d out of range for header %r" % (col, header), line_no)
        return col
    names = [h.strip() for h in header]
    if col not in names:
        raise TraceError("no column named %r in header %r" % (col, header), line_no)
    return names.index(col)


def _read_rows(spec: TraceSpec):
    header = None
    rows = []
    directive = None
    with open(spec.path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if row and row[0].lstrip().startswith("#"):
                key, _, value = ",".join(row).lstrip("# ").partition(":")
                if key.strip() == "interpolation" and value.strip() in (STEP, LINEAR):
                    directive = value.strip()
                continue
            if not row or not "".join(row).strip():
                continue
            if header is None:
                header = (row, line_no)
                ti = _column_index(row, spec.time_column, line_no)
                wi = _column_index(row, spec.work_column, line_no)
                try:
                    float(row[ti]), float(row[wi])
                except ValueError:
                    continue
                raise TraceError("expected a header row, found numbers", line_no)
            try:
                t, w = float(row[ti]), float(row[wi])
            except (ValueError, IndexError):
                raise TraceError("malformed row %r" % (row,), line_no) from None
            if not (math.isfinite(t) and math.isfinite(w)):
                raise TraceError("non-finite value", line_no)
            rows.append((t, w, line_no))
    if not rows:
        raise TraceError("trace %s contains no data rows" % spec.path)
    return rows, directive


def load_trace(spec: TraceSpec) -> CumulativeProcess:
    """Read a CSV trace into a validated cumulative process.

    Rows sharing a timestamp are merged (their increments add up). Out-of-order
    timestamps are an error unless ``spec.sort`` is set, in which case rows are
    stably sorted by time first.
    """
    rows, directive = _read_rows(spec)
    mode = spec.interpolation or directive or STEP
    t = np.array([r[0] for r in rows])
    w = np.array([r[1] for r in rows])
    lines = np.array([r[2] for r in rows])

    if np.any(np.diff(t) < 0):
        if not spec.sort:
            bad = int(np.argmax(np.diff(t) < 0)) + 1
            raise TraceError("timestamps out of order (pass sort=True / --sort to reorder)", int(lines[bad]))
        order = np.argsort(t, kind="stable")
        t, w, lines = t[order], w[order], lines[order]
    if t[0] < 0:
        raise TraceError("negative timestamp", int(lines[0]))

    if spec.format == CUMULATIVE:
        if w[0] < 0:
            raise TraceError("negative cumulative work", int(lines[0]))
        drops = np.flatnonzero(np.diff(w) < 0)
        if drops.size:
            raise TraceError("cumulative work decreases", int(lines[drops[0] + 1]))
        last = np.r_[t[1:] != t[:-1], True]
        t, values = t[last], w[last]
    else:
        neg = np.flatnonzero(w < 0)
        if neg.size:
            raise TraceError("negative work increment", int(lines[neg[0]]))
        first = np.r_[True, t[1:] != t[:-1]]
        starts = np.flatnonzero(first)
        t = t[starts]
        values = np.cumsum(np.add.reduceat(w, starts))
    return CumulativeProcess(t * spec.time_unit, values * spec.work_unit, mode)


def save_trace(process: CumulativeProcess, path, format=CUMULATIVE, comments=()):
    """Write ``process`` as a CSV trace readable by :func:`load_trace`.

    ``path`` may also be an open text stream.

    Floats are written with ``repr`` so cumulative traces reload bit for bit.
    Fluid processes carry an ``# interpolation: linear`` line.
    """
    if format not in _HEADERS:
        raise ValueError("unknown trace format %r" % (format,))
    col = process.values if format == CUMULATIVE else np.diff(process.values, prepend=0.0)
    if hasattr(path, "write"):
        _write_trace(process, path, format, col, comments)
        return
    with open(path, "w", newline="") as fh:
        _write_trace(process, fh, format, col, comments)


def _write_trace(process, fh, format, col, comments):
    for c in comments:
        fh.write("# %s\n" % c)
    if process.mode == LINEAR:
        fh.write("# interpolation: linear\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(_HEADERS[format])
    for t, w in zip(process.times.tolist(), col.tolist()):
        writer.writerow((repr(t), repr(w)))


@dataclass(frozen=True)
class GeneratorSpec:
    """A synthetic (or file-backed) arrival source.

    ``poisson-batch``
        Batches arrive as a Poisson process with intensity ``rate``; batch
        sizes are exponential with mean ``batch_mean`` (or exactly
        ``batch_mean`` when ``batch_dist`` is ``"deterministic"``). Long-run
        rate ``rate * batch_mean``.
    ``onoff``
        Alternating exponential off and on periods with means ``off`` and
        ``on``; work flows at peak ``rate`` while on. Long-run rate
        ``rate * on / (on + off)``.
    ``constant-rate``
        Fluid arrivals at ``rate``.
    ``trace``
        Reads ``path`` (cumulative CSV) and ignores the random parameters.
    """

    type: str
    rate: float = 1.0
    horizon: float = 1000.0
    seed: int = 0
    batch_mean: float = 1.0
    batch_dist: str = "exponential"
    on: float = 1.0
    off: float = 1.0
    path: str | None = None
    format: str = CUMULATIVE

    def __post_init__(self):
        if self.type not in (POISSON_BATCH, ONOFF, CONSTANT_RATE, TRACE):
            raise ValueError("unknown generator type %r" % (self.type,))
        if self.type == TRACE:
            if not self.path:
                raise ValueError("trace generator needs a path")
            return
        for name in ("rate", "horizon", "batch_mean", "on", "off"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError("generator parameter %s must be positive, got %r" % (name, v))
        if self.batch_dist not in ("exponential", "deterministic"):
            raise ValueError("batch_dist must be 'exponential' or 'deterministic'")

    @property
    def mean_rate(self) -> float | None:
        if self.type == POISSON_BATCH:
            return self.rate * self.batch_mean
        if self.type == ONOFF:
            return self.rate * self.on / (self.on + self.off)
        if self.type == CONSTANT_RATE:
            return self.rate
        return None

    def with_seed(self, seed) -> "GeneratorSpec":
        return _replace(self, seed=int(seed))

    def with_mean_rate(self, target) -> "GeneratorSpec":
        """Same shape of source, intensity rescaled to long-run rate ``target``."""
        if self.mean_rate is None:
            raise ValueError("a trace has no adjustable rate")
        return _replace(self, rate=self.rate * target / self.mean_rate)

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_json(cls, obj) -> "GeneratorSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError("unknown generator fields: %s" % ", ".join(sorted(unknown)))
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "GeneratorSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def _replace(spec, **kw):
    d = asdict(spec)
    d.update(kw)
    return GeneratorSpec(**d)


def rng_for(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def _poisson_batch(spec, rng):
    n = rng.poisson(spec.rate * spec.horizon)
    times = np.sort(rng.uniform(0.0, spec.horizon, n))
    if spec.batch_dist == "exponential":
        sizes = rng.exponential(spec.batch_mean, n)
    else:
        sizes = np.full(n, spec.batch_mean)
    # uniform draws tie with probability zero, but merge defensively
    keep = np.r_[True, np.diff(times) > 0] if n else np.ones(0, bool)
    if not keep.all():
        starts = np.flatnonzero(keep)
        times, sizes = times[starts], np.add.reduceat(sizes, starts)
    return CumulativeProcess(times, np.cumsum(sizes), STEP)


def _onoff(spec, rng):
    # draw enough periods in one go; top up in the rare case they fall short
    cycle = spec.on + spec.off
    n = int(spec.horizon / cycle * 1.2) + 16
    durations = []
    total = 0.0
    while total < spec.horizon:
        off = rng.exponential(spec.off, n)
        on = rng.exponential(spec.on, n)
        d = np.column_stack((off, on)).ravel()
        durations.append(d)
        total += d.sum()
    edges = np.concatenate(([0.0], np.cumsum(np.concatenate(durations))))
    edges = edges[edges < spec.horizon]
    edges = np.append(edges, spec.horizon)
    # even-indexed intervals are off, odd ones on
    lengths = np.diff(edges)
    work = np.where(np.arange(lengths.size) % 2 == 1, spec.rate * lengths, 0.0)
    values = np.concatenate(([0.0], np.cumsum(work)))
    keep = np.r_[True, np.diff(edges) > 0]
    return CumulativeProcess(edges[keep], values[keep], LINEAR)


def generate(spec: GeneratorSpec) -> CumulativeProcess:
    """Draw one realization of ``spec``. Deterministic given ``spec.seed``."""
    if spec.type == TRACE:
        return load_trace(TraceSpec(spec.path, spec.format))
    if spec.type == CONSTANT_RATE:
        return CumulativeProcess.fluid_rate(spec.rate, spec.horizon)
    rng = rng_for(spec.seed)
    if spec.type == POISSON_BATCH:
        return _poisson_batch(spec, rng)
    return _onoff(spec, rng)
