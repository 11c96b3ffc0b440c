"""Sensor trace containers, CSV/manifest I/O and preprocessing.

A trace is a uniformly sampled voltage series for one experimental trial.
The CSV layout is an optional ``time_s,voltage_v`` header followed by
``<time>,<voltage>`` rows with strictly increasing time.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (AlignmentError, DegenerateInputError, DomainError, TraceFormatError,
                     UsageError)

CSV_HEADER = "time_s,voltage_v"
# Timestamps may deviate from the uniform grid by this fraction of the step.
JITTER_TOLERANCE = 0.01
# Relative tolerance used when deciding whether two grids are the same.
GRID_RTOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling grid ``t_k = t0 + k*dt`` for ``k < count``.

    ``t0`` must be strictly positive: the channel models are singular at 0.
    """

    t0: float
    dt: float
    count: int

    def __post_init__(self):
        if not (self.t0 > 0 and math.isfinite(self.t0)):
            raise DomainError(f"grid start must be > 0, got {self.t0}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError(f"grid step must be > 0, got {self.dt}")
        if int(self.count) != self.count or self.count < 2:
            raise DomainError(f"grid needs at least 2 samples, got {self.count}")
        object.__setattr__(self, "count", int(self.count))

    @classmethod
    def default(cls, horizon=5.0, dt=0.05):
        """Grid starting at ``dt`` and ending at ``horizon`` (100 points by default)."""
        return cls(dt, dt, int(math.floor(horizon / dt + 1e-9)))

    @classmethod
    def spanning(cls, t0, t_end, dt):
        return cls(t0, dt, int(math.floor((t_end - t0) / dt + 1e-9)) + 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.count)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.count - 1)

    def matches(self, other: "TimeGrid") -> bool:
        if self.count != other.count:
            return False
        scale = max(abs(self.dt), abs(other.dt))
        return (abs(self.dt - other.dt) <= GRID_RTOL * scale
                and abs(self.t0 - other.t0) <= GRID_RTOL * max(scale, abs(self.t0)))

    def to_dict(self):
        return {"t0": self.t0, "dt": self.dt, "count": self.count}


class Source(str, enum.Enum):
    MEASURED = "measured"
    SYNTHETIC = "synthetic"


class Group(str, enum.Enum):
    TX1 = "Tx1"
    TX2 = "Tx2"
    TX12 = "Tx12"
    OTHER = "other"


@dataclass(frozen=True, eq=False)
class SensorTrace:
    grid: TimeGrid
    values: np.ndarray
    label: str = ""
    source: Source = Source.MEASURED

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size != self.grid.count:
            raise DomainError(
                f"trace has {values.size} values but grid has {self.grid.count} samples")
        if not np.all(np.isfinite(values)):
            raise DomainError("trace values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "source", Source(self.source))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __len__(self):
        return self.grid.count

    def with_values(self, values, label=None) -> "SensorTrace":
        return replace(self, values=values, label=self.label if label is None else label)


@dataclass(frozen=True, eq=False)
class TrialSet:
    traces: tuple
    group: Group = Group.OTHER

    def __post_init__(self):
        traces = tuple(self.traces)
        if not traces:
            raise DegenerateInputError("a trial set needs at least one trace")
        object.__setattr__(self, "traces", traces)
        object.__setattr__(self, "group", Group(self.group))

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    def __getitem__(self, i):
        return self.traces[i]

    @property
    def is_aligned(self) -> bool:
        first = self.traces[0].grid
        return all(tr.grid.matches(first) for tr in self.traces[1:])


# --------------------------------------------------------------------------
# CSV I/O

def _parse_float(text, lineno):
    try:
        value = float(text)
    except ValueError:
        raise TraceFormatError(f"cannot parse number {text!r}", lineno) from None
    if not math.isfinite(value):
        raise TraceFormatError(f"non-finite number {text!r}", lineno)
    return value


def load_trace(path, label=None, source=Source.MEASURED) -> SensorTrace:
    """Read a two-column trace CSV.

    Timestamps within 1% of the step from the uniform grid are snapped onto
    it; anything worse is rejected, as is non-increasing time.
    """
    path = Path(path)
    times, values = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if lineno == 1 and line.replace(" ", "") == CSV_HEADER:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise TraceFormatError(f"expected 2 columns, got {len(parts)}", lineno)
            t = _parse_float(parts[0], lineno)
            if times and t <= times[-1]:
                raise TraceFormatError("time is not strictly increasing", lineno)
            times.append(t)
            values.append(_parse_float(parts[1], lineno))
    if len(times) < 2:
        raise TraceFormatError(f"{path}: need at least 2 samples, got {len(times)}")
    grid = _snap_grid(np.asarray(times), path)
    return SensorTrace(grid, np.asarray(values), label or path.stem, source)


def _snap_grid(times, path):
    n = times.size
    dt = (times[-1] - times[0]) / (n - 1)
    ideal = times[0] + dt * np.arange(n)
    worst = np.max(np.abs(times - ideal))
    if worst > JITTER_TOLERANCE * dt:
        raise TraceFormatError(
            f"{path}: timestamps deviate from a uniform grid by {worst:.3g} s "
            f"(> {JITTER_TOLERANCE:.0%} of step {dt:.6g} s)")
    if times[0] <= 0:
        raise TraceFormatError(f"{path}: first timestamp must be > 0")
    return TimeGrid(float(times[0]), float(dt), n)


def save_trace(trace: SensorTrace, path, header=True):
    """Write a trace as CSV using shortest round-trip float formatting."""
    lines = [CSV_HEADER] if header else []
    lines += [f"{t!r},{v!r}" for t, v in zip(trace.times.tolist(), trace.values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> TrialSet:
    """Load a ``{"group": ..., "files": [...]}`` manifest; paths are relative to it."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    if not isinstance(doc, dict) or "files" not in doc:
        raise TraceFormatError(f"{path}: manifest must be an object with a 'files' list")
    files = doc["files"]
    if not isinstance(files, list) or not files:
        raise UsageError(f"{path}: manifest lists no trace files")
    try:
        group = Group(doc.get("group", "other"))
    except ValueError:
        raise TraceFormatError(f"{path}: unknown group {doc.get('group')!r}") from None
    traces = [load_trace(path.parent / f) for f in files]
    return TrialSet(traces, group)


def save_manifest(path, group, files):
    doc = {"group": Group(group).value, "files": [str(f) for f in files]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Preprocessing

def baseline_subtract(trace: SensorTrace, window: int = 1) -> SensorTrace:
    """Zero the starting voltage by subtracting the mean of the first ``window`` samples.

    The default window of 1 subtracts the first sample exactly.
    """
    if window < 1:
        raise DomainError("baseline window must be >= 1")
    base = trace.values[0] if window == 1 else trace.values[:window].mean()
    return trace.with_values(trace.values - base)


def truncate(trace: SensorTrace, horizon: float) -> SensorTrace:
    """Keep the samples with ``t <= horizon``."""
    if not horizon > 0:
        raise DomainError(f"horizon must be > 0, got {horizon}")
    g = trace.grid
    keep = int(math.floor((horizon - g.t0) / g.dt + 1e-9)) + 1
    if keep < 2:
        raise DegenerateInputError(
            f"horizon {horizon} s leaves fewer than 2 samples (grid starts at {g.t0} s)")
    if keep >= g.count:
        return trace
    return replace(trace, grid=TimeGrid(g.t0, g.dt, keep), values=trace.values[:keep])


def preprocess(trace: SensorTrace, horizon=5.0, baseline_window=1) -> SensorTrace:
    """Baseline subtraction followed by truncation to the fitting window."""
    trace = baseline_subtract(trace, baseline_window)
    return truncate(trace, horizon) if horizon is not None else trace


def align(trials: TrialSet) -> TrialSet:
    """Resample all traces onto the coarsest step over the common time range."""
    if trials.is_aligned:
        return trials
    t0 = max(tr.grid.t0 for tr in trials)
    t_end = min(tr.grid.t_end for tr in trials)
    dt = max(tr.grid.dt for tr in trials)
    if t_end - t0 < dt * (1 - 1e-9):
        raise AlignmentError(
            f"common time range [{t0}, {t_end}] is shorter than one step of {dt} s")
    grid = TimeGrid.spanning(t0, t_end, dt)
    t = grid.times
    out = [SensorTrace(grid, np.interp(t, tr.times, tr.values), tr.label, tr.source)
           for tr in trials]
    return TrialSet(out, trials.group)


def check_aligned(*traces: SensorTrace):
    first = traces[0].grid
    for tr in traces[1:]:
        if not tr.grid.matches(first):
            raise AlignmentError(
                f"grid mismatch between {traces[0].label!r} and {tr.label!r}")


def average_traces(trials: TrialSet | Sequence[SensorTrace]) -> SensorTrace:
    """Pointwise mean over an aligned trial set."""
    traces = list(trials)
    if not traces:
        raise DegenerateInputError("cannot average an empty set")
    check_aligned(*traces)
    mean = np.mean(np.stack([tr.values for tr in traces]), axis=0)
    first = traces[0]
    return SensorTrace(first.grid, mean, f"mean of {len(traces)}", first.source)
