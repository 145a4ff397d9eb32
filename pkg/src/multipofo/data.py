"""Load series ingestion, gap filling, chronological splits and min-max scaling.

CSV layout (header required, ``#`` comment lines allowed before it)::

    timestamp,circuit_id,load_kw
    2020-01-01T00:00:00Z,c71,812.5

Timestamps are ISO-8601; naive timestamps are read as UTC. An empty
``load_kw`` field marks a missing observation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import FitError, ParseError, SplitError, ValidationError

CSV_HEADER = ("timestamp", "circuit_id", "load_kw")
DEFAULT_STEP = timedelta(minutes=30)
GAP_POLICIES = ("linear", "forward", "reject")


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled load in kW. NaN entries mark gaps not yet filled."""

    circuit_id: str
    start_time: datetime
    values: np.ndarray
    step: timedelta = DEFAULT_STEP

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValidationError(f"{self.circuit_id}: values must be 1-D")
        if np.any(np.isinf(values)):
            raise ValidationError(f"{self.circuit_id}: infinite load value")
        if self.step <= timedelta(0):
            raise ValidationError(f"{self.circuit_id}: step must be positive")
        if self.start_time.tzinfo is None:
            object.__setattr__(self, "start_time", self.start_time.replace(tzinfo=timezone.utc))
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.circuit_id == other.circuit_id
            and self.start_time == other.start_time
            and self.step == other.step
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    @property
    def has_gaps(self) -> bool:
        return bool(np.any(np.isnan(self.values)))

    @property
    def end_time(self) -> datetime:
        """Timestamp of the last observation."""
        return self.time_at(len(self) - 1)

    def time_at(self, index: int) -> datetime:
        return self.start_time + index * self.step

    def index_of(self, ts: datetime) -> int:
        """Index of the first observation at or after ``ts``."""
        offset = (ts - self.start_time) / self.step
        return max(0, math.ceil(offset))

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.circuit_id, self.time_at(start), self.values[start:stop], self.step)

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.circuit_id, self.start_time, values, self.step)


def ingest_csv(path, step: timedelta | None = None) -> list[TimeSeries]:
    """Read a load CSV into one time-sorted series per circuit.

    Missing grid points become NaN gaps (see :func:`fill_gaps`). ``step`` is
    inferred per circuit as the smallest spacing when not given.
    """
    path = Path(path)
    rows: dict[str, list[tuple[datetime, float, int]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header_seen = False
        for row in reader:
            lineno = reader.line_num
            if not row or (row[0].lstrip().startswith("#")):
                continue
            if not header_seen:
                if tuple(c.strip() for c in row) != CSV_HEADER:
                    raise ParseError(f"{path}:{lineno}: expected header {','.join(CSV_HEADER)}")
                header_seen = True
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            ts_text, circuit, load_text = (c.strip() for c in row)
            try:
                ts = parse_timestamp(ts_text)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad timestamp {ts_text!r}") from None
            if not circuit:
                raise ParseError(f"{path}:{lineno}: empty circuit_id")
            if load_text == "":
                load = math.nan
            else:
                try:
                    load = float(load_text)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad load value {load_text!r}") from None
                if not math.isfinite(load):
                    raise ParseError(f"{path}:{lineno}: non-finite load value {load_text!r}")
            rows.setdefault(circuit, []).append((ts, load, lineno))
        if not header_seen:
            raise ParseError(f"{path}: missing header {','.join(CSV_HEADER)}")

    return [_assemble(circuit, rows[circuit], step) for circuit in sorted(rows)]


def _assemble(circuit: str, rows, step: timedelta | None) -> TimeSeries:
    rows = sorted(rows, key=lambda r: r[0])
    for (t0, _, _), (t1, _, line) in zip(rows, rows[1:]):
        if t0 == t1:
            raise ValidationError(
                f"duplicate timestamp {format_timestamp(t1)} for circuit {circuit!r} (line {line})"
            )
    start = rows[0][0]
    if step is None:
        diffs = [b[0] - a[0] for a, b in zip(rows, rows[1:])]
        step = min(diffs) if diffs else DEFAULT_STEP
    offsets = []
    for ts, _, line in rows:
        q, r = divmod(ts - start, step)
        if r:
            raise ValidationError(
                f"non-uniform step for circuit {circuit!r}: {format_timestamp(ts)} (line {line}) "
                f"is not on the {step} grid starting at {format_timestamp(start)}"
            )
        offsets.append(q)
    values = np.full(offsets[-1] + 1, np.nan)
    values[offsets] = [r[1] for r in rows]
    return TimeSeries(circuit, start, values, step)


def write_csv(series_list, path, comments=()) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for series in series_list:
            for i, v in enumerate(series.values):
                writer.writerow(
                    (format_timestamp(series.time_at(i)), series.circuit_id, "" if np.isnan(v) else repr(float(v)))
                )


def _gap_runs(values: np.ndarray) -> list[tuple[int, int]]:
    missing = np.isnan(values).astype(np.int8)
    edges = np.diff(np.concatenate(([0], missing, [0])))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def fill_gaps(series: TimeSeries, policy: str = "linear") -> TimeSeries:
    if policy not in GAP_POLICIES:
        raise ValueError(f"unknown gap policy {policy!r}; choose from {GAP_POLICIES}")
    values = np.array(series.values)
    runs = _gap_runs(values)
    if not runs:
        return series

    def describe(a, b):
        return f"{format_timestamp(series.time_at(a))}..{format_timestamp(series.time_at(b - 1))} ({b - a} steps)"

    if policy == "reject":
        extents = ", ".join(describe(a, b) for a, b in runs)
        raise ValidationError(f"circuit {series.circuit_id!r} has gaps: {extents}")
    first, _ = runs[0]
    if first == 0:
        raise ValidationError(
            f"circuit {series.circuit_id!r}: gap at series start {describe(*runs[0])} cannot be filled ({policy})"
        )
    if policy == "forward":
        for a, b in runs:
            values[a:b] = values[a - 1]
    else:
        _, last = runs[-1]
        if last == len(values):
            raise ValidationError(
                f"circuit {series.circuit_id!r}: gap at series end {describe(*runs[-1])} has no right anchor"
            )
        known = np.flatnonzero(~np.isnan(values))
        missing = np.flatnonzero(np.isnan(values))
        values[missing] = np.interp(missing, known, values[known])
    return series.with_values(values)


@dataclass(frozen=True)
class Scaler:
    min: float
    max: float
    fitted_on: str = ""

    def __post_init__(self):
        if not self.max > self.min:
            raise FitError(f"scaler needs max > min, got min={self.min} max={self.max}")

    def transform(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.min) / (self.max - self.min)

    def inverse(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * (self.max - self.min) + self.min

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "fitted_on": self.fitted_on}

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        return cls(float(d["min"]), float(d["max"]), d.get("fitted_on", ""))


def fit_scaler(series: TimeSeries, range: tuple[int, int] | None = None) -> Scaler:
    """Fit min-max statistics on ``series.values[start:stop]`` (whole series by default).

    Values outside the fitted range are not clipped when transformed.
    """
    start, stop = range if range is not None else (0, len(series))
    values = series.values[start:stop]
    if len(values) == 0:
        raise FitError(f"circuit {series.circuit_id!r}: empty fit range")
    if np.any(np.isnan(values)):
        raise FitError(f"circuit {series.circuit_id!r}: fill gaps before fitting a scaler")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        raise FitError(f"circuit {series.circuit_id!r}: constant series (value {lo}) cannot be min-max scaled")
    return Scaler(lo, hi, f"{series.circuit_id}[{start}:{stop}]")


def transform(scaler: Scaler, values) -> np.ndarray:
    return scaler.transform(values)


def inverse(scaler: Scaler, values) -> np.ndarray:
    return scaler.inverse(values)


@dataclass(frozen=True)
class SplitSpec:
    """Training covers ``[start, train_end)``, testing covers ``[test_start, end]``."""

    train_end: datetime
    test_start: datetime

    def __post_init__(self):
        for name in ("train_end", "test_start"):
            ts = getattr(self, name)
            if ts.tzinfo is None:
                object.__setattr__(self, name, ts.replace(tzinfo=timezone.utc))
        if self.train_end > self.test_start:
            raise SplitError(
                f"train_end {format_timestamp(self.train_end)} is after test_start {format_timestamp(self.test_start)}"
            )

    @classmethod
    def at(cls, boundary: datetime) -> "SplitSpec":
        return cls(boundary, boundary)

    @classmethod
    def from_fraction(cls, series: TimeSeries, fraction: float) -> "SplitSpec":
        if not 0.0 < fraction < 1.0:
            raise SplitError(f"train fraction must lie in (0, 1), got {fraction}")
        return cls.at(series.time_at(int(round(fraction * len(series)))))


def split(series: TimeSeries, spec: SplitSpec) -> tuple[TimeSeries, TimeSeries]:
    train_stop = min(series.index_of(spec.train_end), len(series))
    test_start = min(series.index_of(spec.test_start), len(series))
    if train_stop == 0:
        raise SplitError(f"circuit {series.circuit_id!r}: empty training partition before {format_timestamp(spec.train_end)}")
    if test_start >= len(series):
        raise SplitError(f"circuit {series.circuit_id!r}: empty test partition from {format_timestamp(spec.test_start)}")
    return series.slice(0, train_stop), series.slice(test_start, len(series))
