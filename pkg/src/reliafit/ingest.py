"""Crash-event parsing, version ordering and per-period grouping.

Two on-disk event formats are accepted, both UTF-8:

* CSV with header ``app_id,version,timestamp,device,region``
* JSON-lines, one object per line with the same keys

Timestamps are ISO 8601 in UTC (``2012-09-19T14:03:00Z``). Naive timestamps
are read as UTC; any other offset is rejected.

A third, pre-grouped CSV layout (``app_id,version,granularity,period,count``)
carries already-aggregated series, e.g. noiseless simulated data whose counts
are not integers.
"""
from __future__ import annotations

import calendar
import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Iterable, Literal, Sequence

import numpy as np

Granularity = Literal["day", "week", "month"]
GRANULARITIES: tuple[str, ...] = ("day", "week", "month")
EVENT_FIELDS = ("app_id", "version", "timestamp", "device", "region")
GROUPED_FIELDS = ("app_id", "version", "granularity", "period", "count")

DEFAULT_EPSILON_HOURS = 1e-6


class IngestError(ValueError):
    """Base class for input problems."""


class ParseError(IngestError):
    def __init__(self, line: int, field_name: str, message: str):
        self.line = line
        self.field = field_name
        super().__init__(f"line {line}, field {field_name!r}: {message}")


class NoEventsError(IngestError):
    pass


class EmptySelectionError(IngestError):
    def __init__(self, app_id: str, version: str):
        self.app_id = app_id
        self.version = version
        super().__init__(f"no events for app {app_id!r} version {version!r}")


@dataclass(frozen=True)
class FailureEvent:
    app_id: str
    version: str
    timestamp: datetime
    device: str | None = None
    region: str | None = None

    def __post_init__(self):
        if not self.app_id:
            raise ValueError("app_id must be non-empty")
        if not self.version:
            raise ValueError("version must be non-empty")
        if self.timestamp.tzinfo is None or self.timestamp.utcoffset() != timedelta(0):
            raise ValueError("timestamp must be timezone-aware UTC")


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FailureSeries:
    """Per-version failure counts on consecutive calendar periods.

    ``counts`` are usually integers; simulated noiseless series carry real
    expected counts, so everything is stored as float.
    """

    app_id: str
    version: str
    granularity: str
    origin: datetime
    period_index: np.ndarray
    counts: np.ndarray
    cumulative: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        idx = _frozen(self.period_index, dtype=np.int64)
        counts = _frozen(self.counts)
        if idx.ndim != 1 or len(idx) < 1 or len(idx) != len(counts):
            raise ValueError("period_index and counts must be equal-length, non-empty")
        if idx[0] < 1 or np.any(np.diff(idx) <= 0):
            raise ValueError("period_index must be positive and strictly increasing")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        cumulative = _frozen(np.cumsum(counts))
        if self.cumulative is not None and not np.allclose(
            self.cumulative, cumulative, rtol=0, atol=1e-9
        ):
            raise ValueError("cumulative does not match running sum of counts")
        object.__setattr__(self, "period_index", idx)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "cumulative", cumulative)

    def __len__(self) -> int:
        return len(self.period_index)

    @property
    def t(self) -> np.ndarray:
        return self.period_index.astype(float)

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])


@dataclass(frozen=True, eq=False)
class EventTimeline:
    """Strictly increasing event times (hours) and the observation end."""

    elapsed_times: np.ndarray
    observation_end: float

    def __post_init__(self):
        times = _frozen(self.elapsed_times)
        if times.ndim != 1:
            raise ValueError("elapsed_times must be one-dimensional")
        if len(times) and (times[0] <= 0 or np.any(np.diff(times) <= 0)):
            raise ValueError("elapsed_times must be positive and strictly increasing")
        if len(times) and self.observation_end < times[-1]:
            raise ValueError("observation_end precedes the last event")
        if self.observation_end <= 0:
            raise ValueError("observation_end must be positive")
        object.__setattr__(self, "elapsed_times", times)
        object.__setattr__(self, "observation_end", float(self.observation_end))

    def __len__(self) -> int:
        return len(self.elapsed_times)


# -- parsing -----------------------------------------------------------------


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO 8601 UTC timestamp, truncated to whole seconds."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)  # raises ValueError
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    elif ts.utcoffset() != timedelta(0):
        raise ValueError(f"non-UTC offset {ts.utcoffset()}")
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _event_from_record(record: dict, line: int) -> FailureEvent:
    values = {}
    for name in ("app_id", "version", "timestamp"):
        raw = record.get(name)
        if raw is None or not str(raw).strip():
            raise ParseError(line, name, "missing value")
        values[name] = str(raw).strip()
    try:
        ts = parse_timestamp(values["timestamp"])
    except ValueError as exc:
        raise ParseError(line, "timestamp", f"invalid timestamp {values['timestamp']!r} ({exc})") from None
    optional = {}
    for name in ("device", "region"):
        raw = record.get(name)
        optional[name] = str(raw).strip() or None if raw is not None else None
    return FailureEvent(values["app_id"], values["version"], ts, **optional)


def _read_text(source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes().decode("utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def detect_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson", ".json"):
        return "json-lines"
    return "csv"


def parse_events(source: IO | str | Path, format: str | None = None) -> list[FailureEvent]:
    """Parse crash events from a CSV or JSON-lines source.

    Parameters
    ----------
    source : path or file-like
        Byte or text stream; paths are opened and read as UTF-8.
    format : {"csv", "json-lines"}, optional
        Inferred from the file extension when ``source`` is a path.

    Returns
    -------
    list of FailureEvent
        In file order.

    Raises
    ------
    ParseError
        On a malformed row, carrying the 1-based line number and field.
    NoEventsError
        When the source holds no data rows.
    """
    if format is None:
        if not isinstance(source, (str, Path)):
            raise ValueError("format is required for stream sources")
        format = detect_format(source)
    text = _read_text(source)
    if format == "csv":
        events = _parse_csv(text)
    elif format in ("json-lines", "jsonl"):
        events = _parse_jsonl(text)
    else:
        raise ValueError(f"unknown format {format!r}")
    if not events:
        raise NoEventsError("input contains no events")
    return events


def _parse_csv(text: str) -> list[FailureEvent]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        return []
    header = [h.strip() for h in header]
    missing = [f for f in ("app_id", "version", "timestamp") if f not in header]
    if missing:
        raise ParseError(1, missing[0], "required column missing from header")
    events = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) > len(header):
            raise ParseError(line, header[-1], f"expected {len(header)} fields, got {len(row)}")
        record = dict(zip(header, row))
        events.append(_event_from_record(record, line))
    return events


def _parse_jsonl(text: str) -> list[FailureEvent]:
    events = []
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(line, "<record>", f"invalid JSON ({exc.msg})") from None
        if not isinstance(record, dict):
            raise ParseError(line, "<record>", "expected a JSON object")
        events.append(_event_from_record(record, line))
    return events


def write_events_csv(events: Iterable[FailureEvent], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(EVENT_FIELDS)
    for ev in events:
        writer.writerow(
            [ev.app_id, ev.version, format_timestamp(ev.timestamp), ev.device or "", ev.region or ""]
        )


def is_grouped_header(text: str) -> bool:
    first = text.lstrip("﻿").split("\n", 1)[0]
    return [h.strip() for h in first.split(",")] == list(GROUPED_FIELDS)


def parse_grouped(source: IO | str | Path, origin: datetime | None = None) -> list[FailureSeries]:
    """Read pre-grouped series (one row per period) into FailureSeries objects.

    Periods absent from the file are filled with zero counts.
    """
    text = _read_text(source)
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != list(GROUPED_FIELDS):
        raise ParseError(1, "<header>", "expected header " + ",".join(GROUPED_FIELDS))
    rows: dict[tuple[str, str, str], dict[int, float]] = {}
    for row in reader:
        line = reader.line_num
        for name in GROUPED_FIELDS:
            if not (row.get(name) or "").strip():
                raise ParseError(line, name, "missing value")
        gran = row["granularity"].strip()
        if gran not in GRANULARITIES:
            raise ParseError(line, "granularity", f"unknown granularity {gran!r}")
        try:
            period = int(row["period"])
        except ValueError:
            raise ParseError(line, "period", f"not an integer: {row['period']!r}") from None
        if period < 1:
            raise ParseError(line, "period", "periods are 1-based")
        try:
            count = float(row["count"])
        except ValueError:
            raise ParseError(line, "count", f"not a number: {row['count']!r}") from None
        if not np.isfinite(count) or count < 0:
            raise ParseError(line, "count", "must be finite and nonnegative")
        key = (row["app_id"].strip(), row["version"].strip(), gran)
        bucket = rows.setdefault(key, {})
        if period in bucket:
            raise ParseError(line, "period", f"duplicate period {period}")
        bucket[period] = count
    if not rows:
        raise NoEventsError("input contains no rows")
    origin = origin or datetime(1970, 1, 1, tzinfo=timezone.utc)
    out = []
    for (app, version, gran), bucket in rows.items():
        last = max(bucket)
        idx = np.arange(1, last + 1)
        counts = [bucket.get(int(i), 0.0) for i in idx]
        out.append(FailureSeries(app, version, gran, origin, idx, counts))
    return out


def write_grouped_csv(series: Sequence[FailureSeries], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(GROUPED_FIELDS)
    for s in series:
        for i, c in zip(s.period_index, s.counts):
            writer.writerow([s.app_id, s.version, s.granularity, int(i), repr(float(c))])


# -- versions ----------------------------------------------------------------

_TOKEN = re.compile(r"\d+|[^\d.]+")


def _version_key(version: str):
    # Numeric tokens sort before text tokens; a shorter prefix sorts first.
    key = []
    for part in version.split("."):
        for tok in _TOKEN.findall(part):
            key.append((0, int(tok), "") if tok.isdigit() else (1, 0, tok))
    return key, version


def sort_versions(versions: Iterable[str]) -> list[str]:
    """Order version strings componentwise, numeric before text.

    >>> sort_versions(["1.10.0", "1.9.2"])
    ['1.9.2', '1.10.0']
    >>> sort_versions(["1.0b", "1.0a", "1.0"])
    ['1.0', '1.0a', '1.0b']
    """
    return sorted(versions, key=_version_key)


# -- grouping ----------------------------------------------------------------


def period_start(ts: datetime | date, granularity: str) -> date:
    d = ts.date() if isinstance(ts, datetime) else ts
    if granularity == "day":
        return d
    if granularity == "week":
        return d - timedelta(days=d.weekday())
    if granularity == "month":
        return d.replace(day=1)
    raise ValueError(f"unknown granularity {granularity!r}")


def _as_utc(d: date) -> datetime:
    return datetime(d.year, d.month, d.day, tzinfo=timezone.utc)


def period_number(origin: date, d: date, granularity: str) -> int:
    """1-based index of the period containing ``d`` relative to ``origin``."""
    if granularity == "day":
        return (d - origin).days + 1
    if granularity == "week":
        return (d - origin).days // 7 + 1
    return (d.year * 12 + d.month) - (origin.year * 12 + origin.month) + 1


def period_bounds(origin: datetime, granularity: str, index: int) -> tuple[datetime, datetime]:
    """UTC start and end instants of period ``index`` (1-based)."""
    if granularity == "day":
        start = origin + timedelta(days=index - 1)
        return start, start + timedelta(days=1)
    if granularity == "week":
        start = origin + timedelta(weeks=index - 1)
        return start, start + timedelta(weeks=1)
    months = origin.year * 12 + origin.month - 1 + index - 1
    y, m = divmod(months, 12)
    start = origin.replace(year=y, month=m + 1, day=1)
    days = calendar.monthrange(y, m + 1)[1]
    return start, start + timedelta(days=days)


def select_events(events: Iterable[FailureEvent], app_id: str, version: str) -> list[FailureEvent]:
    chosen = [ev for ev in events if ev.app_id == app_id and ev.version == version]
    if not chosen:
        raise EmptySelectionError(app_id, version)
    return chosen


def build_series(
    events: Sequence[FailureEvent], app_id: str, version: str, granularity: str
) -> FailureSeries:
    """Group one version's events into consecutive calendar periods.

    Periods start at UTC midnight (day), Monday midnight (week) or the first
    of the month (month) containing the earliest event. Interior periods with
    no failures are kept with a zero count.
    """
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    chosen = select_events(events, app_id, version)
    origin = period_start(min(ev.timestamp for ev in chosen), granularity)
    numbers = [period_number(origin, ev.timestamp.date(), granularity) for ev in chosen]
    counts = np.bincount(numbers, minlength=max(numbers) + 1)[1:]
    idx = np.arange(1, len(counts) + 1)
    return FailureSeries(app_id, version, granularity, _as_utc(origin), idx, counts)


def regroup(series: FailureSeries, granularity: str) -> FailureSeries:
    """Re-aggregate a daily (or same-granularity) series to a coarser one."""
    if granularity == series.granularity:
        return series
    if series.granularity != "day":
        raise ValueError(f"cannot regroup {series.granularity} periods into {granularity}")
    day0 = series.origin.date()
    new_origin = period_start(day0, granularity)
    numbers = [
        period_number(new_origin, day0 + timedelta(days=int(i) - 1), granularity)
        for i in series.period_index
    ]
    counts = np.zeros(max(numbers))
    np.add.at(counts, np.array(numbers) - 1, series.counts)
    idx = np.arange(1, len(counts) + 1)
    return FailureSeries(series.app_id, series.version, granularity, _as_utc(new_origin), idx, counts)


def event_timeline(
    events: Sequence[FailureEvent],
    app_id: str,
    version: str,
    observation_end: datetime | None = None,
    epsilon: float = DEFAULT_EPSILON_HOURS,
) -> EventTimeline:
    """Convert one version's events into elapsed hours for SRGM fitting.

    The first event sits at ``epsilon`` instead of 0, and exact ties are
    pushed apart by successive ``epsilon`` increments. Without an explicit
    ``observation_end`` the timeline ends at its last event.
    """
    chosen = select_events(events, app_id, version)
    stamps = sorted(ev.timestamp for ev in chosen)
    t0 = stamps[0]
    if observation_end is not None and observation_end < stamps[-1]:
        raise ValueError(
            f"observation_end {format_timestamp(observation_end)} precedes "
            f"last event {format_timestamp(stamps[-1])}"
        )
    hours = [(ts - t0).total_seconds() / 3600.0 for ts in stamps]
    elapsed = []
    prev = 0.0
    for h in hours:
        if h <= prev:
            h = prev + epsilon
        elapsed.append(h)
        prev = h
    end = elapsed[-1] if observation_end is None else (observation_end - t0).total_seconds() / 3600.0
    return EventTimeline(np.array(elapsed), max(end, elapsed[-1]))
