"""Trace ingestion: delimited text in, clean ordered call events out.

A trace file carries one call event per line.  The physical column layout is
configurable (delimiter, optional header row, column names); logically every
event must provide a caller service, a callee service, and a millisecond
timestamp.  Parsing is forgiving (malformed lines are counted and skipped),
cleaning is strict (only events satisfying the invariants survive).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ConfigError

#: Physical layout of a trace file and the binding of logical columns
#: (caller / callee / timestamp) to physical column names.
@dataclass(frozen=True)
class TraceFormat:
    columns: tuple[str, ...] = ("timestamp", "um", "dm")
    caller: str = "um"
    callee: str = "dm"
    timestamp: str = "timestamp"
    delimiter: str = ","
    header: bool = True
    comment: str = "#"


@dataclass(frozen=True, slots=True)
class RawEvent:
    """One parsed line; may still violate the cleaning rules."""

    caller: str
    callee: str
    timestamp: int
    attrs: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class CleanEvent:
    """A validated call event: non-empty endpoints, timestamp in [0, t_max]."""

    caller: str
    callee: str
    timestamp: int


def _data_lines(lines: Iterable[str], comment: str) -> Iterator[str]:
    for line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        if comment and stripped.startswith(comment):
            continue
        yield stripped


def parse_trace(lines: Iterable[str], fmt: TraceFormat = TraceFormat()) -> tuple[list[RawEvent], int]:
    """Parse a line-oriented trace stream.

    Returns (events, skipped) where `skipped` counts malformed lines: wrong
    field count or an unparseable timestamp.  Fractional timestamps are
    truncated toward zero.  With ``fmt.header`` the first data line names the
    columns and overrides ``fmt.columns``.
    """
    stream = _data_lines(lines, fmt.comment)
    columns = fmt.columns
    if fmt.header:
        try:
            header_line = next(stream)
        except StopIteration:
            return [], 0
        columns = tuple(name.strip() for name in next(csv.reader([header_line], delimiter=fmt.delimiter)))
    if not columns:
        raise ConfigError("trace format needs column names (no header row, no configured columns)")
    for logical, name in (("caller", fmt.caller), ("callee", fmt.callee), ("timestamp", fmt.timestamp)):
        if name not in columns:
            raise ConfigError(f"trace schema is missing the {logical} column {name!r}")
    caller_i = columns.index(fmt.caller)
    callee_i = columns.index(fmt.callee)
    ts_i = columns.index(fmt.timestamp)
    extra = [(i, name) for i, name in enumerate(columns) if i not in (caller_i, callee_i, ts_i)]

    events: list[RawEvent] = []
    skipped = 0
    for row in csv.reader(stream, delimiter=fmt.delimiter):
        if len(row) != len(columns):
            skipped += 1
            continue
        try:
            # int(float(...)) truncates fractional milliseconds toward zero.
            ts = int(float(row[ts_i]))
        except ValueError:
            skipped += 1
            continue
        attrs = {name: row[i] for i, name in extra}
        events.append(RawEvent(row[caller_i].strip(), row[callee_i].strip(), ts, attrs))
    return events, skipped


def parse_trace_file(path: str | Path, fmt: TraceFormat = TraceFormat()) -> tuple[list[RawEvent], int]:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_trace(handle, fmt)


def clean_trace(events: Iterable[RawEvent], t_max: int) -> list[CleanEvent]:
    """Keep events with non-empty endpoints and timestamp in [0, t_max].

    The result is sorted by timestamp with a stable sort, so same-timestamp
    events keep their input order.  Duplicate events are retained: each call
    instance matters for the multigraph downstream.
    """
    if t_max <= 0:
        raise ConfigError(f"t_max must be positive, got {t_max}")
    kept = [
        CleanEvent(e.caller, e.callee, e.timestamp)
        for e in events
        if e.caller and e.callee and 0 <= e.timestamp <= t_max
    ]
    kept.sort(key=lambda e: e.timestamp)
    return kept


def write_trace(events: Iterable[CleanEvent], path: str | Path, header_comment: str | None = None) -> None:
    """Write events in the default format this module reads (round-trip)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        handle.write("timestamp,um,dm\n")
        for event in events:
            handle.write(f"{event.timestamp},{event.caller},{event.callee}\n")
