"""Node mapping and time windowing.

Service names become dense integer ids; events become (src, dst, timestamp)
triples; the trace horizon [0, t_max) is cut into fixed-width half-open
windows which are then split into a training prefix and a test suffix.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError, MappingError
from .ingest import CleanEvent


@dataclass
class NodeMapping:
    """Bijection between service names and dense ids 0..n_nodes-1."""

    forward: dict[str, int] = field(default_factory=dict)
    reverse: list[str] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.reverse)

    def add(self, name: str) -> int:
        """Assign the next free id to `name` (no-op if already mapped)."""
        if name in self.forward:
            return self.forward[name]
        node_id = len(self.reverse)
        self.forward[name] = node_id
        self.reverse.append(name)
        return node_id


@dataclass(frozen=True, slots=True)
class MappedEvent:
    src: int
    dst: int
    timestamp: int


@dataclass
class TimeWindow:
    """Half-open interval [start, end) and the events that fall inside it."""

    index: int
    start: int
    end: int
    events: list[MappedEvent] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.end - self.start


def build_node_mapping(events: Sequence[CleanEvent]) -> NodeMapping:
    """Ids in first-occurrence order over the caller column, then the callee
    column (the concatenation of the two name columns, deduplicated)."""
    mapping = NodeMapping()
    for event in events:
        mapping.add(event.caller)
    for event in events:
        mapping.add(event.callee)
    return mapping


def apply_mapping(
    events: Iterable[CleanEvent], mapping: NodeMapping, strict: bool = True
) -> list[MappedEvent]:
    """Translate names to ids.

    Strict mode raises on a name the mapping does not know; lenient mode
    grows the mapping in place by appending fresh ids.
    """
    mapped: list[MappedEvent] = []
    forward = mapping.forward
    for event in events:
        for name in (event.caller, event.callee):
            if name not in forward:
                if strict:
                    raise MappingError(f"unknown service {name!r} has no node id")
                mapping.add(name)
        mapped.append(MappedEvent(forward[event.caller], forward[event.callee], event.timestamp))
    return mapped


def segment_windows(events: Sequence[MappedEvent], w_size: int, t_max: int) -> list[TimeWindow]:
    """Partition [0, t_max) into windows [k*w_size, (k+1)*w_size).

    The final window is clipped to t_max when the horizon is not a multiple
    of the width, so the windows tile [0, t_max) exactly.  Every event is
    assigned to exactly one window by integer division of its timestamp; an
    event outside [0, t_max) is a contract violation.
    """
    if w_size <= 0:
        raise ConfigError(f"window size must be positive, got {w_size}")
    if t_max <= 0:
        raise ConfigError(f"t_max must be positive, got {t_max}")
    n_windows = -(-t_max // w_size)
    windows = [
        TimeWindow(i, i * w_size, min((i + 1) * w_size, t_max)) for i in range(n_windows)
    ]
    for event in events:
        if not 0 <= event.timestamp < t_max:
            raise DataError(
                f"event at t={event.timestamp} lies outside the horizon [0, {t_max})"
            )
        windows[event.timestamp // w_size].events.append(event)
    return windows


def span_window(events: Iterable[MappedEvent], start: int, end: int, index: int = 0) -> TimeWindow:
    """One window covering [start, end) (the non-temporal degenerate case)."""
    if end <= start:
        raise ConfigError(f"empty span [{start}, {end})")
    window = TimeWindow(index, start, end)
    window.events = [e for e in events if start <= e.timestamp < end]
    return window


def split_train_test(
    windows: Sequence[TimeWindow], t_train: int, t_max: int
) -> tuple[list[TimeWindow], list[TimeWindow]]:
    """Train = windows entirely before t_train; test = the rest up to t_max."""
    if not 0 < t_train < t_max:
        raise ConfigError(f"need 0 < t_train < t_max, got t_train={t_train}, t_max={t_max}")
    if windows:
        w_size = windows[0].width
        if t_train % w_size != 0:
            raise ConfigError(
                f"t_train={t_train} is not a multiple of the window size {w_size}; "
                "a window would straddle the split"
            )
    train = [w for w in windows if w.end <= t_train]
    test = [w for w in windows if t_train <= w.start < t_max]
    return train, test


# ---------------------------------------------------------------------------
# mapping persistence

def save_mapping(mapping: NodeMapping, path: str | Path) -> None:
    """One `id<TAB>name` line per service, ascending by id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_mapping(mapping))


def serialize_mapping(mapping: NodeMapping) -> bytes:
    lines = [f"{i}\t{name}\n" for i, name in enumerate(mapping.reverse)]
    return "".join(lines).encode("utf-8")


def load_mapping(path: str | Path) -> NodeMapping:
    mapping = NodeMapping()
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                id_text, name = line.split("\t", 1)
                node_id = int(id_text)
            except ValueError as exc:
                raise DataError(f"bad mapping line {line_no + 1}: {line!r}") from exc
            if node_id != mapping.n_nodes:
                raise DataError(f"mapping ids must be dense and ascending, got {node_id} at line {line_no + 1}")
            mapping.add(name)
    return mapping


def mapping_digest(mapping: NodeMapping) -> str:
    """Stable fingerprint used to pair checkpoints with their id space."""
    return hashlib.sha256(serialize_mapping(mapping)).hexdigest()
