"""Append-only JSONL event log with strict sequencing.

One self-describing record per line, preceded by a schema-version header
record. Sequence numbers are dense and strictly increasing; replay rejects
the first record that breaks the contract.
"""
from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

from .errors import CorruptLog, SeqGap

SCHEMA_VERSION = 1


class EventKind(Enum):
    Init = "Init"
    HypothesisChosen = "HypothesisChosen"
    Executed = "Executed"
    GateOutcome = "GateOutcome"
    Decision = "Decision"
    MemoryCommit = "MemoryCommit"
    BudgetChange = "BudgetChange"
    TreeUpdate = "TreeUpdate"
    Final = "Final"


@dataclass(frozen=True)
class RunEvent:
    seq: int
    logical_time: int
    trace_id: int
    kind: EventKind
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "logical_time": self.logical_time,
                "trace_id": self.trace_id,
                "kind": self.kind.value,
                "payload": self.payload,
            },
            ensure_ascii=True,
            sort_keys=True,
        )


class LogicalClock:
    """Monotone counter standing in for wall-clock time so deterministic
    replays are byte-stable."""

    def __init__(self):
        self._now = 0

    def tick(self) -> int:
        self._now += 1
        return self._now

    @property
    def now(self) -> int:
        return self._now


class EventLog:
    """File-backed appender. Producers call emit(); append_event() enforces
    the dense-sequence precondition and flushes per event."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._last_seq = 0
        self._lock = threading.Lock()
        header = json.dumps(
            {"kind": "Header", "schema_version": SCHEMA_VERSION},
            ensure_ascii=True, sort_keys=True,
        )
        self._fh = self.path.open("w", encoding="utf-8")
        self._fh.write(header + "\n")
        self._fh.flush()

    def append_event(self, event: RunEvent) -> None:
        with self._lock:
            if event.seq != self._last_seq + 1:
                raise SeqGap(
                    f"expected seq {self._last_seq + 1}, got {event.seq}"
                )
            self._fh.write(event.to_json() + "\n")
            self._fh.flush()
            self._last_seq = event.seq

    def emit(self, kind: EventKind, trace_id: int, payload: dict,
             *, logical_time: int) -> RunEvent:
        with self._lock:
            seq = self._last_seq + 1
        event = RunEvent(seq=seq, logical_time=logical_time,
                         trace_id=trace_id, kind=kind, payload=payload)
        self.append_event(event)
        return event

    @property
    def last_seq(self) -> int:
        with self._lock:
            return self._last_seq

    def close(self) -> None:
        with self._lock:
            self._fh.close()


class QueueAppender:
    """Single appender task fed over an ordered queue; producers never touch
    the file directly. Used by live (threaded) runs."""

    def __init__(self, log: EventLog):
        self._log = log
        self._queue: queue.Queue = queue.Queue()
        self._worker = threading.Thread(target=self._drain, daemon=True)
        self._stamp_lock = threading.Lock()
        self._next_seq = log.last_seq + 1
        self._worker.start()

    def emit(self, kind: EventKind, trace_id: int, payload: dict,
             *, logical_time: int) -> None:
        # stamp the sequence here so queue order equals sequence order
        with self._stamp_lock:
            seq = self._next_seq
            self._next_seq += 1
            self._queue.put(RunEvent(seq=seq, logical_time=logical_time,
                                     trace_id=trace_id, kind=kind,
                                     payload=payload))

    def _drain(self) -> None:
        while True:
            event = self._queue.get()
            if event is None:
                return
            self._log.append_event(event)
            self._queue.task_done()

    def flush(self) -> None:
        self._queue.join()

    def close(self) -> None:
        self._queue.join()
        self._queue.put(None)
        self._worker.join(timeout=5)


def read_log(path: str | Path) -> tuple[Optional[dict], list[RunEvent]]:
    """Parse a log file. Returns (header, events); raises CorruptLog with
    the first bad sequence number on any structural violation."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header: Optional[dict] = None
    events: list[RunEvent] = []
    expected_seq = 1
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLog(f"line {i + 1} is not valid JSON: {exc}",
                             first_bad_seq=expected_seq) from exc
        if i == 0 and obj.get("kind") == "Header":
            header = obj
            continue
        try:
            event = RunEvent(
                seq=int(obj["seq"]),
                logical_time=int(obj["logical_time"]),
                trace_id=int(obj["trace_id"]),
                kind=EventKind(obj["kind"]),
                payload=obj["payload"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptLog(f"line {i + 1} is not a valid event: {exc}",
                             first_bad_seq=expected_seq) from exc
        if event.seq != expected_seq:
            raise CorruptLog(
                f"sequence gap at line {i + 1}: expected {expected_seq}, got {event.seq}",
                first_bad_seq=expected_seq,
            )
        events.append(event)
        expected_seq += 1
    return header, events


def iter_events(path: str | Path) -> Iterator[RunEvent]:
    _, events = read_log(path)
    yield from events
