"""Shared success memory.

Append-only store of validated (hypothesis, feedback, score-delta) entries
shared across traces. Retrieval is either the best entry by committed delta
or a softmax draw over the interaction potential

    U = alpha * S * exp(-gamma * L) + beta * tanh(delta)

where S is the cosine similarity between the querying hypothesis and the
stored entry, and delta is the entry's score measured against the querying
trace's local best (so the same memory yields different potentials per
trace, deliberately).
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Direction, Hypothesis, IterationRecord, StructuredFeedback, direction_adjusted_delta
from .errors import DomainError, EmptyMemory


@dataclass(frozen=True)
class MemoryEntry:
    hypothesis: Hypothesis
    feedback: StructuredFeedback
    delta: float
    trace_id: int
    iteration: int
    embedding: np.ndarray


@dataclass(frozen=True)
class KernelParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.05

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise DomainError("kernel weights must be non-negative")
        if self.alpha + self.beta <= 0:
            raise DomainError("alpha + beta must be positive")


class SuccessMemory:
    """Single-writer append with snapshot reads; entries are never mutated
    or removed."""

    def __init__(self):
        self._entries: list[MemoryEntry] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def entries(self) -> tuple[MemoryEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def commit(self, record: IterationRecord,
               embedder: Callable[[str], np.ndarray]) -> Optional[MemoryEntry]:
        """Rejected iterations leave the memory untouched; accepted ones
        append exactly one entry (negative deltas included). The embedding
        is computed once here and cached forever."""
        if not record.decision:
            return None
        if record.delta is None:
            raise DomainError("accepted iteration must carry a delta")
        entry = MemoryEntry(
            hypothesis=record.hypothesis,
            feedback=record.feedback,
            delta=record.delta,
            trace_id=record.trace_id,
            iteration=record.iteration,
            embedding=embedder(record.hypothesis.text),
        )
        with self._lock:
            self._entries.append(entry)
        return entry


def interaction_potential(query_embedding: np.ndarray, entry: MemoryEntry,
                          params: KernelParams, iteration_count: int,
                          trace_best: Optional[float],
                          direction: Direction) -> float:
    if iteration_count < 0:
        raise DomainError("iteration count must be >= 0")
    similarity = float(np.dot(query_embedding, entry.embedding))
    entry_score = entry.feedback.perf.current
    if entry_score is None or trace_best is None:
        delta = 0.0
    else:
        delta = direction_adjusted_delta(entry_score, trace_best, direction)
    return (
        params.alpha * similarity * math.exp(-params.gamma * iteration_count)
        + params.beta * math.tanh(delta)
    )


def sample_probabilities(potentials: Sequence[float]) -> np.ndarray:
    """Stable softmax over the interaction potentials."""
    u = np.asarray(potentials, dtype=np.float64)
    u = u - u.max()
    expu = np.exp(u)
    return expu / expu.sum()


def sample_similar(entries: Sequence[MemoryEntry], query_embedding: np.ndarray,
                   params: KernelParams, iteration_count: int,
                   trace_best: Optional[float], direction: Direction,
                   rng: np.random.Generator) -> MemoryEntry:
    if not entries:
        raise EmptyMemory("cannot sample from an empty memory")
    potentials = [
        interaction_potential(query_embedding, entry, params,
                              iteration_count, trace_best, direction)
        for entry in entries
    ]
    probs = sample_probabilities(potentials)
    index = int(rng.choice(len(entries), p=probs))
    return entries[index]


def best_entry(entries: Sequence[MemoryEntry]) -> MemoryEntry:
    """Entry with the maximal committed delta; ties go to the earliest
    committed entry."""
    if not entries:
        raise EmptyMemory("memory has no entries")
    best = entries[0]
    for entry in entries[1:]:
        if entry.delta > best.delta:
            best = entry
    return best


def snapshot_records(entries: Sequence[MemoryEntry]) -> list[dict]:
    """Serialized form used by replay and the report command."""
    return [
        {
            "hypothesis": entry.hypothesis.text,
            "delta": entry.delta,
            "trace_id": entry.trace_id,
            "iteration": entry.iteration,
            "embedding": [float(x) for x in entry.embedding],
        }
        for entry in entries
    ]


def write_snapshot(entries: Sequence[MemoryEntry], path: str | Path) -> None:
    lines = [json.dumps(rec, ensure_ascii=True, sort_keys=True)
             for rec in snapshot_records(entries)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
