"""Domain types shared by the whole optimization loop.

All types here are immutable value objects that are safe to copy between
workers; TraceState is the one mutable accumulator and is only ever touched
by the trace worker that owns it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional

from .errors import DomainError


class Direction(Enum):
    HigherBetter = "HigherBetter"
    LowerBetter = "LowerBetter"


class ExitStatus(Enum):
    Ok = "Ok"
    NonzeroExit = "NonzeroExit"
    Timeout = "Timeout"
    ResourceKill = "ResourceKill"


class Gate(Enum):
    Format = "Format"
    Alignment = "Alignment"
    Comprehensive = "Comprehensive"
    Judge = "Judge"


class TargetComponent(Enum):
    Data = "Data"
    FeatureEng = "FeatureEng"
    Model = "Model"
    Ensemble = "Ensemble"
    Workflow = "Workflow"


class HypothesisOrigin(Enum):
    Local = "Local"
    MemoryBest = "MemoryBest"
    MemorySampled = "MemorySampled"
    SelectorModified = "SelectorModified"
    SelectorGenerated = "SelectorGenerated"


class BudgetMode(Enum):
    WallClockSeconds = "WallClockSeconds"
    IterationCount = "IterationCount"


@dataclass(frozen=True)
class SubmissionSchema:
    """Rule-based output contract declared by the task bundle."""

    id_column: str
    value_column: str
    rows_dev: int
    rows_full: int
    value_min: Optional[float] = None
    value_max: Optional[float] = None


@dataclass(frozen=True)
class Task:
    id: str
    description: str
    metric_name: str
    direction: Direction
    bundle_path: Path
    dev_fraction: float
    time_limit_dev: float
    time_limit_full: float
    schema: Optional[SubmissionSchema] = None

    def __post_init__(self):
        if not (0.0 < self.dev_fraction <= 1.0):
            raise DomainError(f"dev_fraction must be in (0, 1], got {self.dev_fraction}")
        if self.time_limit_dev > self.time_limit_full:
            raise DomainError("time_limit_dev must not exceed time_limit_full")


@dataclass(frozen=True)
class Budget:
    mode: BudgetMode
    total: float
    consumed: float = 0.0
    extensions_granted: int = 0

    def __post_init__(self):
        # zero is allowed so a run can skip straight to final selection
        if self.total < 0:
            raise DomainError("budget total must be non-negative")
        if self.consumed < 0:
            raise DomainError("budget consumed must be non-negative")

    @property
    def remaining(self) -> float:
        return self.total - self.consumed

    @property
    def exhausted(self) -> bool:
        return self.consumed >= self.total

    def consume(self, amount: float) -> "Budget":
        return replace(self, consumed=self.consumed + amount)

    def extend(self, amount: float) -> "Budget":
        return replace(
            self,
            total=self.total + amount,
            extensions_granted=self.extensions_granted + 1,
        )


@dataclass(frozen=True)
class Solution:
    id: str
    code: str
    parent_id: Optional[str] = None
    hypothesis_id: Optional[str] = None
    created_at: int = 0

    def __post_init__(self):
        if not self.code.strip():
            raise DomainError("solution code must be non-empty")


@dataclass(frozen=True)
class Hypothesis:
    id: str
    text: str
    target_component: TargetComponent = TargetComponent.Workflow
    challenge: str = ""
    scores: Optional[Mapping[str, float]] = None
    total_score: Optional[float] = None
    origin: HypothesisOrigin = HypothesisOrigin.Local

    def __post_init__(self):
        if not self.text.strip():
            raise DomainError("hypothesis text must be non-empty")


@dataclass(frozen=True)
class PerfPair:
    """Current score and trace-local best; None is an explicit missing score."""

    current: Optional[float]
    best: Optional[float]

    def __post_init__(self):
        for name, value in (("current", self.current), ("best", self.best)):
            if value is not None and not math.isfinite(value):
                raise DomainError(f"{name} score must be finite or None")


@dataclass(frozen=True)
class ExecutionTrace:
    stdout_excerpt: str
    stderr_excerpt: str
    runtime_log: str
    code_diff: str
    exit_status: ExitStatus
    wall_seconds: float


@dataclass(frozen=True)
class DiagnosticReason:
    gate: Gate
    verdict_text: str
    hypothesis_verified: Optional[bool] = None
    code_quality_notes: Optional[str] = None
    leakage_findings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.leakage_findings and self.gate is not Gate.Alignment:
            raise DomainError("leakage findings may only come from the alignment gate")


@dataclass(frozen=True)
class StructuredFeedback:
    perf: PerfPair
    trace: ExecutionTrace
    reason: DiagnosticReason


@dataclass(frozen=True)
class IterationRecord:
    trace_id: int
    iteration: int
    hypothesis: Hypothesis
    solution_id: str
    feedback: StructuredFeedback
    decision: bool
    delta: Optional[float] = None


@dataclass
class TraceState:
    """Per-trace accumulator; mutated only by the owning trace worker."""

    trace_id: int
    best_solution: Optional[Solution] = None
    best_score: Optional[float] = None
    history: list[IterationRecord] = field(default_factory=list)
    n_succ: int = 0
    n_fail: int = 0

    def record(self, item: IterationRecord, *, direction: Direction,
               solution: Optional[Solution] = None) -> None:
        """Append one iteration; the trace best only moves on a strict,
        direction-adjusted improvement among accepted runs."""
        self.history.append(item)
        if item.decision:
            self.n_succ += 1
            score = item.feedback.perf.current
            if score is not None and self._improves(score, direction):
                self.best_score = score
                if solution is not None:
                    self.best_solution = solution
        else:
            self.n_fail += 1

    def _improves(self, score: float, direction: Direction) -> bool:
        if self.best_score is None:
            return True
        return direction_adjusted_delta(score, self.best_score, direction) > 0.0

    @classmethod
    def replay(cls, trace_id: int, history: list[IterationRecord],
               direction: Direction) -> "TraceState":
        state = cls(trace_id=trace_id)
        for item in history:
            state.record(item, direction=direction)
        return state


def direction_adjusted_delta(h_new: float, h_ref: float, direction: Direction) -> float:
    """Signed score difference where positive always means improvement."""
    for value in (h_new, h_ref):
        if value is None or not math.isfinite(value):
            raise DomainError(f"scores must be finite, got {value!r}")
    if direction is Direction.HigherBetter:
        return h_new - h_ref
    return h_ref - h_new


def is_improvement(delta: float, tolerance: float = 0.0) -> bool:
    """Near-tie acceptance band: exact ties (and anything within the
    tolerance) still count as improvement so they proceed to the full
    comprehensive analysis."""
    if tolerance < 0:
        raise DomainError("tolerance must be non-negative")
    return delta >= -tolerance
