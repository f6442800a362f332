"""Hierarchical validation: three ordered gates plus a final judge.

Gate 1 (format) is purely rule-based against the bundle-declared schema.
Gate 2 (alignment) and gate 3 (comprehensive analysis) consult the oracle.
A failed gate short-circuits everything after it, including the judge; the
judge can therefore never overturn a gate.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .core import (
    DiagnosticReason,
    Direction,
    ExecutionTrace,
    ExitStatus,
    Gate,
    Hypothesis,
    PerfPair,
    Solution,
    Task,
    TargetComponent,
    direction_adjusted_delta,
    is_improvement,
)
from .errors import DomainError
from .oracle import Oracle, Role, ScriptedBackend


@dataclass(frozen=True)
class GateOutcome:
    gate: Gate
    passed: bool
    reason_text: str
    findings: tuple[str, ...] = ()


OnGate = Optional[Callable[[GateOutcome], None]]


# -- gate 1: format ----------------------------------------------------------

def check_format(submission_path: str | Path, task: Task, *,
                 dev: bool = False) -> GateOutcome:
    """Rule-based schema check: existence, header, row count, value domain.
    No oracle involvement; failure is an outcome, not an error."""
    gate = Gate.Format
    path = Path(submission_path)
    if not path.is_file():
        return GateOutcome(gate, False, "submission absent")
    schema = task.schema
    if schema is None:
        return GateOutcome(gate, True, "no schema declared; existence check only")
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except (OSError, csv.Error) as exc:
        return GateOutcome(gate, False, f"submission unreadable: {exc}")

    expected_header = [schema.id_column, schema.value_column]
    if header != expected_header:
        return GateOutcome(
            gate, False,
            f"header mismatch: expected {expected_header}, got {header}",
        )
    expected_rows = schema.rows_dev if dev else schema.rows_full
    if len(rows) != expected_rows:
        return GateOutcome(
            gate, False,
            f"row count mismatch: expected {expected_rows}, got {len(rows)}",
        )
    for i, row in enumerate(rows):
        if len(row) != 2:
            return GateOutcome(gate, False, f"row {i + 1} has {len(row)} fields")
        try:
            value = float(row[1])
        except ValueError:
            return GateOutcome(gate, False, f"row {i + 1} value {row[1]!r} is not numeric")
        if not math.isfinite(value):
            return GateOutcome(gate, False, f"row {i + 1} value is not finite")
        if schema.value_min is not None and value < schema.value_min:
            return GateOutcome(gate, False, f"row {i + 1} value below {schema.value_min}")
        if schema.value_max is not None and value > schema.value_max:
            return GateOutcome(gate, False, f"row {i + 1} value above {schema.value_max}")
    return GateOutcome(gate, True, "submission matches schema")


# -- gate 2: evaluation alignment --------------------------------------------

def parse_findings(text: str) -> tuple[str, ...]:
    """JSON {"findings": [...]} preferred; 'no issues' means clean; any
    other non-empty text counts as a single finding."""
    stripped = text.strip()
    try:
        obj = json.loads(stripped)
        if isinstance(obj, dict) and "findings" in obj:
            return tuple(str(f) for f in obj["findings"])
        if isinstance(obj, list):
            return tuple(str(f) for f in obj)
    except json.JSONDecodeError:
        pass
    if not stripped or "no issues" in stripped.lower():
        return ()
    return (stripped,)


def check_alignment(solution: Solution, task: Task, oracle: Oracle) -> GateOutcome:
    response = oracle.complete(
        Role.AlignmentCheck,
        code=solution.code,
        task_description=task.description,
    )
    findings = parse_findings(response.text)
    if findings:
        return GateOutcome(Gate.Alignment, False, response.text.strip(), findings)
    return GateOutcome(Gate.Alignment, True, response.text.strip())


# -- gate 3: comprehensive analysis ------------------------------------------

def parse_verified(text: str) -> Optional[bool]:
    try:
        obj = json.loads(text)
        if isinstance(obj, dict) and "hypothesis_verified" in obj:
            return bool(obj["hypothesis_verified"])
    except json.JSONDecodeError:
        pass
    upper = text.upper()
    if "REFUTED" in upper:
        return False
    if "VERIFIED" in upper:
        return True
    return None


def comprehensive_analysis(solution: Solution, best_solution: Optional[Solution],
                           feedback_perf: PerfPair, trace: ExecutionTrace,
                           oracle: Oracle, *, hypothesis: Hypothesis,
                           delta: Optional[float],
                           tolerance: float = 0.0) -> GateOutcome:
    """Verify the hypothesis effect; the code-quality sub-analysis only runs
    when the score is within the near-tie improvement band."""
    response = oracle.complete(
        Role.ComprehensiveAnalysis,
        purpose="verify",
        hypothesis=hypothesis.text,
        perf=f"({feedback_perf.current}, {feedback_perf.best})",
        delta="" if delta is None else repr(delta),
        diff=trace.code_diff,
        logs=trace.runtime_log or trace.stdout_excerpt,
    )
    verified = parse_verified(response.text)
    if verified is False:
        return GateOutcome(Gate.Comprehensive, False, response.text.strip())

    quality_notes = None
    if delta is not None and is_improvement(delta, tolerance):
        quality = oracle.complete(
            Role.ComprehensiveAnalysis,
            purpose="quality",
            hypothesis=hypothesis.text,
            perf=f"({feedback_perf.current}, {feedback_perf.best})",
            delta=repr(delta),
            diff=trace.code_diff,
            logs=trace.runtime_log or trace.stdout_excerpt,
        )
        quality_notes = quality.text.strip()
    reason = response.text.strip()
    if quality_notes:
        reason = f"{reason}\nquality: {quality_notes}"
    return GateOutcome(Gate.Comprehensive, True, reason)


# -- final judge --------------------------------------------------------------

def parse_judge(text: str) -> Optional[bool]:
    stripped = text.strip()
    try:
        obj = json.loads(stripped)
        if isinstance(obj, dict) and "accept" in obj:
            return bool(obj["accept"])
    except json.JSONDecodeError:
        pass
    lowered = stripped.lower()
    if lowered.startswith("accept"):
        return True
    if lowered.startswith("reject"):
        return False
    return None


# -- full pipeline ------------------------------------------------------------

def validate(solution: Solution, perf: PerfPair, trace: ExecutionTrace,
             best_solution: Optional[Solution], oracle: Oracle, *,
             task: Task, submission_path: str | Path,
             hypothesis: Hypothesis, tolerance: float = 0.0,
             on_gate: OnGate = None) -> tuple[bool, DiagnosticReason]:
    """Run the gates in order with short-circuit; on all-pass the judge sees
    the full structured feedback and makes the call."""
    def note(outcome: GateOutcome) -> None:
        if on_gate is not None:
            on_gate(outcome)

    fmt = check_format(submission_path, task)
    note(fmt)
    if not fmt.passed:
        return False, DiagnosticReason(Gate.Format, fmt.reason_text)

    align = check_alignment(solution, task, oracle)
    note(align)
    if not align.passed:
        return False, DiagnosticReason(
            Gate.Alignment, align.reason_text, leakage_findings=align.findings
        )

    delta: Optional[float] = None
    if perf.current is not None and perf.best is not None:
        delta = direction_adjusted_delta(perf.current, perf.best, task.direction)
    elif perf.current is not None:
        delta = 0.0  # first scored run: no reference yet

    comp = comprehensive_analysis(
        solution, best_solution, perf, trace, oracle,
        hypothesis=hypothesis, delta=delta, tolerance=tolerance,
    )
    note(comp)
    verified = parse_verified(comp.reason_text)
    if not comp.passed:
        return False, DiagnosticReason(
            Gate.Comprehensive, comp.reason_text, hypothesis_verified=False
        )

    quality_notes = None
    if "\nquality: " in comp.reason_text:
        quality_notes = comp.reason_text.split("\nquality: ", 1)[1]

    judge = oracle.complete(
        Role.Judge,
        perf=f"({perf.current}, {perf.best})",
        delta="" if delta is None else repr(delta),
        gates="format=pass alignment=pass comprehensive=pass",
        notes=comp.reason_text,
    )
    decision = parse_judge(judge.text)
    if decision is None:
        decision = False
    outcome = GateOutcome(Gate.Judge, decision, judge.text.strip())
    note(outcome)
    return decision, DiagnosticReason(
        Gate.Judge,
        judge.text.strip(),
        hypothesis_verified=verified,
        code_quality_notes=quality_notes,
    )


def score_only_decision(delta: Optional[float]) -> tuple[bool, DiagnosticReason]:
    """The purely score-driven baseline: accept any positive validation
    delta, no gates, no oracle."""
    decision = delta is not None and delta > 0.0
    return decision, DiagnosticReason(
        Gate.Judge, f"score-only baseline: delta={delta!r}"
    )


# -- fixture pack replay -------------------------------------------------------

@dataclass(frozen=True)
class FixtureCase:
    """One recorded deceptive-improvement case: validation moved one way,
    held-out performance the other, plus the gate transcripts needed to
    replay the decision."""

    case_id: str
    component: TargetComponent
    val_delta_pct: float
    test_delta_pct: float
    expected_decision: bool
    transcripts: tuple[tuple[Role, str], ...]


def load_fixture_pack(path: str | Path) -> list[FixtureCase]:
    cases = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        cases.append(FixtureCase(
            case_id=str(obj["case_id"]),
            component=TargetComponent(obj["component"]),
            val_delta_pct=float(obj["val_delta_pct"]),
            test_delta_pct=float(obj["test_delta_pct"]),
            expected_decision=bool(obj["expected_decision"]),
            transcripts=tuple(
                (Role(r), t) for r, t in obj["transcripts"]
            ),
        ))
    return cases


def replay_fixture_case(case: FixtureCase, *, task: Task,
                        submission_path: str | Path,
                        baseline_score: float = 1.0,
                        ) -> tuple[bool, DiagnosticReason, Oracle]:
    """Re-run the hierarchical gates for one case from its transcripts.

    Scores are reconstructed from the recorded percentage deltas against a
    reference score of `baseline_score` (a LowerBetter metric, so a negative
    recorded delta means validation improved).
    """
    if task.direction is not Direction.LowerBetter:
        raise DomainError("fixture pack cases are LowerBetter recordings")
    oracle = Oracle(ScriptedBackend.from_sequence(case.transcripts))
    h_best = baseline_score
    h_curr = baseline_score * (1.0 + case.val_delta_pct / 100.0)
    perf = PerfPair(current=h_curr, best=h_best)
    trace = ExecutionTrace(
        stdout_excerpt="", stderr_excerpt="", runtime_log="",
        code_diff="", exit_status=ExitStatus.Ok, wall_seconds=0.0,
    )
    solution = Solution(id=f"fixture-{case.case_id}", code="# recorded candidate\n")
    hypothesis = Hypothesis(
        id=f"hyp-{case.case_id}",
        text=f"recorded modification touching {case.component.value}",
        target_component=case.component,
    )
    decision, reason = validate(
        solution, perf, trace, None, oracle,
        task=task, submission_path=submission_path, hypothesis=hypothesis,
    )
    return decision, reason, oracle


def fixture_score_delta(case: FixtureCase, *, baseline_score: float = 1.0) -> float:
    """Direction-adjusted validation delta implied by the recorded
    percentage change (LowerBetter)."""
    h_curr = baseline_score * (1.0 + case.val_delta_pct / 100.0)
    return direction_adjusted_delta(h_curr, baseline_score, Direction.LowerBetter)
