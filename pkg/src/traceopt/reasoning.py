"""Structured reasoning: the step that turns feedback into the next move.

The pipeline is adaptive weighting -> challenge extraction -> hypothesis
generation -> weighted prioritization -> top-k sampling -> implementation.
Early iterations lean on scenario analysis; once the trace has experience,
feedback-driven diagnosis takes over.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Hypothesis, Solution, StructuredFeedback, Task, TargetComponent
from .errors import (
    DebugExhausted,
    DomainError,
    DuplicateHypothesis,
    EmptyCandidateSet,
    ImplementationFailed,
    ScoreParseError,
)
from .executor import DataMode, ExecMode, Executor
from .memory import MemoryEntry
from .oracle import Oracle, Role

logger = logging.getLogger(__name__)

DIMENSIONS = ("impact", "alignment", "novelty", "feasibility", "risk")


@dataclass(frozen=True)
class ScoringWeights:
    impact: float = 0.4
    alignment: float = 0.2
    novelty: float = 0.2
    feasibility: float = 0.1
    risk: float = 0.1

    def __post_init__(self):
        values = self.as_tuple()
        if any(not (0.0 <= v <= 1.0) for v in values):
            raise DomainError("weights must lie in [0, 1]")
        if abs(sum(values) - 1.0) > 1e-12:
            raise DomainError("weights must sum to 1")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.impact, self.alignment, self.novelty,
                self.feasibility, self.risk)


class ChallengeSource(Enum):
    Scenario = "Scenario"
    History = "History"


@dataclass(frozen=True)
class Challenge:
    text: str
    source: ChallengeSource

    def __post_init__(self):
        if not self.text.strip():
            raise DomainError("challenge text must be non-empty")


@dataclass(frozen=True)
class SolutionSketch:
    plan_text: str
    touched_components: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.plan_text.strip():
            raise DomainError("plan must be non-empty")


def adaptive_lambda(n_succ: int, n_fail: int) -> int:
    """Scenario-analysis weight: max(0, 3 - floor((3*succ + 2*fail) / 8)).
    Starts at 3 and decays to 0 as the trace gains experience."""
    if n_succ < 0 or n_fail < 0:
        raise DomainError("counts must be non-negative")
    return max(0, 3 - (3 * n_succ + 2 * n_fail) // 8)


def _parse_challenge_lines(text: str) -> list[str]:
    try:
        obj = json.loads(text)
        if isinstance(obj, list):
            return [str(item) for item in obj if str(item).strip()]
    except json.JSONDecodeError:
        pass
    return [line.strip("- \t") for line in text.splitlines() if line.strip()]


def extract_challenges(lam: int, feedback: Optional[StructuredFeedback],
                       history_digest: str, task: Task, oracle: Oracle, *,
                       count: int = 3) -> list[Challenge]:
    """lam > 0 pulls scenario-driven challenges, lam < 3 pulls
    feedback/history-driven ones; mid-range pulls both."""
    if lam not in (0, 1, 2, 3):
        raise DomainError(f"lambda must be in 0..3, got {lam}")
    challenges: list[Challenge] = []
    feedback_text = ""
    if feedback is not None:
        feedback_text = (
            f"perf=({feedback.perf.current}, {feedback.perf.best}) "
            f"exit={feedback.trace.exit_status.value} "
            f"reason={feedback.reason.verdict_text[:400]}"
        )
    if lam > 0:
        response = oracle.complete(
            Role.ExtractChallenges,
            mode="scenario",
            count=str(count),
            task_description=task.description,
            feedback=feedback_text,
            history=history_digest,
        )
        challenges.extend(
            Challenge(text, ChallengeSource.Scenario)
            for text in _parse_challenge_lines(response.text)
        )
    if lam < 3:
        response = oracle.complete(
            Role.ExtractChallenges,
            mode="history",
            count=str(count),
            task_description=task.description,
            feedback=feedback_text,
            history=history_digest,
        )
        challenges.extend(
            Challenge(text, ChallengeSource.History)
            for text in _parse_challenge_lines(response.text)
        )
    return challenges


def parse_hypothesis_text(text: str) -> tuple[str, TargetComponent, bool]:
    """Split '<text> / <Component>'; an unparsable tag falls back to
    Workflow. Returns (text, component, parsed_ok)."""
    stripped = text.strip()
    if " / " in stripped:
        body, _, tag = stripped.rpartition(" / ")
        tag = tag.strip()
        for component in TargetComponent:
            if component.value.lower() == tag.lower():
                return body.strip(), component, True
        return stripped, TargetComponent.Workflow, False
    return stripped, TargetComponent.Workflow, False


def generate_hypothesis(challenge: Challenge, best_solution: Optional[Solution],
                        feedback: Optional[StructuredFeedback], task: Task,
                        oracle: Oracle, *, hypothesis_id: str,
                        existing_texts: Sequence[str] = (),
                        unique: bool = True, max_reprompts: int = 1,
                        on_warning: Callable[[str], None] | None = None,
                        ) -> Hypothesis:
    feedback_text = ""
    if feedback is not None:
        feedback_text = f"perf=({feedback.perf.current}, {feedback.perf.best})"
    attempts = 0
    seen = {text.strip() for text in existing_texts}
    while True:
        response = oracle.complete(
            Role.GenerateHypothesis,
            challenge=challenge.text,
            task_description=task.description,
            feedback=feedback_text,
        )
        text, component, parsed = parse_hypothesis_text(response.text)
        if not parsed:
            message = f"unparsable component tag in {response.text!r}; defaulting to Workflow"
            logger.warning(message)
            if on_warning is not None:
                on_warning(message)
        if not unique or text not in seen:
            return Hypothesis(
                id=hypothesis_id,
                text=text,
                target_component=component,
                challenge=challenge.text,
            )
        attempts += 1
        if attempts > max_reprompts:
            raise DuplicateHypothesis(
                f"hypothesis {text!r} duplicates trace history after {attempts} attempts"
            )


def prioritize(hypotheses: Sequence[Hypothesis], memory: Sequence[MemoryEntry],
               weights: ScoringWeights, oracle: Oracle) -> list[Hypothesis]:
    """Score each candidate across the five dimensions (one structured
    oracle call per candidate, with the shared memory in context) and sort
    descending by the weighted total. The sort is stable, so equal totals
    keep generation order."""
    memory_digest = "; ".join(
        f"{entry.hypothesis.text} (delta {entry.delta:+.4g})" for entry in memory
    )
    scored: list[Hypothesis] = []
    weight_values = weights.as_tuple()
    for hyp in hypotheses:
        response = oracle.complete(
            Role.ScoreHypothesis,
            hypothesis=hyp.text,
            memory=memory_digest,
        )
        try:
            payload = json.loads(response.text)
            dims = {name: float(payload[name]) for name in DIMENSIONS}
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ScoreParseError(
                f"malformed score payload {response.text!r}: {exc}"
            ) from exc
        for name, value in dims.items():
            if not (0.0 <= value <= 1.0) or not math.isfinite(value):
                raise ScoreParseError(f"dimension {name} out of [0,1]: {value}")
        total = sum(w * dims[name] for w, name in zip(weight_values, DIMENSIONS))
        scored.append(replace(hyp, scores=dims, total_score=total))
    return sorted(scored, key=lambda h: -h.total_score)


def select_topk_sample(sorted_hypotheses: Sequence[Hypothesis], k: int,
                       rng: np.random.Generator) -> Hypothesis:
    """Uniform draw from the top min(k, n) to keep exploration alive."""
    if k < 1:
        raise DomainError("k must be >= 1")
    if not sorted_hypotheses:
        raise EmptyCandidateSet("no hypotheses to sample from")
    prefix = sorted_hypotheses[: min(k, len(sorted_hypotheses))]
    return prefix[int(rng.integers(len(prefix)))]


def implement(hypothesis: Hypothesis, best_solution: Optional[Solution],
              task: Task, oracle: Oracle, executor: Executor, *,
              make_solution: Callable[[str, Optional[str], str], Solution],
              max_fix_iters: int = 3, dev_seed: int = 0) -> Solution:
    """Sketch, implement, then dev-run with the debug loop until the code
    executes cleanly. The returned solution records its parent and the
    hypothesis that produced it."""
    best_code = best_solution.code if best_solution is not None else ""
    baseline_code = ""
    if best_solution is None:
        baseline = Path(task.bundle_path) / "baseline.py"
        if baseline.is_file():
            baseline_code = baseline.read_text(encoding="utf-8")
    sketch_resp = oracle.complete(
        Role.Sketch,
        hypothesis=hypothesis.text,
        best_code=best_code,
    )
    sketch = SolutionSketch(plan_text=sketch_resp.text or "no plan")
    code_resp = oracle.complete(
        Role.Implement,
        plan=sketch.plan_text,
        best_code=best_code,
        baseline_code=baseline_code,
        task_description=task.description,
    )
    code = code_resp.text
    if not code.strip():
        raise ImplementationFailed("oracle returned empty code")
    parent_id = best_solution.id if best_solution is not None else None
    solution = make_solution(code, parent_id, hypothesis.id)
    try:
        solution, _ = executor.debug_loop(
            solution, task, ExecMode(DataMode.DevSubset, seed=dev_seed),
            max_fix_iters, oracle,
        )
    except DebugExhausted as exc:
        raise ImplementationFailed(
            f"hypothesis {hypothesis.id} never produced runnable code: {exc}"
        ) from exc
    return solution
