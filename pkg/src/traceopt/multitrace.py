"""Parallel-trace orchestration.

Phase 1 seeds N traces with forcibly diversified hypotheses, phase 2 loops
execute -> validate -> commit -> reason per trace until the budget runs
out, phase 3 re-runs the top trace bests under multiple seeds and returns
the winner. Traces share discoveries through the success memory the moment
they are committed.

Deterministic mode runs the traces on a single logical thread with
round-robin scheduling and logical timestamps, so two identical runs
produce byte-identical event logs. Live mode free-runs one thread per
trace under the configured permits.
"""
from __future__ import annotations

import json
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .concurrency import Permits
from .config import RunConfig
from .core import (
    Budget,
    BudgetMode,
    Direction,
    Hypothesis,
    HypothesisOrigin,
    IterationRecord,
    PerfPair,
    Solution,
    StructuredFeedback,
    Task,
    TraceState,
    direction_adjusted_delta,
)
from .errors import (
    BackendUnavailable,
    DiversificationFailed,
    DomainError,
    DuplicateHypothesis,
    EmptyCandidateSet,
    EngineError,
    ImplementationFailed,
    SelectorParseError,
)
from .events import EventKind, EventLog, LogicalClock, QueueAppender
from .executor import DataMode, ExecMode, Executor, TimeoutState, escalate_timeout
from .memory import (
    KernelParams,
    MemoryEntry,
    SuccessMemory,
    best_entry,
    sample_similar,
)
from .oracle import Oracle, Role
from .reasoning import (
    ScoringWeights,
    adaptive_lambda,
    extract_challenges,
    generate_hypothesis,
    implement,
    parse_hypothesis_text,
    prioritize,
    select_topk_sample,
)
from .replay import RunReport, build_candidate_summary
from .validation import validate


# -- forced diversification ----------------------------------------------------

def init_diversified(task: Task, n_traces: int, oracle: Oracle, *,
                     id_prefix: str = "h", max_reprompts: int = 1) -> list[Hypothesis]:
    """Generate the N starting hypotheses, each conditioned on all earlier
    ones; textual distinctness is enforced with one re-prompt before the
    whole initialization fails."""
    if n_traces < 1:
        raise DomainError("need at least one trace")
    chosen: list[Hypothesis] = []
    for n in range(1, n_traces + 1):
        priors = [h.text for h in chosen]
        attempts = 0
        while True:
            response = oracle.complete(
                Role.InitHypothesis,
                task_description=task.description,
                prior_hypotheses="\n".join(f"- {t}" for t in priors),
                prior_count=str(len(priors)),
            )
            text, component, _ = parse_hypothesis_text(response.text)
            if text not in {h.text for h in chosen}:
                chosen.append(Hypothesis(
                    id=f"{id_prefix}{n}-0",
                    text=text,
                    target_component=component,
                    origin=HypothesisOrigin.Local,
                ))
                break
            attempts += 1
            if attempts > max_reprompts:
                raise DiversificationFailed(
                    f"trace {n} duplicated an earlier hypothesis after {attempts} re-prompts"
                )
    return chosen


# -- candidate pool / cross-trace selection --------------------------------------

def build_candidate_pool(local_hypotheses: Sequence[Hypothesis],
                         memory_entries: Sequence[MemoryEntry],
                         kernel_params: KernelParams, iteration_count: int,
                         trace_best: Optional[float], direction: Direction,
                         rng: np.random.Generator, *,
                         embedder) -> list[Hypothesis]:
    """Pool = local hypotheses + best memory entry + one kernel-sampled
    entry, deduplicated by exact text; memory members are simply absent
    when the memory is empty."""
    if not local_hypotheses and not memory_entries:
        raise EmptyCandidateSet("no local hypotheses and empty memory")
    pool: list[Hypothesis] = []
    seen: set[str] = set()

    def add(hyp: Hypothesis) -> None:
        if hyp.text not in seen:
            seen.add(hyp.text)
            pool.append(hyp)

    for hyp in local_hypotheses:
        add(hyp)
    if memory_entries:
        star = best_entry(memory_entries)
        add(replace(star.hypothesis, origin=HypothesisOrigin.MemoryBest))
        if local_hypotheses:
            query = embedder(local_hypotheses[0].text)
        else:
            query = star.embedding
        sampled = sample_similar(
            memory_entries, query, kernel_params, iteration_count,
            trace_best, direction, rng,
        )
        add(replace(sampled.hypothesis, origin=HypothesisOrigin.MemorySampled))
    return pool


_SELECT_RE = re.compile(r"^\s*select\s*#(\d+)\s*$", re.IGNORECASE)
_MODIFY_RE = re.compile(r"^\s*modify\s*#(\d+)\s*:\s*(.+)$", re.IGNORECASE | re.DOTALL)
_GENERATE_RE = re.compile(r"^\s*generate\s*:\s*(.+)$", re.IGNORECASE | re.DOTALL)


def cross_trace_select(pool: Sequence[Hypothesis],
                       memory_entries: Sequence[MemoryEntry],
                       oracle: Oracle, *, new_id: str) -> Hypothesis:
    """Ask the selector to Select / Modify / Generate over the pool.
    Members are numbered from 1 in the request; a Select outside the pool
    is a parse error, never a silent fallback."""
    if not pool:
        raise EmptyCandidateSet("selector needs a non-empty pool")
    pool_lines = [
        f"#{i + 1} [{h.origin.value}] {h.text}" for i, h in enumerate(pool)
    ]
    feedback_lines = [
        f"- {entry.hypothesis.text}: delta {entry.delta:+.4g}, "
        f"exit {entry.feedback.trace.exit_status.value}"
        for entry in memory_entries
    ]
    response = oracle.complete(
        Role.SelectHypothesis,
        pool="\n".join(pool_lines),
        memory_feedback="\n".join(feedback_lines),
    )
    text = response.text.strip()

    match = _SELECT_RE.match(text)
    if match:
        index = int(match.group(1))
        if not (1 <= index <= len(pool)):
            raise SelectorParseError(
                f"Select #{index} is outside the {len(pool)}-member pool"
            )
        return pool[index - 1]
    match = _MODIFY_RE.match(text)
    if match:
        index = int(match.group(1))
        if not (1 <= index <= len(pool)):
            raise SelectorParseError(
                f"Modify #{index} is outside the {len(pool)}-member pool"
            )
        base = pool[index - 1]
        revised, component, _ = parse_hypothesis_text(match.group(2).strip())
        return Hypothesis(
            id=new_id,
            text=revised,
            target_component=component if component else base.target_component,
            challenge=base.challenge,
            origin=HypothesisOrigin.SelectorModified,
        )
    match = _GENERATE_RE.match(text)
    if match:
        generated, component, _ = parse_hypothesis_text(match.group(1).strip())
        return Hypothesis(
            id=new_id,
            text=generated,
            target_component=component,
            origin=HypothesisOrigin.SelectorGenerated,
        )
    raise SelectorParseError(f"unparsable selector response: {text!r}")


# -- adaptive budget -------------------------------------------------------------

def adjust_budget(budget: Budget, memory: Sequence[MemoryEntry],
                  recent_feedback: Sequence[StructuredFeedback],
                  oracle: Oracle, config: RunConfig, *,
                  original_total: float | None = None) -> Budget:
    """One bounded extension, granted only by an explicit 'extend' verdict
    when the remaining budget has dropped under the threshold. Oracle
    trouble means no extension, never a crash."""
    if not config.llm_decide_longer_runtime:
        return budget
    if budget.extensions_granted >= config.extension_cap:
        return budget
    original = original_total if original_total is not None else budget.total
    threshold = config.extension_threshold_fraction * original
    if budget.remaining >= threshold:
        return budget
    exits = [fb.trace.exit_status.value for fb in recent_feedback]
    curve = [
        entry.feedback.perf.current
        for entry in memory
        if entry.feedback.perf.current is not None
    ]
    try:
        response = oracle.complete(
            Role.BudgetDecision,
            remaining=repr(budget.remaining),
            recent_exits=",".join(exits),
            best_curve=",".join(repr(v) for v in curve),
        )
    except (BackendUnavailable, EngineError):
        return budget
    if response.text.strip().lower().startswith("extend"):
        return budget.extend(config.extension_fraction * original)
    return budget


# -- final selection ---------------------------------------------------------------

@dataclass(frozen=True)
class TraceBest:
    trace_id: int
    solution: Solution
    score: Optional[float]


@dataclass(frozen=True)
class FinalSelection:
    trace_id: int
    solution: Solution
    mean: Optional[float]
    candidates: tuple[dict, ...]


def final_select(trace_bests: Sequence[TraceBest], topk: int,
                 seeds: Sequence[int], executor: Executor, task: Task,
                 ) -> FinalSelection:
    """Top-k by validation score, each re-run under every seed; the winner
    is the direction-adjusted argmax of the mean, ties to the lower trace
    id."""
    if not trace_bests:
        raise DomainError("final selection needs at least one trace best")
    sign = 1.0 if task.direction is Direction.HigherBetter else -1.0

    def val_key(tb: TraceBest):
        score = tb.score if tb.score is not None else float("-inf") * sign
        return (-sign * score, tb.trace_id)

    ranked = sorted(trace_bests, key=val_key)
    shortlist = ranked[: max(1, topk)]

    evaluated: list[tuple[TraceBest, Optional[float], tuple]] = []
    for tb in shortlist:
        report = executor.multi_seed_eval(tb.solution, task, list(seeds))
        evaluated.append((tb, report.mean, report.scores))

    def mean_key(item):
        tb, mean, _ = item
        adjusted = mean if mean is not None else float("-inf") * sign
        return (-sign * adjusted, tb.trace_id)

    evaluated.sort(key=mean_key)
    winner, mean, _ = evaluated[0]
    candidates = tuple(
        {
            "trace_id": tb.trace_id,
            "solution_id": tb.solution.id,
            "val_score": tb.score,
            "seed_scores": list(scores),
            "mean": m,
        }
        for tb, m, scores in evaluated
    )
    return FinalSelection(
        trace_id=winner.trace_id,
        solution=winner.solution,
        mean=mean,
        candidates=candidates,
    )


# -- the engine ----------------------------------------------------------------------

@dataclass
class _TraceWorker:
    trace_id: int
    state: TraceState
    current: Optional[Solution]
    current_hypothesis: Optional[Hypothesis]
    timeout_state: TimeoutState
    rng: np.random.Generator
    iteration: int = 0
    alive: bool = True
    last_feedback: Optional[StructuredFeedback] = None
    solution_counter: int = 0
    hypothesis_counter: int = 0

    def next_solution_id(self) -> str:
        self.solution_counter += 1
        return f"s{self.trace_id}-{self.solution_counter}"

    def next_hypothesis_id(self) -> str:
        self.hypothesis_counter += 1
        return f"h{self.trace_id}-{self.hypothesis_counter}"


class Engine:
    """Owns one optimization run end to end."""

    def __init__(self, task: Task, config: RunConfig, oracle: Oracle, *,
                 log_path: str | Path, run_dir: str | Path | None = None,
                 executor: Executor | None = None):
        self.task = task
        self.config = config
        self.oracle = oracle
        self.permits = Permits(
            running=config.running_semaphore,
            debugging=config.debugging_semaphore,
            feedback=config.feedback_semaphore,
        )
        self.executor = executor or Executor(
            self.permits, excerpt_bytes=config.excerpt_bytes
        )
        self.memory = SuccessMemory()
        self.clock = LogicalClock()
        self.log = EventLog(log_path)
        self._emitter = self.log if config.deterministic else QueueAppender(self.log)
        self._owns_run_dir = run_dir is None
        self.run_dir = Path(run_dir) if run_dir else Path(
            tempfile.mkdtemp(prefix="traceopt-run-")
        )
        self.weights = ScoringWeights()
        self.kernel = KernelParams(
            alpha=config.kernel_alpha,
            beta=config.kernel_beta,
            gamma=config.kernel_gamma,
        )
        self._budget_lock = threading.Lock()
        self._traces: list[_TraceWorker] = []

    # - plumbing -

    def _emit(self, kind: EventKind, trace_id: int, payload: dict) -> None:
        self._emitter.emit(
            kind, trace_id, payload, logical_time=self.clock.now
        )

    def _hypothesis_payload(self, hyp: Hypothesis) -> dict:
        return {
            "id": hyp.id,
            "text": hyp.text,
            "component": hyp.target_component.value,
            "origin": hyp.origin.value,
        }

    # - phase 1 -

    def _initialize(self) -> None:
        hypotheses = init_diversified(
            self.task, self.config.max_trace_num, self.oracle,
            max_reprompts=self.config.max_reprompts,
        )
        seeds = np.random.SeedSequence(self.config.rng_seed).spawn(len(hypotheses))
        for n, (hyp, seed) in enumerate(zip(hypotheses, seeds), start=1):
            worker = _TraceWorker(
                trace_id=n,
                state=TraceState(trace_id=n),
                current=None,
                current_hypothesis=hyp,
                timeout_state=TimeoutState(
                    stage=self.config.timeout_increase_stage,
                    patience=self.config.timeout_stage_patience,
                    multiplier_cap=self.config.runner_timeout_multiplier,
                ),
                rng=np.random.default_rng(seed),
            )
            self.clock.tick()
            try:
                solution = implement(
                    hyp, None, self.task, self.oracle, self.executor,
                    make_solution=lambda code, parent, hyp_id, w=worker: Solution(
                        id=w.next_solution_id(), code=code, parent_id=parent,
                        hypothesis_id=hyp_id, created_at=self.clock.now,
                    ),
                    max_fix_iters=self.config.max_fix_iters,
                    dev_seed=self.config.eval_seed,
                )
                worker.current = solution
                worker.state.best_solution = solution
            except ImplementationFailed as exc:
                worker.alive = False
                self._emit(EventKind.Init, n, {
                    "hypothesis": self._hypothesis_payload(hyp),
                    "solution_id": None,
                    "error": str(exc),
                })
                self._traces.append(worker)
                continue
            self._emit(EventKind.Init, n, {
                "hypothesis": self._hypothesis_payload(hyp),
                "solution_id": solution.id,
            })
            self._traces.append(worker)
        if not any(w.alive for w in self._traces):
            raise EngineError("all traces failed to produce an initial solution")

    # - phase 2 -

    def _iterate(self, worker: _TraceWorker) -> None:
        worker.iteration += 1
        self.clock.tick()
        iteration = worker.iteration
        workdir = self.run_dir / f"trace{worker.trace_id}" / f"iter{iteration}"
        best = worker.state.best_solution
        best_code = best.code if best is not None else None

        eval_seed = (
            self.config.eval_seed if self.config.fix_seed_and_split else iteration
        )
        score, exec_trace = self.executor.execute(
            worker.current, self.task,
            ExecMode(DataMode.FullData, seed=eval_seed),
            worker.timeout_state, workdir=workdir, best_code=best_code,
        )
        worker.timeout_state = escalate_timeout(
            worker.timeout_state, exec_trace.exit_status
        )
        if self.config.deterministic:
            exec_trace = replace(exec_trace, wall_seconds=0.0)
        perf = PerfPair(current=score, best=worker.state.best_score)
        self._emit(EventKind.Executed, worker.trace_id, {
            "iteration": iteration,
            "solution_id": worker.current.id,
            "score": score,
            "exit_status": exec_trace.exit_status.value,
            "wall_seconds": exec_trace.wall_seconds,
        })

        if score is not None and worker.state.best_score is not None:
            delta = direction_adjusted_delta(
                score, worker.state.best_score, self.task.direction
            )
        elif score is not None:
            delta = 0.0
        else:
            delta = None

        submission = workdir / "scratch" / "submission.csv"
        with self.permits.feedback.acquire():
            decision, reason = validate(
                worker.current, perf, exec_trace, best, self.oracle,
                task=self.task, submission_path=submission,
                hypothesis=worker.current_hypothesis,
                tolerance=self.config.near_tie_tolerance,
                on_gate=lambda outcome: self._emit(
                    EventKind.GateOutcome, worker.trace_id, {
                        "iteration": iteration,
                        "gate": outcome.gate.value,
                        "passed": outcome.passed,
                        "reason": outcome.reason_text,
                        "findings": list(outcome.findings),
                    },
                ),
            )
        self._emit(EventKind.Decision, worker.trace_id, {
            "iteration": iteration,
            "decision": decision,
            "delta": delta,
            "hypothesis": self._hypothesis_payload(worker.current_hypothesis),
        })

        feedback = StructuredFeedback(perf=perf, trace=exec_trace, reason=reason)
        record = IterationRecord(
            trace_id=worker.trace_id,
            iteration=iteration,
            hypothesis=worker.current_hypothesis,
            solution_id=worker.current.id,
            feedback=feedback,
            decision=decision,
            delta=delta,
        )
        worker.state.record(record, direction=self.task.direction,
                            solution=worker.current)
        if decision and self.config.enable_global_memory:
            entry = self.memory.commit(record, embedder=self.oracle.embed)
            if entry is not None:
                self._emit(EventKind.MemoryCommit, worker.trace_id, {
                    "iteration": iteration,
                    "hypothesis": self._hypothesis_payload(entry.hypothesis),
                    "delta": entry.delta,
                    "score": entry.feedback.perf.current,
                    "embedding": [float(x) for x in entry.embedding],
                })
        worker.last_feedback = feedback

        try:
            next_hyp = self._next_hypothesis(worker, feedback)
            next_solution = implement(
                next_hyp, worker.state.best_solution, self.task, self.oracle,
                self.executor,
                make_solution=lambda code, parent, hyp_id, w=worker: Solution(
                    id=w.next_solution_id(), code=code, parent_id=parent,
                    hypothesis_id=hyp_id, created_at=self.clock.now,
                ),
                max_fix_iters=self.config.max_fix_iters,
                dev_seed=self.config.eval_seed,
            )
            worker.current = next_solution
            worker.current_hypothesis = next_hyp
        except (ImplementationFailed, DuplicateHypothesis, EmptyCandidateSet,
                SelectorParseError):
            # keep optimizing from the current solution next iteration
            pass

    def _next_hypothesis(self, worker: _TraceWorker,
                         feedback: StructuredFeedback) -> Hypothesis:
        lam = adaptive_lambda(worker.state.n_succ, worker.state.n_fail)
        digest = "; ".join(
            f"iter {r.iteration}: {'accepted' if r.decision else 'rejected'}"
            f" score={r.feedback.perf.current}"
            for r in worker.state.history[-5:]
        )
        challenges = extract_challenges(
            lam, feedback, digest, self.task, self.oracle,
            count=self.config.challenges_per_source,
        )
        existing = [r.hypothesis.text for r in worker.state.history]
        local: list[Hypothesis] = []
        for challenge in challenges:
            try:
                hyp = generate_hypothesis(
                    challenge, worker.state.best_solution, feedback, self.task,
                    self.oracle, hypothesis_id=worker.next_hypothesis_id(),
                    existing_texts=existing + [h.text for h in local],
                    unique=self.config.unique_hypothesis,
                    max_reprompts=self.config.max_reprompts,
                )
            except DuplicateHypothesis:
                continue
            local.append(hyp)
        memory_entries = (
            self.memory.entries() if self.config.enable_global_memory else ()
        )
        local = prioritize(local, memory_entries, self.weights, self.oracle)

        multi = (
            self.config.max_trace_num > 1
            and self.config.llm_select_hypothesis
            and self.config.enable_cross_trace_sharing
        )
        if multi:
            pool = build_candidate_pool(
                local, memory_entries, self.kernel, worker.iteration,
                worker.state.best_score, self.task.direction, worker.rng,
                embedder=self.oracle.embed,
            )
            chosen = cross_trace_select(
                pool, memory_entries, self.oracle,
                new_id=worker.next_hypothesis_id(),
            )
        else:
            pool = local
            chosen = select_topk_sample(local, self.config.topk_sample, worker.rng)
        self._emit(EventKind.HypothesisChosen, worker.trace_id, {
            "for_iteration": worker.iteration + 1,
            "hypothesis": self._hypothesis_payload(chosen),
            "pool": [self._hypothesis_payload(h) for h in pool],
        })
        return chosen

    # - budget -

    def _make_budget(self) -> Budget:
        mode = (
            BudgetMode.IterationCount
            if self.config.budget_mode == "iterations"
            else BudgetMode.WallClockSeconds
        )
        return Budget(mode=mode, total=self.config.budget_total)

    # - phase 3 + run -

    def run(self) -> tuple[Solution, RunReport]:
        started = time.monotonic()
        self._initialize()
        budget = self._make_budget()
        original_total = budget.total

        if self.config.deterministic:
            budget = self._run_round_robin(budget, original_total, started)
        else:
            budget = self._run_threaded(budget, original_total, started)

        bests = [
            TraceBest(w.trace_id, w.state.best_solution, w.state.best_score)
            for w in self._traces
            if w.state.best_solution is not None
        ]
        if not bests:
            raise EngineError("no trace produced a solution")
        self.clock.tick()
        if self.config.enable_multi_seed_selection:
            selection = final_select(
                bests, self.config.topk_final, self.config.final_seeds,
                self.executor, self.task,
            )
        else:
            sign = 1.0 if self.task.direction is Direction.HigherBetter else -1.0
            ranked = sorted(
                bests,
                key=lambda tb: (
                    -sign * (tb.score if tb.score is not None else float("-inf") * sign),
                    tb.trace_id,
                ),
            )
            top = ranked[0]
            selection = FinalSelection(
                trace_id=top.trace_id, solution=top.solution, mean=top.score,
                candidates=(build_candidate_summary(top.trace_id, top.solution.id,
                                                    top.score, [], top.score),),
            )

        report = self._build_report(selection, budget)
        self._emit(EventKind.Final, selection.trace_id, {
            "solution_id": selection.solution.id,
            "mean": selection.mean,
            "candidates": [dict(c) for c in selection.candidates],
            "report": report.to_dict(),
        })
        if isinstance(self._emitter, QueueAppender):
            self._emitter.close()
        self.log.close()
        if self._owns_run_dir:
            import shutil

            shutil.rmtree(self.run_dir, ignore_errors=True)
        return selection.solution, report

    def _consumed(self, iterations_done: int, started: float) -> float:
        if self.config.budget_mode == "iterations":
            return float(iterations_done)
        return time.monotonic() - started

    def _run_round_robin(self, budget: Budget, original_total: float,
                         started: float) -> Budget:
        iterations_done = 0
        while not budget.exhausted:
            progressed = False
            for worker in self._traces:
                if budget.exhausted:
                    break
                if not worker.alive:
                    continue
                self._iterate(worker)
                iterations_done += 1
                progressed = True
                budget = replace(
                    budget, consumed=self._consumed(iterations_done, started)
                )
            if not progressed:
                break
            recent = [
                w.last_feedback for w in self._traces if w.last_feedback is not None
            ]
            extended = adjust_budget(
                budget, self.memory.entries(), recent, self.oracle,
                self.config, original_total=original_total,
            )
            if extended.total != budget.total:
                self.clock.tick()
                self._emit(EventKind.BudgetChange, 0, {
                    "total": extended.total,
                    "consumed": extended.consumed,
                    "extensions_granted": extended.extensions_granted,
                })
            budget = extended
        return budget

    def _run_threaded(self, budget: Budget, original_total: float,
                      started: float) -> Budget:
        shared = {"budget": budget, "iterations": 0}

        def reserve() -> bool:
            with self._budget_lock:
                if shared["budget"].exhausted:
                    return False
                shared["iterations"] += 1
                return True

        def settle() -> None:
            with self._budget_lock:
                shared["budget"] = replace(
                    shared["budget"],
                    consumed=self._consumed(shared["iterations"], started),
                )

        def work(worker: _TraceWorker) -> None:
            while worker.alive:
                if not reserve():
                    return
                self._iterate(worker)
                settle()

        threads = [
            threading.Thread(target=work, args=(w,), daemon=True)
            for w in self._traces
            if w.alive
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        with self._budget_lock:
            return shared["budget"]

    def _build_report(self, selection: FinalSelection, budget: Budget) -> RunReport:
        decisions = [
            r.decision for w in self._traces for r in w.state.history
        ]
        total = len(decisions)
        accepted = sum(decisions)
        return RunReport(
            kind="gradient",
            best_solution_id=selection.solution.id,
            best_trace_id=selection.trace_id,
            best_score=selection.mean,
            total_iterations=total,
            accepted_iterations=accepted,
            improvement_rate=(accepted / total) if total else None,
            ic=None,
            per_trace_iterations={
                w.trace_id: len(w.state.history) for w in self._traces
            },
            memory_size=len(self.memory),
            budget_total=budget.total,
            budget_consumed=budget.consumed,
            extensions_granted=budget.extensions_granted,
            final_candidates=[dict(c) for c in selection.candidates],
        )
