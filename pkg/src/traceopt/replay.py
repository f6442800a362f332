"""Log replay and reporting.

A run's event log is self-contained: the final report, trace states, memory
snapshot, and tree statistics can all be rebuilt from it without touching
the task bundle or the oracle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import CorruptLog, EmptyLog
from .events import EventKind, RunEvent, read_log


def build_candidate_summary(trace_id: int, solution_id: str,
                            val_score: Optional[float], seed_scores: list,
                            mean: Optional[float]) -> dict:
    return {
        "trace_id": trace_id,
        "solution_id": solution_id,
        "val_score": val_score,
        "seed_scores": seed_scores,
        "mean": mean,
    }


@dataclass(frozen=True)
class RunReport:
    kind: str  # "gradient" | "tree"
    best_solution_id: Optional[str]
    best_trace_id: Optional[int]
    best_score: Optional[float]
    total_iterations: int
    accepted_iterations: int
    improvement_rate: Optional[float]
    ic: Optional[float]
    per_trace_iterations: dict[int, int]
    memory_size: int
    budget_total: float
    budget_consumed: float
    extensions_granted: int
    final_candidates: list[dict]
    tree_nodes: int = 0
    tree_edges: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "best_solution_id": self.best_solution_id,
            "best_trace_id": self.best_trace_id,
            "best_score": self.best_score,
            "total_iterations": self.total_iterations,
            "accepted_iterations": self.accepted_iterations,
            "improvement_rate": self.improvement_rate,
            "ic": self.ic,
            "per_trace_iterations": {
                str(k): v for k, v in sorted(self.per_trace_iterations.items())
            },
            "memory_size": self.memory_size,
            "budget_total": self.budget_total,
            "budget_consumed": self.budget_consumed,
            "extensions_granted": self.extensions_granted,
            "final_candidates": self.final_candidates,
            "tree_nodes": self.tree_nodes,
            "tree_edges": self.tree_edges,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(
            kind=data["kind"],
            best_solution_id=data["best_solution_id"],
            best_trace_id=data["best_trace_id"],
            best_score=data["best_score"],
            total_iterations=data["total_iterations"],
            accepted_iterations=data["accepted_iterations"],
            improvement_rate=data["improvement_rate"],
            ic=data["ic"],
            per_trace_iterations={
                int(k): v for k, v in data["per_trace_iterations"].items()
            },
            memory_size=data["memory_size"],
            budget_total=data["budget_total"],
            budget_consumed=data["budget_consumed"],
            extensions_granted=data["extensions_granted"],
            final_candidates=data["final_candidates"],
            tree_nodes=data.get("tree_nodes", 0),
            tree_edges=data.get("tree_edges", 0),
        )

    def render(self) -> str:
        lines = [
            f"run kind:          {self.kind}",
            f"best solution:     {self.best_solution_id} (trace {self.best_trace_id})",
            f"best score:        {self.best_score}",
            f"iterations:        {self.total_iterations} "
            f"({self.accepted_iterations} accepted)",
        ]
        if self.improvement_rate is not None:
            lines.append(f"improvement rate:  {self.improvement_rate:.1%}")
        if self.ic is not None:
            lines.append(f"IC (spearman):     {self.ic:.4f}")
        lines.append(
            "per-trace iters:   "
            + ", ".join(f"t{k}={v}" for k, v in sorted(self.per_trace_iterations.items()))
        )
        lines.append(f"memory size:       {self.memory_size}")
        lines.append(
            f"budget:            {self.budget_consumed:g}/{self.budget_total:g}"
            f" (+{self.extensions_granted} extensions)"
        )
        if self.tree_nodes:
            lines.append(f"tree:              {self.tree_nodes} nodes, {self.tree_edges} edges")
        return "\n".join(lines)


@dataclass
class ReplayedTrace:
    trace_id: int
    iterations: int = 0
    accepted: int = 0
    best_score: Optional[float] = None
    solution_ids: list[str] = field(default_factory=list)


@dataclass
class ReplayedEdge:
    parent: str
    child: str
    rewards: list[float] = field(default_factory=list)
    q: float = 0.0
    n: int = 0


@dataclass
class ReplayState:
    header: Optional[dict]
    events: list[RunEvent]
    traces: dict[int, ReplayedTrace]
    memory_records: list[dict]
    tree_edges: dict[tuple[str, str], ReplayedEdge]
    tree_nodes: set[str]
    report: Optional[RunReport]

    @property
    def decisions(self) -> list[bool]:
        return [
            bool(e.payload["decision"])
            for e in self.events
            if e.kind is EventKind.Decision
        ]


def replay(path: str | Path) -> ReplayState:
    """Rebuild trace states, memory, tree statistics, and the final report
    from a log, enforcing iteration completeness along the way."""
    header, events = read_log(path)

    traces: dict[int, ReplayedTrace] = {}
    memory_records: list[dict] = []
    tree_edges: dict[tuple[str, str], ReplayedEdge] = {}
    tree_nodes: set[str] = set()
    report: Optional[RunReport] = None

    # iteration completeness: Executed must be followed by >=1 GateOutcome
    # and a Decision for the same (trace, iteration) before the next
    # Executed on that trace.
    open_iterations: dict[int, dict] = {}

    for event in events:
        kind = event.kind
        if kind is EventKind.Executed:
            pending = open_iterations.get(event.trace_id)
            if pending is not None:
                raise CorruptLog(
                    f"trace {event.trace_id} iteration {pending['iteration']} "
                    "has no decision",
                    first_bad_seq=event.seq,
                )
            open_iterations[event.trace_id] = {
                "iteration": event.payload["iteration"],
                "gates": 0,
            }
            trace = traces.setdefault(
                event.trace_id, ReplayedTrace(trace_id=event.trace_id)
            )
            trace.iterations += 1
            trace.solution_ids.append(event.payload["solution_id"])
        elif kind is EventKind.GateOutcome:
            pending = open_iterations.get(event.trace_id)
            if pending is None:
                raise CorruptLog(
                    f"gate outcome without execution at seq {event.seq}",
                    first_bad_seq=event.seq,
                )
            pending["gates"] += 1
        elif kind is EventKind.Decision:
            pending = open_iterations.pop(event.trace_id, None)
            if pending is None or pending["gates"] == 0:
                raise CorruptLog(
                    f"decision without execution/gates at seq {event.seq}",
                    first_bad_seq=event.seq,
                )
            trace = traces[event.trace_id]
            if event.payload["decision"]:
                trace.accepted += 1
        elif kind is EventKind.MemoryCommit:
            memory_records.append(event.payload)
        elif kind is EventKind.TreeUpdate:
            parent = event.payload["parent"]
            child = event.payload["child"]
            tree_nodes.update((parent, child))
            edge = tree_edges.setdefault(
                (parent, child), ReplayedEdge(parent=parent, child=child)
            )
            edge.rewards.append(float(event.payload["reward"]))
            edge.q = float(event.payload["q"])
            edge.n = int(event.payload["n"])
        elif kind is EventKind.Final:
            report = RunReport.from_dict(event.payload["report"])

    if open_iterations:
        trace_id, pending = next(iter(open_iterations.items()))
        last_seq = events[-1].seq if events else 0
        raise CorruptLog(
            f"log truncated mid-iteration (trace {trace_id} iteration "
            f"{pending['iteration']})",
            first_bad_seq=last_seq + 1,
        )

    return ReplayState(
        header=header,
        events=events,
        traces=traces,
        memory_records=memory_records,
        tree_edges=tree_edges,
        tree_nodes=tree_nodes,
        report=report,
    )


def report_from_log(path: str | Path) -> RunReport:
    """Recompute the report from granular events; falls back to recorded
    final-selection facts (which only exist in the Final event)."""
    state = replay(path)
    from .experiments import NO_VARIANCE, improvement_rate, spearman_ic

    decisions = state.decisions
    total = len(decisions)
    accepted = sum(decisions)
    rate = improvement_rate(state.events) if total else None

    pairs = [
        (e.payload["delta"], e.payload["test_delta"])
        for e in state.events
        if e.kind is EventKind.Decision
        and e.payload.get("delta") is not None
        and e.payload.get("test_delta") is not None
    ]
    ic: Optional[float] = None
    if len(pairs) >= 2:
        value = spearman_ic([p[0] for p in pairs], [p[1] for p in pairs])
        ic = None if value is NO_VARIANCE else value

    final = state.report
    return RunReport(
        kind=final.kind if final else "gradient",
        best_solution_id=final.best_solution_id if final else None,
        best_trace_id=final.best_trace_id if final else None,
        best_score=final.best_score if final else None,
        total_iterations=total,
        accepted_iterations=accepted,
        improvement_rate=rate,
        ic=ic if ic is not None else (final.ic if final else None),
        per_trace_iterations={
            tid: t.iterations for tid, t in sorted(state.traces.items())
        },
        memory_size=len(state.memory_records),
        budget_total=final.budget_total if final else 0.0,
        budget_consumed=final.budget_consumed if final else 0.0,
        extensions_granted=final.extensions_granted if final else 0,
        final_candidates=final.final_candidates if final else [],
        tree_nodes=len(state.tree_nodes),
        tree_edges=len(state.tree_edges),
    )
