"""Tree-search variant of the engine.

PUCT selection with a uniform prior, score-shaped rewards bounded by tanh,
averaging backprop, and k-way expansion. Shares the executor, validation
gates, and oracle with the main engine; structured reasoning is replaced by
node selection, and the success memory by Q estimates, so prioritization,
top-k sampling, and kernel retrieval are disabled here.
"""
from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .concurrency import Permits
from .config import RunConfig
from .core import (
    Budget,
    BudgetMode,
    Direction,
    Hypothesis,
    PerfPair,
    Solution,
    Task,
    direction_adjusted_delta,
)
from .errors import DomainError, EngineError, ExpansionRefused, ImplementationFailed, LeafNode
from .events import EventKind, EventLog, LogicalClock
from .executor import DataMode, ExecMode, Executor, TimeoutState, escalate_timeout
from .oracle import Oracle, Role
from .reasoning import Challenge, ChallengeSource, extract_challenges, generate_hypothesis, implement
from .replay import RunReport
from .validation import validate


@dataclass
class EdgeStats:
    action: int  # child node id
    q: float = 0.0
    n: int = 0


@dataclass
class TreeNode:
    id: int
    solution_id: str
    parent: Optional[int]
    depth: int
    children: list[EdgeStats] = field(default_factory=list)
    visit_count: int = 0
    terminal: bool = False


class SearchTree:
    def __init__(self, root: TreeNode):
        self.nodes: dict[int, TreeNode] = {root.id: root}
        self.root = root

    def add_child(self, parent: TreeNode, child: TreeNode) -> EdgeStats:
        if child.depth != parent.depth + 1:
            raise DomainError("child depth must be parent depth + 1")
        self.nodes[child.id] = child
        edge = EdgeStats(action=child.id)
        parent.children.append(edge)
        return edge

    def edge(self, parent_id: int, child_id: int) -> EdgeStats:
        for edge in self.nodes[parent_id].children:
            if edge.action == child_id:
                return edge
        raise DomainError(f"no edge {parent_id}->{child_id}")


def puct_score(q: float, n_parent: int, n_edge: int, c_puct: float) -> float:
    """U = Q + c * sqrt(N_parent) / (1 + N_edge), uniform prior."""
    if n_parent < 0 or n_edge < 0 or c_puct < 0:
        raise DomainError("counts and c_puct must be non-negative")
    return q + c_puct * math.sqrt(n_parent) / (1 + n_edge)


def select_child(node: TreeNode, c_puct: float) -> EdgeStats:
    """Argmax of the PUCT score over the node's edges; ties go to the
    lowest child id."""
    if not node.children:
        raise LeafNode(f"node {node.id} has no children")
    best: Optional[EdgeStats] = None
    best_u = -math.inf
    for edge in node.children:
        u = puct_score(edge.q, node.visit_count, edge.n, c_puct)
        if u > best_u or (u == best_u and best is not None and edge.action < best.action):
            best, best_u = edge, u
    return best


def reward(validated: bool, v: Optional[float], direction: Direction,
           mode: str = "score") -> float:
    """Binary: 1 if validated else 0. Score: tanh-bounded signed score for
    validated runs, -1 for rejected ones."""
    if mode == "binary":
        return 1.0 if validated else 0.0
    if mode != "score":
        raise DomainError(f"unknown reward mode {mode!r}")
    if not validated:
        return -1.0
    if v is None:
        raise DomainError("score reward for a validated run needs a score")
    return math.tanh(v) if direction is Direction.HigherBetter else -math.tanh(v)


def backprop(tree: SearchTree, path: list[tuple[int, int]], value: float,
             *, on_update=None) -> None:
    """Averaging update along the root-to-leaf path; node visit counts on
    the path (including the root) are incremented."""
    if path:
        tree.nodes[path[0][0]].visit_count += 1
    for parent_id, child_id in path:
        edge = tree.edge(parent_id, child_id)
        edge.q = (edge.n * edge.q + value) / (edge.n + 1)
        edge.n += 1
        tree.nodes[child_id].visit_count += 1
        if on_update is not None:
            on_update(parent_id, child_id, value, edge.q, edge.n)


def tree_snapshot(tree: SearchTree) -> dict:
    """Node/edge records for the report command."""
    return {
        "nodes": [
            {
                "id": node.id,
                "solution_id": node.solution_id,
                "parent": node.parent,
                "depth": node.depth,
                "visit_count": node.visit_count,
            }
            for node in sorted(tree.nodes.values(), key=lambda n: n.id)
        ],
        "edges": [
            {"parent": node.id, "child": edge.action, "q": edge.q, "n": edge.n}
            for node in sorted(tree.nodes.values(), key=lambda n: n.id)
            for edge in node.children
        ],
    }


class MctsEngine:
    """One tree-search run over a task bundle."""

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
        self.clock = LogicalClock()
        self.log = EventLog(log_path)
        self._owns_run_dir = run_dir is None
        self.run_dir = Path(run_dir) if run_dir else Path(
            tempfile.mkdtemp(prefix="traceopt-mcts-")
        )
        self.timeout_state = TimeoutState(
            stage=config.timeout_increase_stage,
            patience=config.timeout_stage_patience,
            multiplier_cap=config.runner_timeout_multiplier,
        )
        self.solutions: dict[int, Optional[Solution]] = {}
        self.scores: dict[int, Optional[float]] = {}
        self.validated: dict[int, bool] = {}
        self._next_node_id = 0
        self._next_solution = 0
        self._next_hypothesis = 0
        self._evaluations = 0
        self._accepted = 0

    # - plumbing -

    def _emit(self, kind: EventKind, payload: dict) -> None:
        self.log.emit(kind, 0, payload, logical_time=self.clock.now)

    def _new_node_id(self) -> int:
        node_id = self._next_node_id
        self._next_node_id += 1
        return node_id

    def _make_solution(self, code: str, parent: Optional[str],
                       hypothesis_id: str) -> Solution:
        self._next_solution += 1
        return Solution(
            id=f"n{self._next_solution}", code=code, parent_id=parent,
            hypothesis_id=hypothesis_id, created_at=self.clock.now,
        )

    def _new_hypothesis_id(self) -> str:
        self._next_hypothesis += 1
        return f"th-{self._next_hypothesis}"

    # - evaluation -

    def _better(self, a: Optional[float], b: Optional[float]) -> bool:
        """Is a better than b, direction-adjusted, treating None as worst?"""
        if a is None:
            return False
        if b is None:
            return True
        return direction_adjusted_delta(a, b, self.task.direction) > 0

    def _evaluate_node(self, node: TreeNode, hypothesis: Hypothesis,
                       best_score: Optional[float]) -> tuple[Optional[float], bool]:
        """Execute and validate one node's solution; one budget unit."""
        solution = self.solutions[node.id]
        self.clock.tick()
        self._evaluations += 1
        iteration = self._evaluations
        if solution is None:
            # implementation failure: rejected without execution
            self._emit(EventKind.Executed, {
                "iteration": iteration,
                "solution_id": f"failed-node-{node.id}",
                "score": None,
                "exit_status": "NonzeroExit",
                "wall_seconds": 0.0,
            })
            self._emit(EventKind.GateOutcome, {
                "iteration": iteration,
                "gate": "Format",
                "passed": False,
                "reason": "implementation failed; no runnable code",
                "findings": [],
            })
            self._emit(EventKind.Decision, {
                "iteration": iteration,
                "decision": False,
                "delta": None,
                "hypothesis": {"id": hypothesis.id, "text": hypothesis.text,
                               "component": hypothesis.target_component.value,
                               "origin": hypothesis.origin.value},
            })
            return None, False
        workdir = self.run_dir / f"node{node.id}"
        eval_seed = self.config.eval_seed
        score, exec_trace = self.executor.execute(
            solution, self.task, ExecMode(DataMode.FullData, seed=eval_seed),
            self.timeout_state, workdir=workdir,
        )
        self.timeout_state = escalate_timeout(
            self.timeout_state, exec_trace.exit_status
        )
        if self.config.deterministic:
            exec_trace = replace(exec_trace, wall_seconds=0.0)
        self._emit(EventKind.Executed, {
            "iteration": iteration,
            "solution_id": solution.id,
            "score": score,
            "exit_status": exec_trace.exit_status.value,
            "wall_seconds": exec_trace.wall_seconds,
        })
        perf = PerfPair(current=score, best=best_score)
        if score is not None and best_score is not None:
            delta = direction_adjusted_delta(score, best_score, self.task.direction)
        elif score is not None:
            delta = 0.0
        else:
            delta = None
        submission = workdir / "scratch" / "submission.csv"
        with self.permits.feedback.acquire():
            decision, _reason = validate(
                solution, perf, exec_trace, None, self.oracle,
                task=self.task, submission_path=submission,
                hypothesis=hypothesis,
                tolerance=self.config.near_tie_tolerance,
                on_gate=lambda outcome: self._emit(EventKind.GateOutcome, {
                    "iteration": iteration,
                    "gate": outcome.gate.value,
                    "passed": outcome.passed,
                    "reason": outcome.reason_text,
                    "findings": list(outcome.findings),
                }),
            )
        self._emit(EventKind.Decision, {
            "iteration": iteration,
            "decision": decision,
            "delta": delta,
            "hypothesis": {"id": hypothesis.id, "text": hypothesis.text,
                           "component": hypothesis.target_component.value,
                           "origin": hypothesis.origin.value},
        })
        if decision:
            self._accepted += 1
        return score, decision

    # - expansion -

    def expand(self, tree: SearchTree, node: TreeNode, k: int,
               path: list[tuple[int, int]], budget: Budget,
               best: dict) -> Budget:
        """Generate up to k children, each immediately implemented,
        executed, validated, rewarded, and backpropagated. Stops early when
        the budget runs out."""
        if node.depth >= self.config.max_depth:
            raise ExpansionRefused(
                f"node {node.id} is at the depth cap {self.config.max_depth}"
            )
        parent_solution = self.solutions[node.id]
        self.clock.tick()
        challenges = extract_challenges(
            3, None, "", self.task, self.oracle, count=k,
        )
        if not challenges:
            challenges = [Challenge("explore a fresh variation", ChallengeSource.Scenario)]
        for j in range(k):
            if budget.exhausted:
                break
            challenge = challenges[j % len(challenges)]
            hypothesis = generate_hypothesis(
                challenge, parent_solution, None, self.task, self.oracle,
                hypothesis_id=self._new_hypothesis_id(), unique=False,
            )
            child = TreeNode(
                id=self._new_node_id(),
                solution_id="",
                parent=node.id,
                depth=node.depth + 1,
            )
            try:
                solution = implement(
                    hypothesis, parent_solution, self.task, self.oracle,
                    self.executor, make_solution=self._make_solution,
                    max_fix_iters=self.config.max_fix_iters,
                    dev_seed=self.config.eval_seed,
                )
                child.solution_id = solution.id
                self.solutions[child.id] = solution
            except ImplementationFailed:
                child.solution_id = f"failed-node-{child.id}"
                self.solutions[child.id] = None
            tree.add_child(node, child)
            self._emit(EventKind.HypothesisChosen, {
                "node": child.id,
                "parent": node.id,
                "hypothesis": {"id": hypothesis.id, "text": hypothesis.text,
                               "component": hypothesis.target_component.value,
                               "origin": hypothesis.origin.value},
                "pool": [],
            })
            score, decision = self._evaluate_node(
                child, hypothesis, best.get("score")
            )
            budget = budget.consume(1)
            self.scores[child.id] = score
            self.validated[child.id] = decision
            value = reward(decision, score, self.task.direction,
                           self.config.reward_mode)
            backprop(
                tree, path + [(node.id, child.id)], value,
                on_update=lambda p, c, r, q, n: self._emit(EventKind.TreeUpdate, {
                    "parent": p, "child": c, "reward": r, "q": q, "n": n,
                }),
            )
            if decision and self._better(score, best.get("score")):
                best.update(score=score, node_id=child.id)
            if self._stop_early(best):
                break
        return budget

    # - run loop -

    def _select_path(self, tree: SearchTree) -> tuple[Optional[TreeNode], list]:
        """Descend via PUCT through expanded nodes, skipping terminal
        subtrees; returns (leaf, path) or (None, []) when the whole tree is
        terminal."""
        node = tree.root
        path: list[tuple[int, int]] = []
        while True:
            if node.terminal:
                return None, []
            if not node.children:
                return node, path
            live = [
                edge for edge in node.children
                if not tree.nodes[edge.action].terminal
            ]
            if not live:
                node.terminal = True
                node = tree.root
                path = []
                continue
            best_edge: Optional[EdgeStats] = None
            best_u = -math.inf
            for edge in live:
                u = puct_score(edge.q, node.visit_count, edge.n, self.config.c_puct)
                if u > best_u or (
                    u == best_u and best_edge is not None and edge.action < best_edge.action
                ):
                    best_edge, best_u = edge, u
            path.append((node.id, best_edge.action))
            node = tree.nodes[best_edge.action]

    def _stop_early(self, best: dict) -> bool:
        threshold = self.config.early_stop_score
        score = best.get("score")
        if threshold is None or score is None:
            return False
        if self.task.direction is Direction.HigherBetter:
            return score >= threshold
        return score <= threshold

    def run(self) -> tuple[Solution, RunReport]:
        budget = Budget(
            mode=(
                BudgetMode.IterationCount
                if self.config.budget_mode == "iterations"
                else BudgetMode.WallClockSeconds
            ),
            total=self.config.budget_total,
        )
        self.clock.tick()
        init = self.oracle.complete(
            Role.InitHypothesis,
            task_description=self.task.description,
            prior_hypotheses="",
            prior_count="0",
        )
        from .reasoning import parse_hypothesis_text

        text, component, _ = parse_hypothesis_text(init.text)
        root_hypothesis = Hypothesis(
            id=self._new_hypothesis_id(), text=text, target_component=component
        )
        root_solution = implement(
            root_hypothesis, None, self.task, self.oracle, self.executor,
            make_solution=self._make_solution,
            max_fix_iters=self.config.max_fix_iters,
            dev_seed=self.config.eval_seed,
        )
        root = TreeNode(
            id=self._new_node_id(), solution_id=root_solution.id,
            parent=None, depth=0,
        )
        tree = SearchTree(root)
        self.solutions[root.id] = root_solution
        self._emit(EventKind.Init, {
            "hypothesis": {"id": root_hypothesis.id, "text": root_hypothesis.text,
                           "component": root_hypothesis.target_component.value,
                           "origin": root_hypothesis.origin.value},
            "solution_id": root_solution.id,
        })

        best: dict = {"score": None, "node_id": root.id}
        if not budget.exhausted:
            score, decision = self._evaluate_node(root, root_hypothesis, None)
            budget = budget.consume(1)
            self.scores[root.id] = score
            self.validated[root.id] = decision
            root.visit_count += 1
            if decision and score is not None:
                best.update(score=score, node_id=root.id)

        while not budget.exhausted and not self._stop_early(best):
            leaf, path = self._select_path(tree)
            if leaf is None:
                break
            if leaf.depth >= self.config.max_depth:
                leaf.terminal = True
                continue
            budget = self.expand(tree, leaf, self.config.expand_k, path,
                                 budget, best)

        best_node = tree.nodes[best["node_id"]]
        best_solution = self.solutions[best_node.id] or root_solution
        snapshot = tree_snapshot(tree)
        report = RunReport(
            kind="tree",
            best_solution_id=best_solution.id,
            best_trace_id=0,
            best_score=best.get("score"),
            total_iterations=self._evaluations,
            accepted_iterations=self._accepted,
            improvement_rate=(
                self._accepted / self._evaluations if self._evaluations else None
            ),
            ic=None,
            per_trace_iterations={0: self._evaluations},
            memory_size=0,
            budget_total=budget.total,
            budget_consumed=budget.consumed,
            extensions_granted=budget.extensions_granted,
            final_candidates=[{
                "trace_id": 0,
                "solution_id": best_solution.id,
                "val_score": best.get("score"),
                "seed_scores": [],
                "mean": best.get("score"),
            }],
            tree_nodes=len(snapshot["nodes"]),
            tree_edges=len(snapshot["edges"]),
        )
        self.clock.tick()
        self._emit(EventKind.Final, {
            "solution_id": best_solution.id,
            "mean": best.get("score"),
            "candidates": report.final_candidates,
            "tree": snapshot,
            "report": report.to_dict(),
        })
        self.log.close()
        if self._owns_run_dir:
            import shutil

            shutil.rmtree(self.run_dir, ignore_errors=True)
        return best_solution, report
