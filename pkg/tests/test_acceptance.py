"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test prints a single PASS line on success (pytest -s shows them); a
failure reads as the criterion name in the test id.
"""
from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import make_bundle
from traceopt.core import Direction, SubmissionSchema, Task
from traceopt.events import EventKind, read_log
from traceopt.experiments import (
    NO_VARIANCE,
    improvement_rate,
    run_crossover,
    run_gradient_strategy,
    run_mcts_strategy,
    spearman_ic,
    trend_p_value,
)
from traceopt.memory import (
    KernelParams,
    SuccessMemory,
    interaction_potential,
    sample_probabilities,
    sample_similar,
)
from traceopt.mcts import backprop, puct_score, reward, select_child
from traceopt.multitrace import TraceBest, final_select, init_diversified
from traceopt.oracle import Oracle, RetryPolicy, Role, ScriptedBackend, hash_embed
from traceopt.reasoning import adaptive_lambda
from traceopt.replay import replay, report_from_log
from traceopt.validation import (
    fixture_score_delta,
    load_fixture_pack,
    replay_fixture_case,
    score_only_decision,
    validate,
)

FIXTURE_PACK = Path(__file__).parent / "fixtures" / "overfit_cases.jsonl"


def _report(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


# ---------------------------------------------------------------------------

def test_lambda_schedule_exhaustive():
    """Exhaustive check of the adaptive weighting schedule on [0,12]^2."""
    started = time.monotonic()
    for n_succ in range(13):
        for n_fail in range(13):
            expected = max(0, 3 - (3 * n_succ + 2 * n_fail) // 8)
            assert adaptive_lambda(n_succ, n_fail) == expected
    assert time.monotonic() - started < 1.0
    _report("lambda schedule exhaustive on [0,12]^2, exact, <1s")


def test_puct_backprop_oracle_equivalence():
    """50 random small trees: replayed Q equals brute-force means to 1e-12;
    child selection matches argmax with the lowest-id tie rule."""
    from traceopt.mcts import EdgeStats, SearchTree, TreeNode

    started = time.monotonic()
    rng = np.random.default_rng(2024)
    for _ in range(50):
        root = TreeNode(id=0, solution_id="s0", parent=None, depth=0)
        tree = SearchTree(root)
        log: dict[tuple[int, int], list[float]] = {}
        nodes = [root]
        next_id = 1
        target_nodes = int(rng.integers(2, 31))
        while len(nodes) < target_nodes:
            parent = nodes[int(rng.integers(len(nodes)))]
            child = TreeNode(id=next_id, solution_id=f"s{next_id}",
                             parent=parent.id, depth=parent.depth + 1)
            tree.add_child(parent, child)
            nodes.append(child)
            next_id += 1
            path = []
            walk = child
            while walk.parent is not None:
                path.append((walk.parent, walk.id))
                walk = tree.nodes[walk.parent]
            path.reverse()
            backprop(tree, path, float(rng.uniform(-1, 1)),
                     on_update=lambda p, c, r, q, n:
                         log.setdefault((p, c), []).append(r))
        for (parent, child), stream in log.items():
            edge = tree.edge(parent, child)
            assert edge.n == len(stream)
            assert abs(edge.q - sum(stream) / len(stream)) <= 1e-12
        for node in nodes:
            if not node.children:
                continue
            scores = [
                (puct_score(e.q, node.visit_count, e.n, 1.0), -e.action)
                for e in node.children
            ]
            manual = node.children[max(range(len(scores)), key=scores.__getitem__)]
            assert select_child(node, 1.0).action == manual.action
    assert time.monotonic() - started < 5.0
    _report("PUCT/backprop oracle equivalence on 50 random trees, 1e-12, <5s")


def test_kernel_numerics():
    """Interaction potential vs closed form on a 1000-case grid; bound,
    softmax normalization, and empirical sampling frequencies."""
    from test_memory import _entry

    started = time.monotonic()
    rng = np.random.default_rng(77)
    for _ in range(1000):
        alpha = float(rng.uniform(0, 2))
        beta = float(rng.uniform(0, 2))
        if alpha + beta == 0:
            alpha = 0.5
        gamma = float(rng.uniform(0, 0.5))
        params = KernelParams(alpha=alpha, beta=beta, gamma=gamma)
        entry = _entry(f"idea {rng.integers(1e9)}", 0.0, score=float(rng.normal()))
        query = hash_embed(f"query {rng.integers(1e9)}")
        L = int(rng.integers(0, 60))
        h_star = float(rng.normal())
        u = interaction_potential(query, entry, params, L, h_star,
                                  Direction.HigherBetter)
        similarity = float(np.dot(query, entry.embedding))
        delta = entry.feedback.perf.current - h_star
        expected = alpha * similarity * math.exp(-gamma * L) + beta * math.tanh(delta)
        assert abs(u - expected) <= 1e-9
        assert abs(u) <= alpha + beta + 1e-12

    probs = sample_probabilities([0.0, math.log(2.0), 1.3, -0.4])
    assert abs(float(probs.sum()) - 1.0) <= 1e-12

    entries = [_entry(f"candidate {i}", 0.0, score=0.8 + 0.05 * i)
               for i in range(5)]
    query = hash_embed("fresh direction to compare")
    params = KernelParams()
    potentials = [
        interaction_potential(query, entry, params, 3, 0.8,
                              Direction.HigherBetter)
        for entry in entries
    ]
    expected_probs = sample_probabilities(potentials)
    draw_rng = np.random.default_rng(99)
    counts = np.zeros(len(entries))
    draws = 100_000
    for _ in range(draws):
        chosen = sample_similar(entries, query, params, 3, 0.8,
                                Direction.HigherBetter, draw_rng)
        counts[entries.index(chosen)] += 1
    frequencies = counts / draws
    assert np.all(np.abs(frequencies - expected_probs) <= 0.01)
    assert time.monotonic() - started < 10.0
    _report("kernel numerics: closed form 1e-9, bound, softmax 1e-12, "
            "frequencies +/-0.01 over 100k draws, <10s")


def test_reward_function():
    """Score-mode rewards match +/-tanh(v) to 1e-12; rejected is exactly -1."""
    rng = np.random.default_rng(5)
    for _ in range(500):
        v = float(rng.uniform(-3, 3))
        assert abs(reward(True, v, Direction.HigherBetter, "score")
                   - math.tanh(v)) <= 1e-12
        assert abs(reward(True, v, Direction.LowerBetter, "score")
                   + math.tanh(v)) <= 1e-12
    assert reward(False, None, Direction.HigherBetter, "score") == -1.0
    assert reward(False, 0.7, Direction.LowerBetter, "score") == -1.0
    _report("reward function: +/-tanh to 1e-12, rejected -> -1 exactly")


def _fixture_task(tmp_path) -> tuple[Task, Path]:
    task = Task(
        id="recorded", description="replayed deceptive-improvement cases",
        metric_name="mcrmse", direction=Direction.LowerBetter,
        bundle_path=tmp_path, dev_fraction=0.5,
        time_limit_dev=10, time_limit_full=10,
        schema=SubmissionSchema("id", "prediction", 4, 4),
    )
    submission = tmp_path / "sub.csv"
    submission.write_text(
        "id,prediction\n" + "\n".join(f"v{i},0.5" for i in range(4)) + "\n"
    )
    return task, submission


def test_hierarchical_gate_replay(tmp_path):
    """The recorded overfitting pack replays to exactly 6 rejections and 3
    acceptances; the score-only baseline accepts all 9."""
    started = time.monotonic()
    task, submission = _fixture_task(tmp_path)
    cases = load_fixture_pack(FIXTURE_PACK)
    assert len(cases) == 9
    rejected = accepted = 0
    for case in cases:
        decision, _, _ = replay_fixture_case(case, task=task,
                                             submission_path=submission)
        assert decision == case.expected_decision, case.case_id
        rejected += not decision
        accepted += decision
    assert (rejected, accepted) == (6, 3)
    baseline_accepts = sum(
        score_only_decision(fixture_score_delta(case))[0] for case in cases
    )
    assert baseline_accepts == 9
    assert time.monotonic() - started < 1.0
    _report("hierarchical-gate replay: 6 rejects / 3 accepts, "
            "score-only baseline accepts 9, <1s")


def test_gate_short_circuit_transcripts(tmp_path, task):
    """Format failures consume zero oracle calls; all-pass runs produce the
    exact role-prefix sequence."""
    from traceopt.core import ExecutionTrace, ExitStatus, Hypothesis, PerfPair, Solution

    ok_trace = ExecutionTrace("", "", "", "", ExitStatus.Ok, 0.0)
    solution = Solution(id="s", code="print()\n")
    hypothesis = Hypothesis(id="h", text="an idea")

    oracle = Oracle(ScriptedBackend({}), RetryPolicy(0, 0))
    decision, _ = validate(
        solution, PerfPair(0.5, None), ok_trace, None, oracle,
        task=task, submission_path=tmp_path / "missing.csv",
        hypothesis=hypothesis,
    )
    assert decision is False and oracle.roles_called() == []

    submission = tmp_path / "sub.csv"
    submission.write_text(
        "id,prediction\n" + "\n".join(f"v{i},1.0" for i in range(12)) + "\n"
    )
    oracle = Oracle(ScriptedBackend.from_sequence([
        (Role.AlignmentCheck, "no issues"),
        (Role.ComprehensiveAnalysis, "VERIFIED: improved"),
        (Role.ComprehensiveAnalysis, "quality fine"),
        (Role.Judge, "Accept"),
    ]), RetryPolicy(0, 0))
    decision, _ = validate(
        solution, PerfPair(0.4, 0.5), ok_trace, None, oracle,
        task=task, submission_path=submission, hypothesis=hypothesis,
    )
    assert decision is True
    assert oracle.roles_called() == [
        Role.AlignmentCheck, Role.ComprehensiveAnalysis,
        Role.ComprehensiveAnalysis, Role.Judge,
    ]
    _report("gate short-circuit: format-fail = zero oracle calls; "
            "all-pass = exact role prefix")


def test_memory_semantics_property():
    """Random decision sequences: |M| equals accepted count, entries are
    immutable, negative deltas commit."""
    import dataclasses

    from test_memory import _record

    rng = np.random.default_rng(123)
    for _ in range(60):
        memory = SuccessMemory()
        accepted = 0
        saw_negative = False
        n = int(rng.integers(1, 40))
        for i in range(1, n + 1):
            decision = bool(rng.random() < 0.5)
            delta = float(rng.normal())
            entry = memory.commit(_record(i, decision, delta=delta), hash_embed)
            if decision:
                accepted += 1
                assert entry is not None
                if delta < 0:
                    saw_negative = True
        assert len(memory) == accepted
        if memory.entries():
            with pytest.raises(dataclasses.FrozenInstanceError):
                memory.entries()[0].delta = 0.0
    _report("memory semantics: |M| = accepted, immutable entries, "
            "negative deltas committed")


def test_forced_diversification(task):
    """N=4 scripted init: pairwise-distinct texts and request n carries
    exactly n-1 priors."""
    oracle = Oracle(ScriptedBackend.from_sequence([
        (Role.InitHypothesis, "gradient boosting / Model"),
        (Role.InitHypothesis, "linear with interactions / FeatureEng"),
        (Role.InitHypothesis, "bagged ensemble / Ensemble"),
        (Role.InitHypothesis, "robust preprocessing / Data"),
    ]), RetryPolicy(0, 0))
    hyps = init_diversified(task, 4, oracle)
    texts = [h.text for h in hyps]
    assert len(set(texts)) == 4
    for n, entry in enumerate(oracle.transcript):
        priors = [ln for ln in entry.context["prior_hypotheses"].splitlines() if ln]
        assert len(priors) == n
    _report("forced diversification: N=4 pairwise distinct, "
            "request n holds n-1 priors")


def test_cross_trace_visibility(tmp_path):
    """Two-trace deterministic run: trace 1's t=1 commit appears as the
    memory-best pool member for trace 2's t>=2 selection."""
    from test_multitrace import _two_trace_fixtures
    from traceopt.bundles import load_task
    from traceopt.config import RunConfig
    from traceopt.multitrace import Engine

    bundle = make_bundle(tmp_path)
    task = load_task(bundle)
    oracle = Oracle(ScriptedBackend.from_sequence(_two_trace_fixtures()),
                    RetryPolicy(0, 0))
    config = RunConfig(
        max_trace_num=2, budget_total=4, challenges_per_source=1,
        max_fix_iters=0, llm_decide_longer_runtime=False, topk_final=1,
        final_seeds=(1,), deterministic=True, rng_seed=3,
    )
    engine = Engine(task, config, oracle, log_path=tmp_path / "two.jsonl",
                    run_dir=tmp_path / "two-work")
    engine.run()
    _, events = read_log(tmp_path / "two.jsonl")
    init_text = next(
        e.payload["hypothesis"]["text"] for e in events
        if e.kind is EventKind.Init and e.trace_id == 1
    )
    first_commit = next(e for e in events if e.kind is EventKind.MemoryCommit)
    assert first_commit.trace_id == 1
    pools = [
        e.payload["pool"] for e in events
        if e.kind is EventKind.HypothesisChosen and e.trace_id == 2
        and e.payload["for_iteration"] >= 2
    ]
    assert pools
    for pool in pools:
        best = [p for p in pool if p["origin"] == "MemoryBest"]
        assert best and best[0]["text"] == init_text
    _report("cross-trace visibility: trace 1 commit is trace 2's "
            "memory-best pool member at t>=2")


def test_end_to_end_determinism(tmp_path):
    """Identical scripted runs produce byte-identical logs; replay rebuilds
    the live report bit-exactly."""
    from test_multitrace import _run_single_trace

    bundle = make_bundle(tmp_path)
    _, report_a, log_a = _run_single_trace(bundle, tmp_path, "one")
    _, report_b, log_b = _run_single_trace(bundle, tmp_path, "two")
    assert log_a.read_bytes() == log_b.read_bytes()
    assert report_a == report_b
    rebuilt = report_from_log(log_a)
    assert rebuilt == report_a
    _report("end-to-end determinism: byte-identical logs, "
            "replay == live report")


def test_metrics_criteria():
    """Improvement rate on the 31-of-90 fixture log renders 34.4%; Spearman
    unit cases at 1e-12."""
    from test_experiments import _decision_events

    events = _decision_events([True] * 31 + [False] * 59)
    rate = improvement_rate(events)
    assert abs(rate - 31 / 90) <= 1e-12
    assert f"{rate:.1%}" == "34.4%"
    assert abs(spearman_ic([1, 2, 3, 4], [5, 6, 7, 8]) - 1.0) <= 1e-12
    assert abs(spearman_ic([1, 2, 3, 4], [4, 3, 2, 1]) + 1.0) <= 1e-12
    assert abs(spearman_ic([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) <= 1e-12
    assert spearman_ic([2, 2, 2], [1, 2, 3]) is NO_VARIANCE
    _report("metrics: improvement rate 34.4% (31/90); spearman "
            "{1, -1, 0.8} at 1e-12")


def test_multi_seed_selection_criteria(task):
    """final_select returns the argmax-of-mean candidate honoring direction
    and the lower-trace-id tie rule."""
    import dataclasses

    from test_multitrace import StubExecutor, _tb

    higher = dataclasses.replace(task, direction=Direction.HigherBetter)
    stub = StubExecutor({"a": [0.80, 0.80], "b": [0.83, 0.83]})
    chosen = final_select([_tb(1, "a", 0.82), _tb(2, "b", 0.81)], 2, [1, 2],
                          stub, higher)
    assert chosen.solution.id == "b"

    stub = StubExecutor({"a": [0.30], "b": [0.20]})
    chosen = final_select([_tb(1, "a", 0.3), _tb(2, "b", 0.4)], 2, [1], stub, task)
    assert chosen.solution.id == "b"  # lower better

    stub = StubExecutor({"a": [0.5], "b": [0.5]})
    chosen = final_select([_tb(2, "b", 0.5), _tb(1, "a", 0.5)], 2, [1], stub, higher)
    assert chosen.trace_id == 1
    _report("multi-seed selection: argmax of mean, direction-aware, "
            "tie to lower trace id")


@pytest.fixture(scope="module")
def crossover_report():
    return run_crossover()


def test_crossover_reproduction(crossover_report):
    """Default lab config: gap < 0 at p=0.2, gap > 0 at p=0.9, non-decreasing
    trend at significance 0.05 over 20 seeds, full grid < 60 s."""
    gaps = {level.fidelity: level.gap for level in crossover_report.levels}
    assert gaps[0.2] < 0.0
    assert gaps[0.9] > 0.0
    assert crossover_report.seeds_per_level >= 20
    assert trend_p_value(crossover_report) < 0.05
    assert crossover_report.elapsed_seconds < 60.0
    _report("crossover: gap(0.2)<0, gap(0.9)>0, increasing trend p<0.05, "
            f"grid in {crossover_report.elapsed_seconds:.1f}s")


def test_budget_parity_and_safety(crossover_report, tmp_path):
    """Both lab strategies consume exactly the configured budget; the engine
    starts no iteration after exhaustion."""
    rng = np.random.default_rng(8)
    from traceopt.experiments import SyntheticLandscape

    landscape = SyntheticLandscape.generate(rng)
    start = landscape.random_state(rng)
    for budget in (1, 50, 200):
        g = run_gradient_strategy(landscape, start, 0.5, 2.0, budget,
                                  np.random.default_rng(1))
        m = run_mcts_strategy(landscape, start, 0.5, 2.0, budget,
                              np.random.default_rng(2))
        assert g.evaluations == budget
        assert m.evaluations == budget

    from test_multitrace import _run_single_trace

    bundle = make_bundle(tmp_path)
    _, report, log_path = _run_single_trace(bundle, tmp_path, "budget")
    assert report.total_iterations == 3  # budget_total exactly
    _, events = read_log(log_path)
    assert sum(1 for e in events if e.kind is EventKind.Executed) == 3
    _report("budget parity: lab counters exact; engine stops at exhaustion")
