from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from conftest import BASELINE_CODE, GOOD_CODE
from traceopt.config import RunConfig
from traceopt.core import (
    Budget,
    BudgetMode,
    Direction,
    Hypothesis,
    HypothesisOrigin,
    Solution,
)
from traceopt.errors import (
    DiversificationFailed,
    DomainError,
    EmptyCandidateSet,
    SelectorParseError,
)
from traceopt.events import EventKind, read_log
from traceopt.memory import KernelParams, MemoryEntry, SuccessMemory
from traceopt.multitrace import (
    Engine,
    FinalSelection,
    TraceBest,
    adjust_budget,
    build_candidate_pool,
    cross_trace_select,
    final_select,
    init_diversified,
)
from traceopt.oracle import Oracle, RetryPolicy, Role, ScriptedBackend, hash_embed
from traceopt.replay import replay, report_from_log

from test_memory import _entry  # reuse the memory-entry factory


def _oracle(*items) -> Oracle:
    return Oracle(ScriptedBackend.from_sequence(list(items)),
                  RetryPolicy(max_retry=0, wait_seconds=0))


def _scores(impact: float = 0.5) -> str:
    return json.dumps({"impact": impact, "alignment": 0.5, "novelty": 0.5,
                       "feasibility": 0.5, "risk": 0.5})


# -- forced diversification ---------------------------------------------------------

def test_init_single_trace(task):
    oracle = _oracle((Role.InitHypothesis, "boost trees / Model"))
    hyps = init_diversified(task, 1, oracle)
    assert len(hyps) == 1
    assert oracle.transcript[0].context["prior_hypotheses"] == ""


def test_init_four_traces_distinct_with_prior_context(task):
    oracle = _oracle(
        (Role.InitHypothesis, "gradient boosting / Model"),
        (Role.InitHypothesis, "linear model with interactions / FeatureEng"),
        (Role.InitHypothesis, "bagged ensembles / Ensemble"),
        (Role.InitHypothesis, "robust preprocessing / Data"),
    )
    hyps = init_diversified(task, 4, oracle)
    texts = [h.text for h in hyps]
    assert len(set(texts)) == 4
    for n, entry in enumerate(oracle.transcript):
        priors = [ln for ln in entry.context["prior_hypotheses"].splitlines() if ln]
        assert len(priors) == n
        for text in texts[:n]:
            assert any(text in line for line in priors)


def test_init_duplicate_twice_fails(task):
    oracle = _oracle(
        (Role.InitHypothesis, "alpha / Model"),
        (Role.InitHypothesis, "alpha / Model"),
        (Role.InitHypothesis, "alpha / Model"),
    )
    with pytest.raises(DiversificationFailed):
        init_diversified(task, 2, oracle, max_reprompts=1)


# -- candidate pool ---------------------------------------------------------------------

def _local(i: int, text: str | None = None) -> Hypothesis:
    return Hypothesis(id=f"loc{i}", text=text or f"local idea {i}",
                      origin=HypothesisOrigin.Local)


def test_pool_empty_memory_is_local_only():
    rng = np.random.default_rng(0)
    local = [_local(1), _local(2), _local(3)]
    pool = build_candidate_pool(local, (), KernelParams(), 1, None,
                                Direction.HigherBetter, rng, embedder=hash_embed)
    assert pool == local


def test_pool_single_entry_memory():
    rng = np.random.default_rng(0)
    local = [_local(1), _local(2)]
    entry = _entry("proven memory idea", 0.3)
    pool = build_candidate_pool(local, (entry,), KernelParams(), 1, 0.8,
                                Direction.HigherBetter, rng, embedder=hash_embed)
    texts = [h.text for h in pool]
    assert len(pool) <= 4
    assert "proven memory idea" in texts
    origins = {h.text: h.origin for h in pool}
    assert origins["proven memory idea"] is HypothesisOrigin.MemoryBest


def test_pool_dedup_across_sources():
    rng = np.random.default_rng(0)
    entry = _entry("shared text", 0.1)
    local = [_local(1, "shared text")]
    pool = build_candidate_pool(local, (entry,), KernelParams(), 1, 0.8,
                                Direction.HigherBetter, rng, embedder=hash_embed)
    assert [h.text for h in pool] == ["shared text"]
    assert pool[0].origin is HypothesisOrigin.Local


def test_pool_requires_some_source():
    with pytest.raises(EmptyCandidateSet):
        build_candidate_pool([], (), KernelParams(), 0, None,
                             Direction.HigherBetter, np.random.default_rng(0),
                             embedder=hash_embed)


# -- cross-trace selection -----------------------------------------------------------------

def test_selector_select_keeps_member():
    pool = [_local(1), _local(2), _local(3)]
    oracle = _oracle((Role.SelectHypothesis, "Select #2"))
    chosen = cross_trace_select(pool, (), oracle, new_id="new")
    assert chosen is pool[1]


def test_selector_modify_links_parent_member():
    pool = [_local(1, "add early stopping rounds")]
    oracle = _oracle(
        (Role.SelectHypothesis, "Modify #1: also add early stopping")
    )
    chosen = cross_trace_select(pool, (), oracle, new_id="new")
    assert chosen.origin is HypothesisOrigin.SelectorModified
    assert chosen.text == "also add early stopping"
    assert chosen.id == "new"


def test_selector_generate():
    pool = [_local(1)]
    oracle = _oracle((Role.SelectHypothesis, "Generate: try stacking / Ensemble"))
    chosen = cross_trace_select(pool, (), oracle, new_id="new")
    assert chosen.origin is HypothesisOrigin.SelectorGenerated
    assert chosen.text == "try stacking"


def test_selector_out_of_range_is_error():
    pool = [_local(1), _local(2), _local(3)]
    oracle = _oracle((Role.SelectHypothesis, "Select #9"))
    with pytest.raises(SelectorParseError):
        cross_trace_select(pool, (), oracle, new_id="new")


def test_selector_gibberish_is_error():
    pool = [_local(1)]
    oracle = _oracle((Role.SelectHypothesis, "hmm, maybe the second?"))
    with pytest.raises(SelectorParseError):
        cross_trace_select(pool, (), oracle, new_id="new")


# -- adaptive budget --------------------------------------------------------------------------

def _budget(total=8.0, consumed=0.0, extensions=0) -> Budget:
    return Budget(mode=BudgetMode.IterationCount, total=total,
                  consumed=consumed, extensions_granted=extensions)


def test_adjust_budget_disabled_is_identity():
    config = RunConfig(llm_decide_longer_runtime=False)
    oracle = _oracle()
    budget = _budget(consumed=7.5)
    assert adjust_budget(budget, (), (), oracle, config) == budget
    assert oracle.roles_called() == []


def test_adjust_budget_grants_bounded_extension():
    config = RunConfig(llm_decide_longer_runtime=True, extension_cap=1,
                       extension_fraction=0.25)
    oracle = _oracle((Role.BudgetDecision, "extend"))
    budget = _budget(total=8, consumed=7.5)
    extended = adjust_budget(budget, (), (), oracle, config)
    assert extended.total == pytest.approx(10.0)
    assert extended.extensions_granted == 1


def test_adjust_budget_cap_reached_is_identity():
    config = RunConfig(llm_decide_longer_runtime=True, extension_cap=1)
    oracle = _oracle((Role.BudgetDecision, "extend"))
    budget = _budget(total=10, consumed=9.5, extensions=1)
    assert adjust_budget(budget, (), (), oracle, config) == budget
    assert oracle.roles_called() == []


def test_adjust_budget_above_threshold_no_call():
    config = RunConfig(llm_decide_longer_runtime=True)
    oracle = _oracle()
    budget = _budget(total=8, consumed=1.0)
    assert adjust_budget(budget, (), (), oracle, config) == budget
    assert oracle.roles_called() == []


# -- final selection ---------------------------------------------------------------------------

class StubExecutor:
    """Scripted multi-seed scores keyed by solution id."""

    def __init__(self, table: dict[str, list[float | None]]):
        self.table = table

    def multi_seed_eval(self, solution, task, seeds):
        from traceopt.executor import SeedEvalReport

        scores = self.table[solution.id][: len(seeds)]
        present = [s for s in scores if s is not None]
        return SeedEvalReport(seeds=tuple(seeds), scores=tuple(scores),
                              mean=sum(present) / len(present))


def _tb(trace_id: int, sid: str, score: float) -> TraceBest:
    return TraceBest(trace_id, Solution(id=sid, code="print()\n"), score)


def test_final_select_argmax_of_mean_higher_better(task):
    import dataclasses

    higher = dataclasses.replace(task, direction=Direction.HigherBetter)
    stub = StubExecutor({"a": [0.80, 0.80], "b": [0.83, 0.83]})
    selection = final_select([_tb(1, "a", 0.82), _tb(2, "b", 0.81)], 2, [1, 2],
                             stub, higher)
    assert selection.solution.id == "b"
    assert selection.mean == pytest.approx(0.83)


def test_final_select_honors_lower_better(task):
    stub = StubExecutor({"a": [0.30], "b": [0.20]})
    selection = final_select([_tb(1, "a", 0.3), _tb(2, "b", 0.4)], 2, [1],
                             stub, task)
    assert selection.solution.id == "b"


def test_final_select_tie_goes_to_lower_trace_id(task):
    import dataclasses

    higher = dataclasses.replace(task, direction=Direction.HigherBetter)
    stub = StubExecutor({"a": [0.5], "b": [0.5]})
    selection = final_select([_tb(2, "b", 0.5), _tb(1, "a", 0.5)], 2, [1],
                             stub, higher)
    assert selection.trace_id == 1


def test_final_select_single_candidate_still_evaluated(task):
    stub = StubExecutor({"a": [0.42, 0.44]})
    selection = final_select([_tb(1, "a", 0.5)], 3, [1, 2], stub, task)
    assert selection.mean == pytest.approx(0.43)


def test_final_select_needs_candidates(task):
    with pytest.raises(DomainError):
        final_select([], 2, [1], StubExecutor({}), task)


# -- end-to-end scripted runs -------------------------------------------------------------------

def _single_trace_fixtures() -> list[tuple[Role, str]]:
    """Fixture tape for a 1-trace, 3-iteration run on the toy bundle."""
    ridge_variant = GOOD_CODE + "\n# ridge variant\n"
    final_probe = BASELINE_CODE + "\n# interactions probe\n"
    return [
        # phase 1
        (Role.InitHypothesis, "start from a mean-prediction baseline / Model"),
        (Role.Sketch, "read train.csv, predict the mean"),
        (Role.Implement, BASELINE_CODE),
        # iteration 1: validate baseline (first score, delta 0 -> quality runs)
        (Role.AlignmentCheck, "no issues"),
        (Role.ComprehensiveAnalysis, "VERIFIED: baseline established"),
        (Role.ComprehensiveAnalysis, "code quality adequate"),
        (Role.Judge, "Accept: baseline recorded"),
        # iteration 1 reasoning (lambda=3: scenario only)
        (Role.ExtractChallenges, '["model ignores the linear trend"]'),
        (Role.GenerateHypothesis, "fit the slope directly / Model"),
        (Role.ScoreHypothesis, _scores(impact=0.9)),
        (Role.Sketch, "least-squares slope through the origin"),
        (Role.Implement, GOOD_CODE),
        # iteration 2: validate the slope fit (big improvement)
        (Role.AlignmentCheck, "no issues"),
        (Role.ComprehensiveAnalysis, "VERIFIED: rmse dropped sharply"),
        (Role.ComprehensiveAnalysis, "code quality adequate"),
        (Role.Judge, "Accept: genuine improvement"),
        # iteration 2 reasoning (lambda still 3)
        (Role.ExtractChallenges, '["maybe regularization helps"]'),
        (Role.GenerateHypothesis, "add ridge regularization / Model"),
        (Role.ScoreHypothesis, _scores(impact=0.6)),
        (Role.Sketch, "same fit with a ridge term"),
        (Role.Implement, ridge_variant),
        # iteration 3: identical predictions, judge rejects the tie
        (Role.AlignmentCheck, "no issues"),
        (Role.ComprehensiveAnalysis, "VERIFIED: no regression observed"),
        (Role.ComprehensiveAnalysis, "code quality adequate"),
        (Role.Judge, "Reject: no measurable gain"),
        # iteration 3 reasoning (lambda = 2: scenario + history)
        (Role.ExtractChallenges, '["feature interactions unexplored"]'),
        (Role.ExtractChallenges, '["repeated tie suggests plateau"]'),
        (Role.GenerateHypothesis, "try feature interactions / FeatureEng"),
        (Role.GenerateHypothesis, "handle outliers in y / Data"),
        (Role.ScoreHypothesis, _scores(impact=0.8)),
        (Role.ScoreHypothesis, _scores(impact=0.2)),
        (Role.Sketch, "cross features before fitting"),
        (Role.Implement, final_probe),
    ]


def _single_trace_config() -> RunConfig:
    return RunConfig(
        max_trace_num=1,
        budget_total=3,
        challenges_per_source=1,
        topk_sample=1,
        max_fix_iters=0,
        llm_decide_longer_runtime=False,
        topk_final=1,
        final_seeds=(1,),
        deterministic=True,
        rng_seed=0,
    )


def _run_single_trace(bundle_dir, tmp_path, name: str):
    from traceopt.bundles import load_task

    task = load_task(bundle_dir)
    oracle = _oracle(*_single_trace_fixtures())
    log_path = tmp_path / f"{name}.jsonl"
    engine = Engine(task, _single_trace_config(), oracle,
                    log_path=log_path, run_dir=tmp_path / f"{name}-work")
    solution, report = engine.run()
    return solution, report, log_path


def test_single_trace_three_iteration_run(bundle_dir, tmp_path):
    solution, report, log_path = _run_single_trace(bundle_dir, tmp_path, "run")
    # the slope-fit solution from iteration 2 wins
    assert solution.code == GOOD_CODE
    assert report.total_iterations == 3
    assert report.accepted_iterations == 2
    assert report.improvement_rate == pytest.approx(2 / 3)
    assert report.memory_size == 2
    assert report.best_score is not None and report.best_score < 1.0

    from traceopt.experiments import improvement_rate

    _, events = read_log(log_path)
    assert improvement_rate(events) == pytest.approx(2 / 3)
    kinds = [e.kind for e in events]
    assert kinds.count(EventKind.Executed) == 3
    assert kinds.count(EventKind.Decision) == 3
    assert kinds.count(EventKind.MemoryCommit) == 2
    assert kinds[-1] is EventKind.Final


def test_zero_budget_returns_initial_best(bundle_dir, tmp_path):
    from traceopt.bundles import load_task

    task = load_task(bundle_dir)
    oracle = _oracle(
        (Role.InitHypothesis, "baseline / Model"),
        (Role.Sketch, "plan"),
        (Role.Implement, BASELINE_CODE),
    )
    config = RunConfig(
        max_trace_num=1, budget_total=0, max_fix_iters=0,
        llm_decide_longer_runtime=False, topk_final=1, final_seeds=(1,),
    )
    engine = Engine(task, config, oracle, log_path=tmp_path / "zero.jsonl",
                    run_dir=tmp_path / "zero-work")
    solution, report = engine.run()
    assert solution.code == BASELINE_CODE
    assert report.total_iterations == 0
    assert report.improvement_rate is None


def test_deterministic_runs_are_byte_identical(bundle_dir, tmp_path):
    _, report_a, log_a = _run_single_trace(bundle_dir, tmp_path, "first")
    _, report_b, log_b = _run_single_trace(bundle_dir, tmp_path, "second")
    assert log_a.read_bytes() == log_b.read_bytes()
    assert report_a == report_b


def test_replay_reproduces_live_report(bundle_dir, tmp_path):
    _, report, log_path = _run_single_trace(bundle_dir, tmp_path, "run")
    rebuilt = report_from_log(log_path)
    assert rebuilt == report
    state = replay(log_path)
    assert len(state.memory_records) == report.memory_size
    assert state.traces[1].iterations == 3


# -- cross-trace visibility -----------------------------------------------------------------------

def _two_trace_fixtures() -> list[tuple[Role, str]]:
    variant = BASELINE_CODE + "\n# second trace\n"

    def iteration(verify: str, challenge: str, hypothesis: str,
                  select: str, code: str) -> list[tuple[Role, str]]:
        return [
            (Role.AlignmentCheck, "no issues"),
            (Role.ComprehensiveAnalysis, verify),
            (Role.ComprehensiveAnalysis, "code quality adequate"),
            (Role.Judge, "Accept"),
            (Role.ExtractChallenges, f'["{challenge}"]'),
            (Role.GenerateHypothesis, hypothesis),
            (Role.ScoreHypothesis, _scores()),
            (Role.SelectHypothesis, select),
            (Role.Sketch, "apply it"),
            (Role.Implement, code),
        ]

    return [
        # phase 1: two diversified seeds
        (Role.InitHypothesis, "mean baseline / Model"),
        (Role.InitHypothesis, "slope fit / Model"),
        (Role.Sketch, "plan one"),
        (Role.Implement, BASELINE_CODE),
        (Role.Sketch, "plan two"),
        (Role.Implement, variant),
        # round 1: trace 1 then trace 2 (both accept, committing their seeds)
        *iteration("VERIFIED: t1 baseline", "t1 challenge one",
                   "t1 refine weighting / Model", "Select #1", BASELINE_CODE),
        *iteration("VERIFIED: t2 baseline", "t2 challenge one",
                   "t2 add features / FeatureEng", "Select #1", variant),
        # round 2
        *iteration("VERIFIED: t1 round two", "t1 challenge two",
                   "t1 tune depth / Model", "Select #1", BASELINE_CODE),
        *iteration("VERIFIED: t2 round two", "t2 challenge two",
                   "t2 calibrate / Workflow", "Select #1", variant),
    ]


def test_cross_trace_memory_visibility(bundle_dir, tmp_path):
    from traceopt.bundles import load_task

    task = load_task(bundle_dir)
    oracle = _oracle(*_two_trace_fixtures())
    config = RunConfig(
        max_trace_num=2,
        budget_total=4,
        challenges_per_source=1,
        max_fix_iters=0,
        llm_decide_longer_runtime=False,
        topk_final=1,
        final_seeds=(1,),
        deterministic=True,
        rng_seed=3,
    )
    engine = Engine(task, config, oracle, log_path=tmp_path / "two.jsonl",
                    run_dir=tmp_path / "two-work")
    engine.run()

    _, events = read_log(tmp_path / "two.jsonl")
    init_hyps = {
        e.trace_id: e.payload["hypothesis"]["text"]
        for e in events if e.kind is EventKind.Init
    }
    commits = [e for e in events if e.kind is EventKind.MemoryCommit]
    assert commits and commits[0].trace_id == 1

    # trace 2's pool for its second iteration must carry trace 1's committed
    # hypothesis as the memory-best member
    chosen = [
        e for e in events
        if e.kind is EventKind.HypothesisChosen and e.trace_id == 2
        and e.payload["for_iteration"] >= 2
    ]
    assert chosen
    for event in chosen:
        pool = event.payload["pool"]
        best_members = [p for p in pool if p["origin"] == "MemoryBest"]
        assert best_members
        assert best_members[0]["text"] == init_hyps[1]
