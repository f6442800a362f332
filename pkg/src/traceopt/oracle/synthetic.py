"""Synthetic fidelity backend.

Stands in for the reasoning model: proposals and verdicts are generated
algorithmically and are correct with probability p (the fidelity knob), so
desk-scale experiments can dial reasoning quality up and down.
"""
from __future__ import annotations

import json
import threading

import numpy as np

from .base import OracleRequest, OracleResponse, Role, SyntheticOracleParams

_LEAK_MARKERS = ("private/", "answers_", "holdout", "test_label")

_SEED_STRATEGIES = (
    "fit a gradient boosted tree ensemble with shallow depth",
    "fit a regularized linear model with standardized features",
    "add pairwise feature interactions before the model",
    "bag several differently-seeded models and average predictions",
    "tune the regularization strength with a small validation sweep",
    "winsorize outliers in the target before fitting",
    "add polynomial features of the strongest predictors",
    "switch to a robust loss to downweight noisy rows",
)


def directed_proposal(rng: np.random.Generator, fidelity: float,
                      improving_moves: list, all_moves: list):
    """One move proposal: with probability p an improving move (when any
    exist), otherwise a uniformly random move. At p=0 this degenerates to a
    uniform random walk over the move set."""
    if improving_moves and rng.random() < fidelity:
        return improving_moves[int(rng.integers(len(improving_moves)))]
    return all_moves[int(rng.integers(len(all_moves)))]


class SyntheticBackend:
    name = "synthetic"
    deterministic = True

    def __init__(self, params: SyntheticOracleParams):
        self.params = params
        self._rng = np.random.default_rng(params.rng_seed)
        self._lock = threading.Lock()
        self._counter = 0

    def _next(self) -> int:
        self._counter += 1
        return self._counter

    def _correct(self) -> bool:
        return bool(self._rng.random() < self.params.fidelity)

    def complete(self, request: OracleRequest) -> OracleResponse:
        with self._lock:
            return OracleResponse(text=self._answer(request))

    def _answer(self, request: OracleRequest) -> str:
        role, ctx = request.role, request.context
        n = self._next()
        if role is Role.InitHypothesis:
            prior_count = int(ctx.get("prior_count", "0"))
            strategy = _SEED_STRATEGIES[prior_count % len(_SEED_STRATEGIES)]
            return f"{strategy} / Model"
        if role is Role.ExtractChallenges:
            mode = ctx.get("mode", "scenario")
            count = int(ctx.get("count", "3"))
            return json.dumps([f"{mode} challenge {n}.{i + 1}" for i in range(count)])
        if role is Role.GenerateHypothesis:
            challenge = ctx.get("challenge", "improve the pipeline")
            return f"address: {challenge} (variant {n}) / Model"
        if role is Role.ScoreHypothesis:
            dims = {
                name: round(float(self._rng.uniform(0.2, 1.0)), 3)
                for name in ("impact", "alignment", "novelty", "feasibility", "risk")
            }
            return json.dumps(dims)
        if role is Role.SelectHypothesis:
            return "Select #1"
        if role is Role.Sketch:
            return f"plan {n}: apply the hypothesis with minimal code churn"
        if role is Role.Implement:
            base = ctx.get("best_code") or ctx.get("baseline_code") or ""
            if not base.strip():
                return ""
            return base + f"\n# synthetic revision {n}\n"
        if role is Role.DebugFix:
            return ctx.get("code", "")
        if role is Role.AlignmentCheck:
            leaked = any(marker in ctx.get("code", "") for marker in _LEAK_MARKERS)
            report_leak = leaked if self._correct() else not leaked
            if report_leak:
                return json.dumps({"findings": ["solution reads held-out labels"]})
            return "no issues"
        if role is Role.ComprehensiveAnalysis:
            if ctx.get("purpose") == "quality":
                return "code quality adequate"
            improving = float(ctx.get("delta", "0") or 0) > 0
            verified = improving if self._correct() else not improving
            return "VERIFIED: effect observed" if verified else "REFUTED: effect not observed"
        if role is Role.Judge:
            improving = float(ctx.get("delta", "0") or 0) > 0
            accept = improving if self._correct() else not improving
            return "Accept" if accept else "Reject"
        if role is Role.BudgetDecision:
            return "stop"
        return f"synthetic response {n}"
