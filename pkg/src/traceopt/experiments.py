"""Run metrics and the synthetic fidelity-crossover lab.

The lab pits two strategies against a hidden unimodal landscape under a
shared evaluation budget: a directed hill climb whose proposals come from
the synthetic oracle (proposal quality p, score noise sigma0 * (1 - p)),
and a random-move PUCT tree search with averaging backprop. Low fidelity
favors the tree's averaging; high fidelity favors the directed walk.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, EmptyLog
from .events import EventKind, RunEvent
from .oracle.synthetic import directed_proposal


# -- metrics -------------------------------------------------------------------

def improvement_rate(events: Sequence[RunEvent]) -> float:
    """Fraction of logged iterations whose proposal was accepted."""
    decisions = [
        bool(e.payload["decision"]) for e in events if e.kind is EventKind.Decision
    ]
    if not decisions:
        raise EmptyLog("no iterations in log")
    return sum(decisions) / len(decisions)


class _NoVariance:
    """Explicit outcome for rank correlation over a constant series."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NoVariance"


NO_VARIANCE = _NoVariance()


def _average_ranks(values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=np.float64)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        # ties share the average of the ranks they span (1-based)
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def spearman_ic(val_deltas: Sequence[float], test_deltas: Sequence[float]):
    """Spearman rank correlation with average ranks for ties. A constant
    series has no defined correlation and returns NO_VARIANCE."""
    if len(val_deltas) != len(test_deltas):
        raise DomainError("series must have equal length")
    if len(val_deltas) < 2:
        raise DomainError("need at least two observations")
    ranks_a = _average_ranks(val_deltas)
    ranks_b = _average_ranks(test_deltas)
    da = ranks_a - ranks_a.mean()
    db = ranks_b - ranks_b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0:
        return NO_VARIANCE
    return float(np.dot(da, db)) / denom


# -- synthetic landscape ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticLandscape:
    """Hidden-target landscape: score(state) = -L1(state, target), maximal
    (zero) exactly at the target and unimodal under single-coordinate
    steps."""

    dimension: int
    arity: int
    hidden_target: tuple[int, ...]
    rng_seed: int = 0

    def __post_init__(self):
        if self.dimension < 1 or self.arity < 2:
            raise DomainError("need dimension >= 1 and arity >= 2")
        if len(self.hidden_target) != self.dimension:
            raise DomainError("target length must equal dimension")
        if any(not (0 <= v < self.arity) for v in self.hidden_target):
            raise DomainError("target values must lie in [0, arity)")

    @classmethod
    def generate(cls, rng: np.random.Generator, dimension: int = 8,
                 arity: int = 10, rng_seed: int = 0) -> "SyntheticLandscape":
        target = tuple(int(v) for v in rng.integers(0, arity, size=dimension))
        return cls(dimension=dimension, arity=arity, hidden_target=target,
                   rng_seed=rng_seed)

    def random_state(self, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(v) for v in rng.integers(0, self.arity, size=self.dimension))

    def score(self, state: Sequence[int]) -> float:
        return -float(sum(abs(s - t) for s, t in zip(state, self.hidden_target)))

    def moves(self, state: Sequence[int]) -> list[tuple[int, int]]:
        out = []
        for i, value in enumerate(state):
            if value + 1 < self.arity:
                out.append((i, +1))
            if value - 1 >= 0:
                out.append((i, -1))
        return out

    def improving_moves(self, state: Sequence[int]) -> list[tuple[int, int]]:
        target = self.hidden_target
        return [
            (i, step)
            for i, step in self.moves(state)
            if abs(state[i] + step - target[i]) < abs(state[i] - target[i])
        ]

    @staticmethod
    def apply(state: Sequence[int], move: tuple[int, int]) -> tuple[int, ...]:
        i, step = move
        out = list(state)
        out[i] += step
        return tuple(out)


# -- lab strategies ----------------------------------------------------------------

@dataclass
class StrategyResult:
    final_state: tuple[int, ...]
    final_true_score: float
    evaluations: int
    first_optimum_eval: Optional[int] = None


def run_gradient_strategy(landscape: SyntheticLandscape,
                          start: tuple[int, ...], fidelity: float,
                          noise_scale: float, eval_budget: int,
                          rng: np.random.Generator) -> StrategyResult:
    """Directed hill climb. The current best's observed (noisy) score is
    remembered from the run that promoted it; proposals must beat that
    remembered bar, so a lucky noise draw can deceptively freeze progress.
    The start state's score counts as known and costs nothing."""
    sigma = noise_scale * (1.0 - fidelity)
    state = start
    observed_best = landscape.score(state)
    first_optimum = None
    for evaluation in range(1, eval_budget + 1):
        move = directed_proposal(
            rng, fidelity, landscape.improving_moves(state), landscape.moves(state)
        )
        candidate = landscape.apply(state, move)
        observed = landscape.score(candidate)
        if sigma > 0:
            observed += sigma * rng.standard_normal()
        if observed > observed_best:
            state = candidate
            observed_best = observed
        if first_optimum is None and state == landscape.hidden_target:
            first_optimum = evaluation
    return StrategyResult(
        final_state=state,
        final_true_score=landscape.score(state),
        evaluations=eval_budget,
        first_optimum_eval=first_optimum,
    )


@dataclass
class _LabNode:
    state: tuple[int, ...]
    node_id: int
    depth: int
    parent: Optional["_LabNode"] = None
    children: list["_LabNode"] = field(default_factory=list)
    edge_q: float = 0.0
    edge_n: int = 0
    exhausted: bool = False


def run_mcts_strategy(landscape: SyntheticLandscape, start: tuple[int, ...],
                      fidelity: float, noise_scale: float, eval_budget: int,
                      rng: np.random.Generator, *, expand_k: int = 3,
                      c_puct: float = 1.0,
                      directed: bool = False) -> StrategyResult:
    """Random-move tree search with PUCT selection and averaging backprop.
    Rewards are the noisy observed score relative to the root, so one tree
    level corresponds to one unit of reward. Each child evaluation costs
    one budget unit; expansion stops mid-node when the budget runs out,
    which keeps the evaluation counters of both strategies identical."""
    sigma = noise_scale * (1.0 - fidelity)
    root_true = landscape.score(start)
    root = _LabNode(state=start, node_id=0, depth=0)
    next_id = 1
    evaluations = 0

    while evaluations < eval_budget:
        node = root
        while node.children and (len(node.children) >= expand_k or node.exhausted):
            parent_visits = sum(c.edge_n for c in node.children)
            best_child, best_u = None, -math.inf
            for child in node.children:
                u = child.edge_q + c_puct * math.sqrt(parent_visits) / (1 + child.edge_n)
                if u > best_u or (u == best_u and child.node_id < best_child.node_id):
                    best_child, best_u = child, u
            node = best_child

        taken = {c.state for c in node.children}
        moves = landscape.moves(node.state)
        order = rng.permutation(len(moves))
        candidates = [landscape.apply(node.state, moves[i]) for i in order]
        if directed:
            move = directed_proposal(
                rng, fidelity, landscape.improving_moves(node.state), moves
            )
            candidates.insert(0, landscape.apply(node.state, move))
        child = None
        for candidate in candidates:
            if candidate not in taken:
                child = _LabNode(
                    state=candidate, node_id=next_id,
                    depth=node.depth + 1, parent=node,
                )
                next_id += 1
                node.children.append(child)
                break
        if child is None:
            # every reachable move already has a node; mark the dead end so
            # selection descends through it instead of re-picking it
            node.exhausted = True
            if node is root and not root.children:
                break
            continue

        observed = landscape.score(child.state)
        if sigma > 0:
            observed += sigma * rng.standard_normal()
        evaluations += 1
        reward = observed - root_true
        walk = child
        while walk.parent is not None:
            walk.edge_q = (walk.edge_n * walk.edge_q + reward) / (walk.edge_n + 1)
            walk.edge_n += 1
            walk = walk.parent

    # robust-child descent: follow visits, then Q, then lower id
    node = root
    while node.children:
        node = max(node.children, key=lambda c: (c.edge_n, c.edge_q, -c.node_id))
    return StrategyResult(
        final_state=node.state,
        final_true_score=landscape.score(node.state),
        evaluations=evaluations,
    )


# -- crossover harness ----------------------------------------------------------------

@dataclass(frozen=True)
class CrossoverLevel:
    fidelity: float
    gradient_mean: float
    gradient_std: float
    mcts_mean: float
    mcts_std: float
    gap: float
    gradient_scores: tuple[float, ...]
    mcts_scores: tuple[float, ...]

    @property
    def per_seed_gaps(self) -> tuple[float, ...]:
        return tuple(
            g - m for g, m in zip(self.gradient_scores, self.mcts_scores)
        )


@dataclass(frozen=True)
class CrossoverReport:
    levels: tuple[CrossoverLevel, ...]
    seeds_per_level: int
    eval_budget: int
    noise_scale: float
    base_seed: int
    elapsed_seconds: float

    def as_table(self) -> str:
        header = "fidelity\tgradient_mean\tgradient_std\tmcts_mean\tmcts_std\tgap"
        rows = [header]
        for level in self.levels:
            rows.append(
                f"{level.fidelity:g}\t{level.gradient_mean:.4f}\t"
                f"{level.gradient_std:.4f}\t{level.mcts_mean:.4f}\t"
                f"{level.mcts_std:.4f}\t{level.gap:+.4f}"
            )
        return "\n".join(rows)

    def write_plot_data(self, path: str | Path) -> None:
        """Whitespace-delimited data file for external plotting tools."""
        lines = ["# fidelity gradient_mean gradient_std mcts_mean mcts_std gap"]
        for level in self.levels:
            lines.append(
                f"{level.fidelity:g} {level.gradient_mean:.6f} "
                f"{level.gradient_std:.6f} {level.mcts_mean:.6f} "
                f"{level.mcts_std:.6f} {level.gap:+.6f}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_crossover(fidelities: Sequence[float] = (0.2, 0.5, 0.9),
                  seeds_per_level: int = 20, *, dimension: int = 8,
                  arity: int = 10, eval_budget: int = 200,
                  noise_scale: float = 2.0, base_seed: int = 1234,
                  expand_k: int = 3, c_puct: float = 1.0,
                  directed_mcts: bool = False) -> CrossoverReport:
    """Run both strategies over the fidelity grid. Each (level, seed) cell
    owns its rng streams (seed = base xor level xor index) and both
    strategies face the same landscape and start state under the same
    budget."""
    if any(not (0.0 <= p <= 1.0) for p in fidelities):
        raise DomainError("fidelities must lie in [0, 1]")
    started = time.monotonic()
    levels = []
    for level_index, fidelity in enumerate(fidelities):
        gradient_scores = []
        mcts_scores = []
        for seed_index in range(seeds_per_level):
            entropy = base_seed ^ level_index ^ seed_index
            land_rng, grad_rng, mcts_rng = (
                np.random.default_rng(s)
                for s in np.random.SeedSequence(entropy).spawn(3)
            )
            landscape = SyntheticLandscape.generate(
                land_rng, dimension=dimension, arity=arity, rng_seed=entropy
            )
            start = landscape.random_state(land_rng)
            gradient = run_gradient_strategy(
                landscape, start, fidelity, noise_scale, eval_budget, grad_rng
            )
            tree = run_mcts_strategy(
                landscape, start, fidelity, noise_scale, eval_budget, mcts_rng,
                expand_k=expand_k, c_puct=c_puct, directed=directed_mcts,
            )
            if gradient.evaluations != eval_budget or tree.evaluations != eval_budget:
                raise DomainError(
                    "budget parity violated: "
                    f"gradient={gradient.evaluations} mcts={tree.evaluations}"
                )
            gradient_scores.append(gradient.final_true_score)
            mcts_scores.append(tree.final_true_score)
        g = np.asarray(gradient_scores)
        m = np.asarray(mcts_scores)
        levels.append(CrossoverLevel(
            fidelity=fidelity,
            gradient_mean=float(g.mean()),
            gradient_std=float(g.std(ddof=1)) if len(g) > 1 else 0.0,
            mcts_mean=float(m.mean()),
            mcts_std=float(m.std(ddof=1)) if len(m) > 1 else 0.0,
            gap=float(g.mean() - m.mean()),
            gradient_scores=tuple(gradient_scores),
            mcts_scores=tuple(mcts_scores),
        ))
    return CrossoverReport(
        levels=tuple(levels),
        seeds_per_level=seeds_per_level,
        eval_budget=eval_budget,
        noise_scale=noise_scale,
        base_seed=base_seed,
        elapsed_seconds=time.monotonic() - started,
    )


def trend_p_value(report: CrossoverReport, *, permutations: int = 2000,
                  seed: int = 0) -> float:
    """One-sided permutation test that the per-seed gap trend across the
    fidelity grid is increasing: the statistic is the mean per-seed OLS
    slope of gap against fidelity, and the null shuffles fidelity labels
    within each seed."""
    fidelities = np.array([level.fidelity for level in report.levels])
    gaps = np.array([level.per_seed_gaps for level in report.levels])  # level x seed
    if gaps.shape[0] < 2:
        raise DomainError("trend test needs at least two fidelity levels")
    centered_f = fidelities - fidelities.mean()
    denom = float(np.dot(centered_f, centered_f))

    def mean_slope(matrix: np.ndarray) -> float:
        slopes = (centered_f @ matrix) / denom
        return float(slopes.mean())

    observed = mean_slope(gaps)
    rng = np.random.default_rng(seed)
    hits = 0
    n_levels, n_seeds = gaps.shape
    for _ in range(permutations):
        shuffled = np.empty_like(gaps)
        for s in range(n_seeds):
            shuffled[:, s] = gaps[rng.permutation(n_levels), s]
        if mean_slope(shuffled) >= observed:
            hits += 1
    return (hits + 1) / (permutations + 1)
