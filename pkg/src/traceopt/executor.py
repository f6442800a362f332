"""Child-process execution of candidate solutions.

Solutions run in an isolated scratch directory with only env-var wiring
(TASK_DATA_DIR, OUTPUT_PATH, SEED); a canary file outside the scratch
directory detects filesystem escapes. Scores come exclusively from the
bundle's grading contract: `grade <submission> --seed <n>` printing exactly
one `SCORE <decimal>` line. Anything else is a hard GradeParseError, never
a silent zero.
"""
from __future__ import annotations

import difflib
import os
import re
import subprocess
import sys
import tempfile
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from .concurrency import Permits
from .core import ExecutionTrace, ExitStatus, Solution, Task
from .errors import (
    AllSeedsFailed,
    BundleMissing,
    DebugExhausted,
    DomainError,
    GradeParseError,
    SandboxSpawnFailure,
)
from .oracle import Oracle, Role

_SCORE_RE = re.compile(r"^SCORE (-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s*$")
_CANARY_TEXT = "engine canary: solutions must not write outside their scratch directory\n"


class DataMode(Enum):
    DevSubset = "DevSubset"
    FullData = "FullData"


@dataclass(frozen=True)
class ExecMode:
    kind: DataMode
    seed: int = 0


@dataclass(frozen=True)
class TimeoutState:
    stage: int = 1
    consecutive_timeouts: int = 0
    patience: int = 2
    multiplier_cap: int = 4

    @property
    def effective_multiplier(self) -> int:
        return min(self.stage, self.multiplier_cap)


def escalate_timeout(state: TimeoutState, outcome: ExitStatus) -> TimeoutState:
    """Timeouts accumulate toward escalation; any other outcome resets the
    counter. The stage never exceeds the multiplier cap."""
    if outcome is not ExitStatus.Timeout:
        return replace(state, consecutive_timeouts=0)
    count = state.consecutive_timeouts + 1
    if count >= state.patience:
        return replace(
            state,
            stage=min(state.stage + 1, state.multiplier_cap),
            consecutive_timeouts=0,
        )
    return replace(state, consecutive_timeouts=count)


@dataclass(frozen=True)
class SeedEvalReport:
    seeds: tuple[int, ...]
    scores: tuple[Optional[float], ...]
    mean: float

    def __post_init__(self):
        if len(self.seeds) != len(self.scores):
            raise DomainError("seeds and scores must align")


class Executor:
    """Stateless per call; permits bound global concurrency."""

    def __init__(self, permits: Permits | None = None, *,
                 excerpt_bytes: int = 2048, grade_timeout: float = 60.0):
        self.permits = permits or Permits()
        self.excerpt_bytes = excerpt_bytes
        self.grade_timeout = grade_timeout

    # -- execution -------------------------------------------------------

    def execute(self, solution: Solution, task: Task, mode: ExecMode,
                timeout_state: TimeoutState | None = None, *,
                workdir: str | Path | None = None,
                best_code: str | None = None,
                ) -> tuple[Optional[float], ExecutionTrace]:
        """Run one solution against the bundle; returns (score, trace) with
        a None score whenever the run or grading could not produce one."""
        bundle = Path(task.bundle_path)
        grade = bundle / "grade"
        if not bundle.is_dir() or not grade.is_file():
            raise BundleMissing(f"bundle {bundle} lacks a grade script")
        data = bundle / "data" / ("dev" if mode.kind is DataMode.DevSubset else "full")
        if not data.is_dir():
            raise BundleMissing(f"bundle {bundle} lacks {data.name} data")

        state = timeout_state or TimeoutState()
        base_limit = (
            task.time_limit_dev if mode.kind is DataMode.DevSubset else task.time_limit_full
        )
        limit = base_limit * state.effective_multiplier

        owns_workdir = workdir is None
        workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="traceopt-"))
        workdir.mkdir(parents=True, exist_ok=True)
        scratch = workdir / "scratch"
        scratch.mkdir(exist_ok=True)
        canary = workdir / "canary"
        canary.write_text(_CANARY_TEXT, encoding="utf-8")

        script = scratch / "solution.py"
        script.write_text(solution.code, encoding="utf-8")
        submission = scratch / "submission.csv"

        env = dict(os.environ)
        env.update(
            TASK_DATA_DIR=str(data),
            OUTPUT_PATH=str(submission),
            SEED=str(mode.seed),
        )

        with self.permits.running.acquire():
            try:
                proc = subprocess.run(
                    [sys.executable, str(script)],
                    cwd=scratch,
                    env=env,
                    capture_output=True,
                    text=True,
                    timeout=limit,
                )
                stdout, stderr = proc.stdout, proc.stderr
                status = ExitStatus.Ok if proc.returncode == 0 else ExitStatus.NonzeroExit
                wall = limit if status is ExitStatus.Timeout else 0.0
            except subprocess.TimeoutExpired as exc:
                stdout = exc.stdout or ""
                stderr = exc.stderr or ""
                if isinstance(stdout, bytes):
                    stdout = stdout.decode("utf-8", "replace")
                if isinstance(stderr, bytes):
                    stderr = stderr.decode("utf-8", "replace")
                status = ExitStatus.Timeout
                wall = limit
            except OSError as exc:
                raise SandboxSpawnFailure(f"could not spawn solution process: {exc}") from exc

        if canary.exists():
            if canary.read_text(encoding="utf-8") != _CANARY_TEXT:
                status = ExitStatus.ResourceKill
                stderr += "\nsandbox violation: canary file modified"
        else:
            status = ExitStatus.ResourceKill
            stderr += "\nsandbox violation: canary file removed"

        score: Optional[float] = None
        runtime_log = ""
        if status is ExitStatus.Ok and submission.is_file():
            score, runtime_log = self._grade(grade, submission, mode.seed, env)
        elif status is ExitStatus.Ok:
            runtime_log = "no submission file produced"

        trace = ExecutionTrace(
            stdout_excerpt=self._excerpt(stdout, workdir),
            stderr_excerpt=self._excerpt(stderr, workdir, tail=True),
            runtime_log=self._excerpt(runtime_log, workdir),
            code_diff=self._diff(best_code, solution.code),
            exit_status=status,
            wall_seconds=wall,
        )
        if owns_workdir:
            self._cleanup(workdir)
        return score, trace

    def _grade(self, grade: Path, submission: Path, seed: int,
               env: dict) -> tuple[float, str]:
        cmd = [str(grade), str(submission), "--seed", str(seed)]
        if not os.access(grade, os.X_OK):
            cmd = [sys.executable] + cmd
        try:
            proc = subprocess.run(
                cmd, capture_output=True, text=True,
                timeout=self.grade_timeout, env=env,
            )
        except subprocess.TimeoutExpired as exc:
            raise GradeParseError(f"grader timed out after {self.grade_timeout}s") from exc
        except OSError as exc:
            raise GradeParseError(f"grader could not be spawned: {exc}") from exc
        if proc.returncode != 0:
            raise GradeParseError(
                f"grader exited {proc.returncode}: {proc.stderr.strip()[:300]}"
            )
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != 1:
            raise GradeParseError(
                f"grader must print exactly one score line, got {len(lines)}"
            )
        match = _SCORE_RE.match(lines[0])
        if not match:
            raise GradeParseError(f"malformed score record: {lines[0]!r}")
        return float(match.group(1)), proc.stdout

    def _excerpt(self, text: str, workdir: Path, *, tail: bool = False) -> str:
        text = text.replace(str(workdir), "<scratch>")
        raw = text.encode("utf-8")
        if len(raw) <= self.excerpt_bytes:
            return text
        if tail:
            clipped = raw[-self.excerpt_bytes:].decode("utf-8", "replace")
            return "...[truncated]" + clipped
        clipped = raw[: self.excerpt_bytes].decode("utf-8", "replace")
        return clipped + "...[truncated]"

    @staticmethod
    def _diff(best_code: str | None, new_code: str) -> str:
        if best_code is None:
            return ""
        lines = difflib.unified_diff(
            best_code.splitlines(keepends=True),
            new_code.splitlines(keepends=True),
            fromfile="best",
            tofile="candidate",
        )
        return "".join(lines)

    @staticmethod
    def _cleanup(workdir: Path) -> None:
        import shutil

        shutil.rmtree(workdir, ignore_errors=True)

    # -- debug loop ------------------------------------------------------

    def debug_loop(self, solution: Solution, task: Task, mode: ExecMode,
                   max_fix_iters: int, oracle: Oracle, *,
                   make_revision: Callable[[Solution, str], Solution] | None = None,
                   ) -> tuple[Solution, ExecutionTrace]:
        """Run; on failure ask for a fix and retry, up to max_fix_iters
        fixes. Returns the last attempted solution and its trace."""
        if max_fix_iters < 0:
            raise DomainError("max_fix_iters must be >= 0")
        if make_revision is None:
            make_revision = lambda sol, code: replace(sol, code=code)

        current = solution
        with self.permits.debugging.acquire():
            _, trace = self.execute(current, task, mode)
            fixes = 0
            while trace.exit_status is not ExitStatus.Ok:
                if fixes >= max_fix_iters:
                    raise DebugExhausted(
                        f"debug loop exhausted after {fixes} fixes", last_trace=trace
                    )
                response = oracle.complete(
                    Role.DebugFix,
                    code=current.code,
                    stderr_tail=trace.stderr_excerpt,
                    diff=trace.code_diff,
                )
                fixes += 1
                fixed_code = response.text
                if fixed_code.strip():
                    current = make_revision(current, fixed_code)
                _, trace = self.execute(current, task, mode)
        return current, trace

    # -- multi-seed evaluation -------------------------------------------

    def multi_seed_eval(self, solution: Solution, task: Task,
                        seeds: list[int] | tuple[int, ...]) -> SeedEvalReport:
        if not seeds:
            raise DomainError("seeds must be non-empty")
        if len(set(seeds)) != len(seeds):
            raise DomainError("seeds must be distinct")
        scores: list[Optional[float]] = []
        for seed in seeds:
            score, trace = self.execute(
                solution, task, ExecMode(DataMode.FullData, seed=seed)
            )
            scores.append(score if trace.exit_status is ExitStatus.Ok else None)
        present = [s for s in scores if s is not None]
        if not present:
            raise AllSeedsFailed(f"all {len(seeds)} seeded runs failed")
        return SeedEvalReport(
            seeds=tuple(seeds),
            scores=tuple(scores),
            mean=sum(present) / len(present),
        )
