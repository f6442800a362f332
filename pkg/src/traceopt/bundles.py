"""Task bundle loading and linting.

Bundle layout contract:

    task.toml     id, metric_name, direction, time limits, dev_fraction,
                  plus a [schema] table describing the submission file
    data/dev/     development subset visible to solutions
    data/full/    full data visible to solutions
    grade         script; `grade <submission-path> --seed <n>` prints
                  exactly one line `SCORE <decimal>` and exits 0
    baseline.py   runnable reference solution (used by the linter)
"""
from __future__ import annotations

import sys
from pathlib import Path

from .core import Direction, SubmissionSchema, Task
from .errors import BundleError, BundleMissing, DomainError

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

_DIRECTIONS = {
    "HigherBetter": Direction.HigherBetter,
    "LowerBetter": Direction.LowerBetter,
    "higher": Direction.HigherBetter,
    "lower": Direction.LowerBetter,
}


def load_task(bundle_dir: str | Path) -> Task:
    bundle = Path(bundle_dir)
    manifest = bundle / "task.toml"
    if not bundle.is_dir():
        raise BundleMissing(f"bundle directory {bundle} does not exist")
    if not manifest.is_file():
        raise BundleMissing(f"bundle manifest {manifest} does not exist")
    try:
        data = _toml.loads(manifest.read_text(encoding="utf-8"))
    except _toml.TOMLDecodeError as exc:
        raise BundleError(f"task.toml is not valid TOML: {exc}") from exc

    try:
        direction_raw = str(data["direction"])
        if direction_raw not in _DIRECTIONS:
            raise BundleError(
                f"direction must be one of {sorted(_DIRECTIONS)}, got {direction_raw!r}"
            )
        schema = None
        if "schema" in data:
            s = data["schema"]
            schema = SubmissionSchema(
                id_column=str(s["id_column"]),
                value_column=str(s["value_column"]),
                rows_dev=int(s["rows_dev"]),
                rows_full=int(s["rows_full"]),
                value_min=float(s["value_min"]) if "value_min" in s else None,
                value_max=float(s["value_max"]) if "value_max" in s else None,
            )
        task = Task(
            id=str(data["id"]),
            description=str(data.get("description", "")),
            metric_name=str(data["metric_name"]),
            direction=_DIRECTIONS[direction_raw],
            bundle_path=bundle,
            dev_fraction=float(data["dev_fraction"]),
            time_limit_dev=float(data["time_limit_dev"]),
            time_limit_full=float(data["time_limit_full"]),
            schema=schema,
        )
    except KeyError as exc:
        raise BundleError(f"task.toml is missing required key {exc}") from exc
    except (TypeError, ValueError, DomainError) as exc:
        raise BundleError(f"task.toml has an invalid value: {exc}") from exc
    return task


def data_dir(task: Task, *, dev: bool) -> Path:
    return task.bundle_path / "data" / ("dev" if dev else "full")


def grade_script(task: Task) -> Path:
    return task.bundle_path / "grade"


def baseline_script(bundle_dir: str | Path) -> Path:
    return Path(bundle_dir) / "baseline.py"


def lint_bundle(bundle_dir: str | Path, *, execute: bool = True) -> list[str]:
    """Return a list of problems; an empty list means the bundle passes.

    With execute=True the linter also runs the bundled baseline through the
    executor on the dev subset and grades it twice with the same seed to
    check the grading contract and its determinism.
    """
    problems: list[str] = []
    bundle = Path(bundle_dir)
    try:
        task = load_task(bundle)
    except BundleError as exc:
        return [str(exc)]

    for sub in ("data/dev", "data/full"):
        path = bundle / sub
        if not path.is_dir():
            problems.append(f"missing directory {sub}/")
        elif not any(path.iterdir()):
            problems.append(f"directory {sub}/ is empty")
    if not grade_script(task).is_file():
        problems.append("missing grade script")
    if task.schema is None:
        problems.append("task.toml lacks a [schema] table")
    baseline = baseline_script(bundle)
    if not baseline.is_file():
        problems.append("missing baseline.py")

    if problems or not execute:
        return problems

    from .core import ExitStatus, Solution
    from .executor import DataMode, ExecMode, Executor

    executor = Executor()
    solution = Solution(id="lint-baseline", code=baseline.read_text(encoding="utf-8"))
    try:
        first, trace = executor.execute(
            solution, task, ExecMode(DataMode.DevSubset, seed=0)
        )
        if trace.exit_status is not ExitStatus.Ok:
            problems.append(
                f"baseline run failed ({trace.exit_status.value}): {trace.stderr_excerpt[-200:]}"
            )
        elif first is None:
            problems.append("baseline run produced no score")
        else:
            second, _ = executor.execute(
                solution, task, ExecMode(DataMode.DevSubset, seed=0)
            )
            if second != first:
                problems.append(
                    f"grading is not deterministic: {first!r} vs {second!r}"
                )
    except BundleError as exc:
        problems.append(str(exc))
    except Exception as exc:  # contract violations surface as lint findings
        problems.append(f"baseline execution error: {exc}")
    return problems
