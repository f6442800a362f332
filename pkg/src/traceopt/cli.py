"""Command-line surface.

Exit codes: 0 success, 2 config error, 3 task-bundle error, 4 oracle
exhaustion, 5 internal invariant breach.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bundles import lint_bundle, load_task
from .config import RunConfig, load_config
from .errors import BackendUnavailable, BundleError, ConfigError, CorruptLog, EngineError, FixtureMiss
from .events import read_log
from .experiments import run_crossover, trend_p_value
from .oracle import (
    LiveBackend,
    Oracle,
    RetryPolicy,
    ScriptedBackend,
    SyntheticBackend,
    SyntheticOracleParams,
)
from .replay import replay as replay_log
from .replay import report_from_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUNDLE = 3
EXIT_ORACLE = 4
EXIT_INTERNAL = 5


def _build_oracle(spec: str, config: RunConfig) -> Oracle:
    policy = RetryPolicy(
        max_retry=config.max_retry, wait_seconds=config.retry_wait_seconds
    )
    if spec == "live":
        backend = LiveBackend(temperature=config.temperature)
    elif spec.startswith("scripted:"):
        backend = ScriptedBackend.from_file(spec.split(":", 1)[1])
    elif spec.startswith("synthetic:"):
        fidelity = float(spec.split(":", 1)[1])
        backend = SyntheticBackend(SyntheticOracleParams(
            fidelity=fidelity, rng_seed=config.rng_seed,
        ))
    else:
        raise ConfigError(
            f"unknown oracle spec {spec!r}; use live, scripted:<file>, or synthetic:<p>"
        )
    return Oracle(backend, policy, embed_dim=config.embed_dim)


def _load_run_config(args) -> RunConfig:
    overrides = {}
    if args.deterministic:
        overrides["deterministic"] = True
    if getattr(args, "budget", None) is not None:
        overrides["budget_total"] = args.budget
    if getattr(args, "traces", None) is not None:
        overrides["max_trace_num"] = args.traces
    if getattr(args, "c_puct", None) is not None:
        overrides["c_puct"] = args.c_puct
    if getattr(args, "expand_k", None) is not None:
        overrides["expand_k"] = args.expand_k
    if getattr(args, "max_depth", None) is not None:
        overrides["max_depth"] = args.max_depth
    if getattr(args, "reward", None) is not None:
        overrides["reward_mode"] = args.reward
    if args.config:
        return load_config(args.config, **overrides)
    from .config import config_from_mapping

    return config_from_mapping(overrides)


def _cmd_run(args) -> int:
    config = _load_run_config(args)
    task = load_task(args.task_dir)
    oracle = _build_oracle(args.oracle, config)
    from .multitrace import Engine

    engine = Engine(task, config, oracle, log_path=args.log)
    solution, report = engine.run()
    print(report.render())
    if args.out:
        Path(args.out).write_text(solution.code, encoding="utf-8")
        print(f"best solution written to {args.out}")
    return EXIT_OK


def _cmd_mcts(args) -> int:
    config = _load_run_config(args)
    task = load_task(args.task_dir)
    oracle = _build_oracle(args.oracle, config)
    from .mcts import MctsEngine

    engine = MctsEngine(task, config, oracle, log_path=args.log)
    solution, report = engine.run()
    print(report.render())
    if args.out:
        Path(args.out).write_text(solution.code, encoding="utf-8")
        print(f"best solution written to {args.out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    fidelities = [float(f) for f in args.fidelities.split(",") if f]
    report = run_crossover(
        fidelities, args.seeds, eval_budget=args.eval_budget,
        base_seed=args.base_seed,
    )
    print(report.as_table())
    p_value = trend_p_value(report)
    print(f"\ntrend p-value (gap increasing in fidelity): {p_value:.4f}")
    print(f"elapsed: {report.elapsed_seconds:.1f}s")
    if args.plot_data:
        report.write_plot_data(args.plot_data)
        print(f"plot data written to {args.plot_data}")
    return EXIT_OK


def _cmd_report(args) -> int:
    report = report_from_log(args.log)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(report.render())
    return EXIT_OK


def _cmd_replay(args) -> int:
    state = replay_log(args.log)
    print(f"events:      {len(state.events)}")
    print(f"traces:      {len(state.traces)}")
    print(f"memory:      {len(state.memory_records)} entries")
    if state.tree_nodes:
        print(f"tree:        {len(state.tree_nodes)} nodes, {len(state.tree_edges)} edges")
    if state.report is not None:
        print("\nfinal report:")
        print(state.report.render())
    return EXIT_OK


def _cmd_lint(args) -> int:
    problems = lint_bundle(args.task_dir, execute=not args.no_execute)
    if problems:
        for problem in problems:
            print(f"problem: {problem}")
        return EXIT_BUNDLE
    print("bundle ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traceopt",
        description="Multi-trace optimization engine for executable candidate solutions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_engine_args(p, tree: bool = False):
        p.add_argument("task_dir", help="task bundle directory")
        p.add_argument("--config", help="TOML run config file")
        p.add_argument("--oracle", default="synthetic:1.0",
                       help="live | scripted:<fixture> | synthetic:<p>")
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--log", default="run.log.jsonl", help="event log path")
        p.add_argument("--budget", type=float, help="budget total override")
        p.add_argument("--out", help="write the winning solution here")
        if tree:
            p.add_argument("--c-puct", dest="c_puct", type=float)
            p.add_argument("--expand-k", dest="expand_k", type=int)
            p.add_argument("--max-depth", dest="max_depth", type=int)
            p.add_argument("--reward", choices=["binary", "score"])
        else:
            p.add_argument("--traces", type=int, help="number of parallel traces")

    run_p = sub.add_parser("run", help="gradient-style optimization run")
    add_engine_args(run_p)
    run_p.set_defaults(func=_cmd_run)

    mcts_p = sub.add_parser("mcts", help="tree-search variant run")
    add_engine_args(mcts_p, tree=True)
    mcts_p.set_defaults(func=_cmd_mcts)

    cmp_p = sub.add_parser("compare", help="fidelity crossover lab")
    cmp_p.add_argument("--fidelities", default="0.2,0.5,0.9")
    cmp_p.add_argument("--seeds", type=int, default=20)
    cmp_p.add_argument("--eval-budget", dest="eval_budget", type=int, default=200)
    cmp_p.add_argument("--base-seed", dest="base_seed", type=int, default=1234)
    cmp_p.add_argument("--plot-data", dest="plot_data")
    cmp_p.set_defaults(func=_cmd_compare)

    rep_p = sub.add_parser("report", help="summarize an event log")
    rep_p.add_argument("log")
    rep_p.add_argument("--json", action="store_true")
    rep_p.set_defaults(func=_cmd_report)

    play_p = sub.add_parser("replay", help="rebuild state from an event log")
    play_p.add_argument("log")
    play_p.set_defaults(func=_cmd_replay)

    lint_p = sub.add_parser("lint", help="check a task bundle against the contract")
    lint_p.add_argument("task_dir")
    lint_p.add_argument("--no-execute", action="store_true",
                        help="skip running the bundled baseline")
    lint_p.set_defaults(func=_cmd_lint)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BundleError as exc:
        print(f"task bundle error: {exc}", file=sys.stderr)
        return EXIT_BUNDLE
    except (BackendUnavailable, FixtureMiss) as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except CorruptLog as exc:
        print(f"corrupt log: {exc} (first bad seq {exc.first_bad_seq})", file=sys.stderr)
        return EXIT_INTERNAL
    except EngineError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
