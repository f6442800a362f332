from __future__ import annotations

import json
from pathlib import Path

import pytest

from conftest import BASELINE_CODE
from traceopt.cli import EXIT_BUNDLE, EXIT_CONFIG, EXIT_OK, EXIT_ORACLE, main
from traceopt.oracle import Role
from traceopt.oracle.scripted import write_fixture_file


def test_lint_accepts_good_bundle(bundle_dir, capsys):
    assert main(["lint", str(bundle_dir)]) == EXIT_OK
    assert "bundle ok" in capsys.readouterr().out


def test_lint_rejects_broken_bundle(tmp_path, capsys):
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "task.toml").write_text('id = "x"\n')
    assert main(["lint", str(broken)]) == EXIT_BUNDLE
    assert "problem" in capsys.readouterr().out


def test_lint_missing_bundle_is_bundle_error(tmp_path):
    assert main(["lint", str(tmp_path / "nope")]) == EXIT_BUNDLE


def test_compare_small_grid(capsys, tmp_path):
    plot = tmp_path / "gaps.dat"
    code = main([
        "compare", "--fidelities", "0.2,0.9", "--seeds", "3",
        "--eval-budget", "60", "--plot-data", str(plot),
    ])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "fidelity" in out and "trend p-value" in out
    assert plot.exists()


def test_run_with_scripted_oracle(bundle_dir, tmp_path, capsys):
    from test_multitrace import _single_trace_fixtures

    fixture_path = tmp_path / "fixtures.jsonl"
    counters: dict[Role, int] = {}
    records = []
    for role, text in _single_trace_fixtures():
        counters[role] = counters.get(role, 0) + 1
        records.append((role, counters[role], text))
    write_fixture_file(fixture_path, records)

    config_path = tmp_path / "run.toml"
    config_path.write_text(
        "max_trace_num = 1\n"
        "budget_total = 3\n"
        "challenges_per_source = 1\n"
        "topk_sample = 1\n"
        "max_fix_iters = 0\n"
        "llm_decide_longer_runtime = false\n"
        "topk_final = 1\n"
        "final_seeds = [1]\n"
        "deterministic = true\n"
    )
    log_path = tmp_path / "run.jsonl"
    out_path = tmp_path / "best.py"
    code = main([
        "run", str(bundle_dir), "--config", str(config_path),
        "--oracle", f"scripted:{fixture_path}", "--log", str(log_path),
        "--out", str(out_path),
    ])
    assert code == EXIT_OK
    assert "improvement rate:  66.7%" in capsys.readouterr().out
    assert out_path.exists()

    # report and replay commands consume the produced log
    assert main(["report", str(log_path), "--json"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["total_iterations"] == 3
    assert main(["replay", str(log_path)]) == EXIT_OK


def test_run_scripted_fixture_exhaustion_is_oracle_error(bundle_dir, tmp_path):
    fixture_path = tmp_path / "fixtures.jsonl"
    write_fixture_file(fixture_path, [(Role.InitHypothesis, 1, "idea / Model")])
    code = main([
        "run", str(bundle_dir), "--oracle", f"scripted:{fixture_path}",
        "--log", str(tmp_path / "run.jsonl"),
    ])
    assert code == EXIT_ORACLE


def test_unknown_config_key_is_config_error(bundle_dir, tmp_path):
    config_path = tmp_path / "bad.toml"
    config_path.write_text("no_such_knob = 1\n")
    code = main([
        "run", str(bundle_dir), "--config", str(config_path),
        "--oracle", "synthetic:1.0", "--log", str(tmp_path / "x.jsonl"),
    ])
    assert code == EXIT_CONFIG


def test_bad_oracle_spec_is_config_error(bundle_dir, tmp_path):
    code = main([
        "run", str(bundle_dir), "--oracle", "psychic",
        "--log", str(tmp_path / "x.jsonl"),
    ])
    assert code == EXIT_CONFIG


def test_mcts_command_with_synthetic_oracle(bundle_dir, tmp_path, capsys):
    log_path = tmp_path / "tree.jsonl"
    code = main([
        "mcts", str(bundle_dir), "--oracle", "synthetic:1.0",
        "--log", str(log_path), "--budget", "4", "--expand-k", "3",
        "--deterministic",
    ])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "run kind:          tree" in out
    assert log_path.exists()
