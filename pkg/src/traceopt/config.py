"""Run configuration.

Config files are TOML key/value maps whose names mirror the engine's
published knob names (max_trace_num, merge_hours, debugging_semaphore,
fix_seed_and_split, enable_multi_seed_selection, ...). Unknown keys are a
hard ConfigError so typos never silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


@dataclass
class RunConfig:
    # LLM configuration
    temperature: float = 1.0
    max_retry: int = 12000
    retry_wait_seconds: float = 5.0

    # Success memory
    enable_global_memory: bool = True
    memory_save_type: str = "Full"

    # Structured reasoning
    llm_select_hypothesis: bool = True
    simple_hypothesis: bool = True
    unique_hypothesis: bool = True
    enable_cross_trace_sharing: bool = True
    topk_sample: int = 3
    challenges_per_source: int = 3
    max_reprompts: int = 1

    # Multi-trace optimization
    max_trace_num: int = 4
    merge_hours: float = 3.0
    debugging_semaphore: int = 3
    running_semaphore: int = 3
    feedback_semaphore: int = 1
    cross_trace_diversity: bool = True

    # Robust implementation
    coder_timeout_multiplier: int = 4
    runner_timeout_multiplier: int = 4
    timeout_increase_stage: int = 1
    timeout_stage_patience: int = 2
    llm_decide_longer_runtime: bool = True
    fix_seed_and_split: bool = True
    enable_multi_seed_selection: bool = True
    max_fix_iters: int = 3
    eval_seed: int = 0

    # Budget
    budget_mode: str = "iterations"  # "iterations" | "wall_seconds"
    budget_total: float = 8.0
    extension_fraction: float = 0.25
    extension_cap: int = 1
    extension_threshold_fraction: float = 0.25

    # Validation
    near_tie_tolerance: float = 0.0

    # Interaction kernel
    kernel_alpha: float = 1.0
    kernel_beta: float = 1.0
    kernel_gamma: float = 0.05

    # Final selection
    topk_final: int = 2
    final_seeds: tuple[int, ...] = (1, 2, 3)

    # Tree-search variant
    expand_k: int = 3
    c_puct: float = 1.0
    max_depth: int = 10
    reward_mode: str = "score"  # "binary" | "score"
    early_stop_score: float | None = None

    # Determinism
    deterministic: bool = True
    rng_seed: int = 0
    embed_dim: int = 64
    excerpt_bytes: int = 2048

    def __post_init__(self):
        if self.max_trace_num < 1:
            raise ConfigError("max_trace_num must be >= 1")
        for name in ("debugging_semaphore", "running_semaphore", "feedback_semaphore"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.budget_mode not in ("iterations", "wall_seconds"):
            raise ConfigError(f"unknown budget_mode {self.budget_mode!r}")
        if self.budget_total < 0:
            raise ConfigError("budget_total must be non-negative")
        if self.reward_mode not in ("binary", "score"):
            raise ConfigError(f"unknown reward_mode {self.reward_mode!r}")
        if self.near_tie_tolerance < 0:
            raise ConfigError("near_tie_tolerance must be non-negative")
        if not self.final_seeds:
            raise ConfigError("final_seeds must be non-empty")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def load_config(path: str | Path, **overrides) -> RunConfig:
    """Load a TOML config file; CLI overrides win over file values."""
    raw = Path(path).read_bytes()
    try:
        data = _toml.loads(raw.decode("utf-8"))
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    data.update(overrides)
    return config_from_mapping(data)


def config_from_mapping(data: dict) -> RunConfig:
    kwargs = {}
    for key, value in data.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "final_seeds":
            value = tuple(int(v) for v in value)
        kwargs[key] = value
    return RunConfig(**kwargs)
