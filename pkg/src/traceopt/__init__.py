"""traceopt: multi-trace optimization of executable candidate solutions.

Candidate scripts are iterated through propose -> execute -> validate ->
remember -> reason, with parallel traces sharing a success memory; a PUCT
tree-search variant and a synthetic fidelity-crossover lab ride on the same
infrastructure.
"""

from .core import (
    Budget,
    BudgetMode,
    DiagnosticReason,
    Direction,
    ExecutionTrace,
    ExitStatus,
    Gate,
    Hypothesis,
    HypothesisOrigin,
    IterationRecord,
    PerfPair,
    Solution,
    StructuredFeedback,
    SubmissionSchema,
    TargetComponent,
    Task,
    TraceState,
    direction_adjusted_delta,
    is_improvement,
)

__version__ = "0.1.0"

__all__ = [
    "Budget",
    "BudgetMode",
    "DiagnosticReason",
    "Direction",
    "ExecutionTrace",
    "ExitStatus",
    "Gate",
    "Hypothesis",
    "HypothesisOrigin",
    "IterationRecord",
    "PerfPair",
    "Solution",
    "StructuredFeedback",
    "SubmissionSchema",
    "TargetComponent",
    "Task",
    "TraceState",
    "direction_adjusted_delta",
    "is_improvement",
    "__version__",
]
