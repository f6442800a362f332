"""Exception hierarchy for the engine.

Every failure mode that callers are expected to branch on gets its own
class; generic misuse raises DomainError.
"""
from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine errors."""


class DomainError(EngineError):
    """A value violated a domain precondition (non-finite score, empty text, ...)."""


class ConfigError(EngineError):
    """Run configuration is malformed or inconsistent."""


class BundleError(EngineError):
    """Task bundle is missing or violates the bundle contract."""


class BundleMissing(BundleError):
    """Bundle directory or a required bundle file does not exist."""


class SandboxSpawnFailure(EngineError):
    """Child process for a candidate solution could not be started."""


class GradeParseError(EngineError):
    """Grader did not emit exactly one well-formed score record."""


class OracleTransientError(EngineError):
    """Retryable backend failure (network hiccup, throttling)."""


class BackendUnavailable(EngineError):
    """Backend failed permanently; carries the number of attempts made."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class FixtureMiss(EngineError):
    """Scripted backend has no fixture for the requested (role, ordinal)."""


class EmptyMemory(EngineError):
    """Operation requires at least one success-memory entry."""


class EmptyCandidateSet(EngineError):
    """No hypothesis candidates are available to choose from."""


class DuplicateHypothesis(EngineError):
    """Uniqueness is enabled and re-prompting still produced a duplicate."""


class ScoreParseError(EngineError):
    """Hypothesis scoring response was not a valid dimension->score payload."""


class SelectorParseError(EngineError):
    """Cross-trace selector response was malformed or referenced a non-member."""


class DiversificationFailed(EngineError):
    """Initial hypotheses could not be made pairwise distinct."""


class DebugExhausted(EngineError):
    """Debug loop ran out of fix attempts; carries the last execution trace."""

    def __init__(self, message: str, last_trace=None):
        super().__init__(message)
        self.last_trace = last_trace


class ImplementationFailed(EngineError):
    """A hypothesis could not be turned into runnable code."""


class AllSeedsFailed(EngineError):
    """Multi-seed evaluation produced no successful run."""


class ExpansionRefused(EngineError):
    """Tree node is at the depth cap and may not be expanded."""


class LeafNode(EngineError):
    """Child selection requested on a node without children."""


class EmptyLog(EngineError):
    """Metric requires at least one logged iteration."""


class SeqGap(EngineError):
    """Appended event does not continue the sequence."""


class CorruptLog(EngineError):
    """Event log is malformed; carries the first bad sequence number."""

    def __init__(self, message: str, first_bad_seq: int):
        super().__init__(message)
        self.first_bad_seq = first_bad_seq
