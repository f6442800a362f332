"""Oracle request/response types, the retry wrapper, and the front-end
object the engine talks to.

Backends are swappable: live chat-completion endpoint, scripted replay of
recorded fixtures, or the synthetic fidelity model. The Oracle front-end
assigns nonces, applies the retry policy, and keeps a transcript of every
request for inspection by tests and the event log.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Protocol

import numpy as np

from ..errors import BackendUnavailable, DomainError, OracleTransientError
from .embedding import hash_embed


class Role(Enum):
    InitHypothesis = "InitHypothesis"
    ExtractChallenges = "ExtractChallenges"
    GenerateHypothesis = "GenerateHypothesis"
    ScoreHypothesis = "ScoreHypothesis"
    SelectHypothesis = "SelectHypothesis"
    Sketch = "Sketch"
    Implement = "Implement"
    DebugFix = "DebugFix"
    AlignmentCheck = "AlignmentCheck"
    ComprehensiveAnalysis = "ComprehensiveAnalysis"
    Judge = "Judge"
    BudgetDecision = "BudgetDecision"
    Embed = "Embed"


@dataclass(frozen=True)
class OracleRequest:
    role: Role
    context: Mapping[str, str]
    nonce: int


@dataclass(frozen=True)
class OracleResponse:
    text: str
    structured: Optional[object] = None
    embedding: Optional[np.ndarray] = None


@dataclass(frozen=True)
class RetryPolicy:
    max_retry: int = 12000
    wait_seconds: float = 5.0

    def __post_init__(self):
        if self.max_retry < 0:
            raise DomainError("max_retry must be >= 0")
        if self.wait_seconds < 0:
            raise DomainError("wait_seconds must be >= 0")


@dataclass(frozen=True)
class SyntheticOracleParams:
    fidelity: float
    noise_scale: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.fidelity <= 1.0):
            raise DomainError("fidelity must be in [0, 1]")
        if self.noise_scale < 0:
            raise DomainError("noise_scale must be non-negative")


class Backend(Protocol):
    name: str
    deterministic: bool

    def complete(self, request: OracleRequest) -> OracleResponse: ...


def with_retry(backend: Backend, request: OracleRequest,
               policy: RetryPolicy, *, sleep=time.sleep) -> OracleResponse:
    """Retry transient failures with a fixed wait. Deterministic backends
    never retry: a failure there is a replay bug, not weather."""
    attempts_allowed = 1 if backend.deterministic else policy.max_retry + 1
    attempts = 0
    while True:
        attempts += 1
        try:
            return backend.complete(request)
        except OracleTransientError as exc:
            if attempts >= attempts_allowed:
                raise BackendUnavailable(
                    f"backend {backend.name!r} failed after {attempts} attempts: {exc}",
                    attempts=attempts,
                ) from exc
            if policy.wait_seconds > 0:
                sleep(policy.wait_seconds)


@dataclass
class TranscriptEntry:
    nonce: int
    role: Role
    context: dict[str, str]
    response_text: str


class Oracle:
    """Front-end over a backend: nonce assignment, retries, transcripts,
    and the deterministic embedding map."""

    def __init__(self, backend: Backend, policy: RetryPolicy | None = None,
                 *, embed_dim: int = 64, embed_seed: int = 0, sleep=time.sleep):
        self.backend = backend
        self.policy = policy or RetryPolicy()
        self.embed_dim = embed_dim
        self.embed_seed = embed_seed
        self._sleep = sleep
        self._nonce = 0
        self._lock = threading.Lock()
        self.transcript: list[TranscriptEntry] = []

    def complete(self, role: Role, **context: str) -> OracleResponse:
        with self._lock:
            self._nonce += 1
            nonce = self._nonce
        request = OracleRequest(role=role, context=dict(context), nonce=nonce)
        response = with_retry(self.backend, request, self.policy, sleep=self._sleep)
        with self._lock:
            self.transcript.append(
                TranscriptEntry(nonce, role, dict(context), response.text)
            )
        return response

    def embed(self, text: str) -> np.ndarray:
        return hash_embed(text, dim=self.embed_dim, seed=self.embed_seed)

    def roles_called(self) -> list[Role]:
        with self._lock:
            return [entry.role for entry in self.transcript]
