from .base import (
    Backend,
    Oracle,
    OracleRequest,
    OracleResponse,
    RetryPolicy,
    Role,
    SyntheticOracleParams,
    TranscriptEntry,
    with_retry,
)
from .embedding import cosine, hash_embed
from .live import LiveBackend
from .scripted import ScriptedBackend, write_fixture_file
from .synthetic import SyntheticBackend, directed_proposal

__all__ = [
    "Backend",
    "Oracle",
    "OracleRequest",
    "OracleResponse",
    "RetryPolicy",
    "Role",
    "SyntheticOracleParams",
    "TranscriptEntry",
    "with_retry",
    "cosine",
    "hash_embed",
    "LiveBackend",
    "ScriptedBackend",
    "write_fixture_file",
    "SyntheticBackend",
    "directed_proposal",
]
