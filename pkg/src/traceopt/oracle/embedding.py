"""Deterministic text embeddings.

Seeded hash-to-sphere feature map: every token is hashed (keyed blake2b) to
a coordinate and a sign, counts are accumulated and the vector is
L2-normalized. Cosine similarities are therefore reproducible across
platforms and runs without any model dependency.
"""
from __future__ import annotations

import hashlib
import re

import numpy as np

from ..errors import DomainError

_TOKEN_RE = re.compile(r"\w+")


def _bucket(token: str, seed: int, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little")
    ).digest()
    value = int.from_bytes(digest, "little")
    index = value % dim
    sign = 1.0 if (value >> 63) & 1 else -1.0
    return index, sign


def hash_embed(text: str, dim: int = 64, seed: int = 0) -> np.ndarray:
    """Map text to a unit-L2-norm vector of the given dimension."""
    if not text or not text.strip():
        raise DomainError("cannot embed empty text")
    tokens = _TOKEN_RE.findall(text.lower()) or [text]
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        index, sign = _bucket(token, seed, dim)
        vec[index] += sign
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        # pathological sign cancellation: fall back to hashing the raw text
        index, sign = _bucket(text, seed ^ 0x5F5F, dim)
        vec[index] += sign
        norm = float(np.linalg.norm(vec))
    return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        raise DomainError("cosine of zero vector")
    return float(np.dot(a, b) / denom)
