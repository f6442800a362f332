"""Scripted replay backend.

Fixtures are keyed by (role, per-role ordinal), not by prompt text, so
prompt wording can evolve without breaking recorded runs. A missing
fixture is a hard FixtureMiss: the backend never improvises.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Iterable

from ..errors import FixtureMiss
from .base import OracleRequest, OracleResponse, Role


class ScriptedBackend:
    name = "scripted"
    deterministic = True

    def __init__(self, fixtures: dict[tuple[Role, int], str]):
        self._fixtures = dict(fixtures)
        self._cursor: dict[Role, int] = {}
        # serialize so concurrent traces cannot scramble ordinal keying
        self._lock = threading.Lock()

    @classmethod
    def from_records(cls, records: Iterable[tuple[Role | str, int, str]]) -> "ScriptedBackend":
        fixtures = {}
        for role, ordinal, text in records:
            role = Role(role) if isinstance(role, str) else role
            fixtures[(role, int(ordinal))] = text
        return cls(fixtures)

    @classmethod
    def from_sequence(cls, items: Iterable[tuple[Role | str, str]]) -> "ScriptedBackend":
        """Build fixtures from (role, text) pairs in expected call order;
        ordinals are assigned per role automatically."""
        counters: dict[Role, int] = {}
        records = []
        for role, text in items:
            role = Role(role) if isinstance(role, str) else role
            counters[role] = counters.get(role, 0) + 1
            records.append((role, counters[role], text))
        return cls.from_records(records)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        """One JSON record per line with fields role, ordinal, response_text."""
        records = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append((obj["role"], obj["ordinal"], obj["response_text"]))
        return cls.from_records(records)

    def complete(self, request: OracleRequest) -> OracleResponse:
        with self._lock:
            ordinal = self._cursor.get(request.role, 0) + 1
            self._cursor[request.role] = ordinal
        key = (request.role, ordinal)
        if key not in self._fixtures:
            raise FixtureMiss(
                f"no fixture for role={request.role.value} ordinal={ordinal}"
            )
        return OracleResponse(text=self._fixtures[key])


def write_fixture_file(path: str | Path,
                       records: Iterable[tuple[Role | str, int, str]]) -> None:
    lines = []
    for role, ordinal, text in records:
        role_name = role.value if isinstance(role, Role) else str(role)
        lines.append(json.dumps(
            {"role": role_name, "ordinal": int(ordinal), "response_text": text},
            ensure_ascii=True,
        ))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
