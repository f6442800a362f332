"""Live chat-completion backend.

Endpoint and credential come from the ENGINE_ORACLE_URL / ENGINE_ORACLE_KEY
environment variables; requests are role-tagged and rendered from the
template files. Only transient transport failures are retryable.
"""
from __future__ import annotations

import os

import requests

from ..errors import ConfigError, EngineError, OracleTransientError
from .base import OracleRequest, OracleResponse
from .templates import render

_TRANSIENT_STATUS = frozenset({408, 409, 429, 500, 502, 503, 504})


class LiveBackend:
    name = "live"
    deterministic = False

    def __init__(self, url: str | None = None, key: str | None = None,
                 *, model: str | None = None, temperature: float = 1.0,
                 timeout: float = 120.0, session: requests.Session | None = None):
        self.url = url or os.environ.get("ENGINE_ORACLE_URL")
        self.key = key or os.environ.get("ENGINE_ORACLE_KEY")
        if not self.url:
            raise ConfigError("live backend needs ENGINE_ORACLE_URL")
        self.model = model
        self.temperature = temperature
        self.timeout = timeout
        self._session = session or requests.Session()
        self.tokens_used = 0

    def complete(self, request: OracleRequest) -> OracleResponse:
        prompt = render(request.role, dict(request.context))
        body = {
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "metadata": {"role": request.role.value, "nonce": request.nonce},
        }
        if self.model:
            body["model"] = self.model
        headers = {}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        try:
            response = self._session.post(
                self.url, json=body, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise OracleTransientError(f"transport failure: {exc}") from exc
        if response.status_code in _TRANSIENT_STATUS:
            raise OracleTransientError(f"status {response.status_code}")
        if response.status_code != 200:
            raise EngineError(
                f"oracle endpoint returned {response.status_code}: {response.text[:200]}"
            )
        payload = response.json()
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EngineError(f"malformed completion payload: {payload!r}") from exc
        usage = payload.get("usage") or {}
        self.tokens_used += int(usage.get("total_tokens", 0))
        return OracleResponse(text=text)
