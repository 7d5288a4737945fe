"""Transports behind the gateway: an HTTP client for OpenAI-compatible
servers and a deterministic scripted stand-in for offline runs."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import re
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Protocol

import httpx
import numpy as np

from ..errors import ConfigError, HTTPStatus, RateLimited, RequestTimeout, ScriptExhausted, TransportError
from .messages import BackendRole
from .wire import body_text, encode


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class RoleConfig:
    endpoint_url: str
    model_name: str
    api_key_env: Optional[str] = None
    max_concurrency: int = 8
    timeout_s: float = 120.0


class Backend(Protocol):
    def complete(self, role: BackendRole, body: dict, *, purpose: str | None = None,
                 timeout_s: float | None = None) -> Completion: ...

    def embed(self, role: BackendRole, body: dict, *, meta: dict | None = None,
              timeout_s: float | None = None) -> list[float]: ...


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


class HttpBackend:
    """Talks to ``{endpoint_url}/chat/completions`` and ``{endpoint_url}/embeddings``."""

    def __init__(self, roles: dict[BackendRole, RoleConfig], client: httpx.Client | None = None):
        self.roles = roles
        self._client = client or httpx.Client()

    def _post(self, role: BackendRole, path: str, body: dict, timeout_s: float | None) -> dict:
        cfg = self.roles.get(role)
        if cfg is None:
            raise ConfigError(f"no endpoint configured for role {role.value}")
        headers = {"Content-Type": "application/json"}
        if cfg.api_key_env:
            key = os.environ.get(cfg.api_key_env)
            if not key:
                raise ConfigError(f"environment variable {cfg.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        url = cfg.endpoint_url.rstrip("/") + path
        try:
            resp = self._client.post(url, content=encode(body), headers=headers,
                                     timeout=timeout_s or cfg.timeout_s)
        except httpx.TimeoutException as e:
            raise RequestTimeout(f"{role.value}: {e}") from e
        except httpx.HTTPError as e:
            raise TransportError(f"{role.value}: {e}") from e
        if resp.status_code == 429:
            raise RateLimited(resp.text)
        if resp.status_code >= 400:
            raise HTTPStatus(resp.status_code, resp.text)
        return resp.json()

    def complete(self, role, body, *, purpose=None, timeout_s=None) -> Completion:
        data = self._post(role, "/chat/completions", body, timeout_s)
        content = data["choices"][0]["message"].get("content") or ""
        if isinstance(content, list):
            content = "".join(c.get("text", "") for c in content)
        usage = data.get("usage") or {}
        return Completion(content, int(usage.get("prompt_tokens", 0)),
                          int(usage.get("completion_tokens", 0)))

    def embed(self, role, body, *, meta=None, timeout_s=None) -> list[float]:
        data = self._post(role, "/embeddings", body, timeout_s)
        return list(data["data"][0]["embedding"])


def hashed_vector(key: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(seed).standard_normal(dim)


Responder = Callable[[str, int], Any]


class ScriptedBackend:
    """Replays canned responses; no network, fully deterministic.

    A script maps keys to responses. Chat lookups try ``"<role>/<purpose>"``
    first, then ``"<role>"``. A value may be

    * a string, returned on every call;
    * a list, consumed one entry per call (the call index);
    * a dict with any of ``sequence`` (list), ``rules``
      (``[{"contains": s, "response": r}]`` matched against the request text)
      and ``default``;
    * a callable ``(request_text, call_index) -> response``.

    A response of ``{"error": "timeout"}`` or ``{"error": 503}`` raises the
    matching transport error instead of answering.

    The ``embedder`` key holds ``{"dim": n, "text": {word: vector},
    "image": {file_name_or_ms: vector}}``; anything unmapped gets a vector
    hashed from its identity. ``forks`` maps a fork key to a sub-script used
    by :meth:`fork`.
    """

    def __init__(self, script: dict, delay_s: float = 0.0):
        self.script = dict(script)
        self.forks = self.script.pop("forks", {}) or {}
        self.delay_s = float(self.script.pop("delay_s", delay_s))
        self.script.pop("schema_version", None)
        self.calls: dict[str, int] = defaultdict(int)
        self.role_calls: dict[str, int] = defaultdict(int)
        self.in_flight: dict[str, int] = defaultdict(int)
        self.peak_in_flight: dict[str, int] = defaultdict(int)
        self.requests: list[tuple[str, str | None, str]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def fork(self, key: str) -> "ScriptedBackend":
        """Independent backend for one episode instance.

        Keys look like ``"q7#vote1"``. Lookup tries the whole key, then each
        ``#``-separated part, then falls back to a fresh copy of the base
        script with its own counters.
        """
        sub = None
        for candidate in [key, *key.split("#")]:
            if candidate in self.forks:
                sub = self.forks[candidate]
                break
        if sub is None:
            sub = copy.copy(self.script)
        return ScriptedBackend(sub, delay_s=self.delay_s)

    def _enter(self, role: str) -> None:
        with self._lock:
            self.in_flight[role] += 1
            self.peak_in_flight[role] = max(self.peak_in_flight[role], self.in_flight[role])

    def _exit(self, role: str) -> None:
        with self._lock:
            self.in_flight[role] -= 1

    def _resolve(self, role: str, purpose: str | None, text: str) -> Any:
        keys = ([f"{role}/{purpose}"] if purpose else []) + [role]
        for key in keys:
            if key not in self.script:
                continue
            with self._lock:
                index = self.calls[key]
                self.calls[key] += 1
            entry = self.script[key]
            if callable(entry):
                return entry(text, index)
            if isinstance(entry, str):
                return entry
            if isinstance(entry, list):
                if index < len(entry):
                    return entry[index]
                raise ScriptExhausted(f"script {key!r} has no entry for call {index}")
            if isinstance(entry, dict):
                seq = entry.get("sequence") or []
                if index < len(seq):
                    return seq[index]
                for rule in entry.get("rules", []):
                    if rule["contains"] in text:
                        return rule["response"]
                if "default" in entry:
                    return entry["default"]
                raise ScriptExhausted(f"script {key!r} has no entry for call {index}")
        raise ScriptExhausted(f"script has no entry for role {role!r} purpose {purpose!r}")

    def complete(self, role, body, *, purpose=None, timeout_s=None) -> Completion:
        role_name = BackendRole(role).value
        text = body_text(body)
        self._enter(role_name)
        try:
            with self._lock:
                self.role_calls[role_name] += 1
                self.requests.append((role_name, purpose, text))
            response = self._resolve(role_name, purpose, text)
            if self.delay_s:
                time.sleep(self.delay_s)
        finally:
            self._exit(role_name)
        if isinstance(response, dict) and "error" in response:
            err = response["error"]
            if err == "timeout":
                raise RequestTimeout(f"scripted timeout for {role_name}")
            if int(err) == 429:
                raise RateLimited("scripted rate limit")
            raise HTTPStatus(int(err), "scripted error")
        if not isinstance(response, str):
            response = json.dumps(response)
        return Completion(response, estimate_tokens(text), estimate_tokens(response))

    def embed(self, role, body, *, meta=None, timeout_s=None) -> list[float]:
        spec = self.script.get("embedder", {}) or {}
        dim = int(spec.get("dim", 16))
        meta = meta or {}
        with self._lock:
            self.role_calls["embedder"] += 1
        if "text" in meta:
            text = meta["text"]
            table = spec.get("text", {})
            if text in table:
                return list(map(float, table[text]))
            words = set(re.findall(r"[a-z0-9]+", text.lower()))
            hits = [np.asarray(v, float) for k, v in table.items() if k.lower() in words]
            if hits:
                return list(np.sum(hits, axis=0))
            return list(hashed_vector("text:" + text, dim))
        table = spec.get("image", {})
        for key in (meta.get("file"), str(meta.get("ms"))):
            if key is not None and key in table:
                return list(map(float, table[key]))
        return list(hashed_vector(f"image:{meta.get('file')}", dim))
