from __future__ import annotations

import logging
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import yaml

from ..errors import ConfigError, FrameLimitExceeded, GatewayError, TransportError
from ..media import Frame
from ..types import Budgets, format_timecode
from .backends import Backend, HttpBackend, RoleConfig
from .messages import BackendRole, ChatMessage, ImagePart, TextPart
from .wire import chat_body, embedding_body

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = {
    BackendRole.PLANNER: 0.6,
    BackendRole.REFLECTOR: 0.0,
    BackendRole.SUBTITLE_LLM: 0.0,
    BackendRole.VLM: 0.0,
}


@dataclass(frozen=True)
class ModelExchange:
    backend: BackendRole
    purpose: Optional[str]
    request_messages: tuple
    response_text: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: int
    attempt: int
    error: Optional[str] = None


@dataclass
class GatewayConfig:
    roles: dict[BackendRole, RoleConfig] = field(default_factory=dict)
    retry_attempts: int = 3
    backoff_s: tuple[float, ...] = (1.0, 4.0)
    budgets: Budgets = field(default_factory=Budgets)

    def max_concurrency(self, role: BackendRole) -> int:
        if role is BackendRole.VLM and role not in self.roles:
            return self.budgets.scoring_concurrency
        cfg = self.roles.get(role)
        return cfg.max_concurrency if cfg else 8

    def timeout_s(self, role: BackendRole) -> Optional[float]:
        cfg = self.roles.get(role)
        return cfg.timeout_s if cfg else None

    def model_name(self, role: BackendRole) -> str:
        cfg = self.roles.get(role)
        return cfg.model_name if cfg else f"scripted-{role.value}"


def load_config(path: str | Path) -> GatewayConfig:
    """Read a YAML (or JSON) config::

        roles:
          planner: {endpoint_url: ..., model_name: ..., api_key_env: ..., max_concurrency: 4, timeout_s: 120}
          vlm: {...}
        budgets: {reflection_rounds: 3}
        retry_attempts: 3
    """
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    roles = {}
    for name, cfg in (doc.get("roles") or {}).items():
        try:
            role = BackendRole(name)
            roles[role] = RoleConfig(**cfg)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad config for role {name!r}: {e}") from e
    try:
        budgets = Budgets.from_mapping(doc.get("budgets"))
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    return GatewayConfig(
        roles=roles,
        retry_attempts=int(doc.get("retry_attempts", 3)),
        backoff_s=tuple(doc.get("backoff_s", (1.0, 4.0))),
        budgets=budgets,
    )


class Gateway:
    """Single entry point for every model call.

    Adds per-role concurrency limits, retry with backoff on timeouts, 429 and
    5xx, and a record of every exchange (failed attempts included) for token
    accounting. Safe to share between threads.
    """

    def __init__(self, backend: Backend, config: GatewayConfig | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 _limiters: dict | None = None):
        self.backend = backend
        self.config = config or GatewayConfig()
        self.sleep = sleep
        self._limiters = _limiters if _limiters is not None else {
            role: threading.BoundedSemaphore(self.config.max_concurrency(role)) for role in BackendRole
        }
        self._exchanges: list[ModelExchange] = []
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, config: GatewayConfig) -> "Gateway":
        return cls(HttpBackend(config.roles), config)

    @property
    def budgets(self) -> Budgets:
        return self.config.budgets

    def child(self, backend: Backend | None = None) -> "Gateway":
        """Gateway sharing limiters and config but keeping its own exchange log."""
        return Gateway(backend or self.backend, self.config, self.sleep, self._limiters)

    def fork(self, key: str) -> "Gateway":
        fork = getattr(self.backend, "fork", None)
        return self.child(fork(key) if fork else None)

    @property
    def exchanges(self) -> list[ModelExchange]:
        with self._lock:
            return list(self._exchanges)

    def token_totals(self) -> dict[str, dict[str, int]]:
        totals: dict[str, dict[str, int]] = defaultdict(lambda: {"calls": 0, "prompt_tokens": 0,
                                                                "completion_tokens": 0})
        for ex in self.exchanges:
            t = totals[ex.backend.value]
            t["calls"] += 1
            t["prompt_tokens"] += ex.prompt_tokens
            t["completion_tokens"] += ex.completion_tokens
        return {k: totals[k] for k in sorted(totals)}

    def _record(self, ex: ModelExchange) -> None:
        with self._lock:
            self._exchanges.append(ex)

    def _with_retries(self, role: BackendRole, purpose: str | None, messages: tuple,
                      call: Callable[[], Any], describe: Callable[[Any], tuple[str, int, int]]):
        attempts = max(1, self.config.retry_attempts)
        for attempt in range(1, attempts + 1):
            t0 = time.monotonic()
            try:
                with self._limiters[role]:
                    result = call()
            except TransportError as e:
                latency = int((time.monotonic() - t0) * 1000)
                self._record(ModelExchange(role, purpose, messages, "", 0, 0, latency, attempt,
                                           error=f"{type(e).__name__}: {e}"))
                if not e.retryable or attempt == attempts:
                    raise
                delay = self.config.backoff_s[min(attempt - 1, len(self.config.backoff_s) - 1)]
                logger.warning("%s call failed (%s); retry %d in %.1fs", role.value, e, attempt, delay)
                self.sleep(delay)
                continue
            latency = int((time.monotonic() - t0) * 1000)
            text, pt, ct = describe(result)
            self._record(ModelExchange(role, purpose, messages, text, pt, ct, latency, attempt))
            return result
        raise AssertionError("unreachable")

    def chat(self, role: BackendRole, messages: Sequence[ChatMessage],
             params: dict | None = None, purpose: str | None = None) -> str:
        role = BackendRole(role)
        messages = tuple(messages)
        if not messages:
            raise ValueError("chat needs at least one message")
        if role is BackendRole.EMBEDDER:
            raise ValueError("the embedder role does not chat")
        if role is not BackendRole.VLM and any(m.has_images for m in messages):
            raise ValueError(f"image parts are only allowed for the vlm role, not {role.value}")
        decode = {}
        if role in DEFAULT_TEMPERATURE:
            decode["temperature"] = DEFAULT_TEMPERATURE[role]
        decode.update(params or {})
        body = chat_body(self.config.model_name(role), list(messages), decode)
        completion = self._with_retries(
            role, purpose, messages,
            lambda: self.backend.complete(role, body, purpose=purpose,
                                          timeout_s=self.config.timeout_s(role)),
            lambda c: (c.text, c.prompt_tokens, c.completion_tokens),
        )
        return completion.text

    def vision_messages(self, text_prompt: str, frames: Sequence[Frame],
                        labels: Sequence[str] | None = None) -> list[ChatMessage]:
        if not frames:
            raise ValueError("vision_chat needs at least one frame")
        if len(frames) > self.budgets.frame_cap:
            raise FrameLimitExceeded(f"{len(frames)} frames exceeds the cap of {self.budgets.frame_cap}")
        if labels is None:
            order = sorted(range(len(frames)), key=lambda i: frames[i].ms)
            pairs = [(f"Frame at {format_timecode(frames[i].ms)}", frames[i]) for i in order]
        else:
            if len(labels) != len(frames):
                raise ValueError("labels and frames differ in length")
            pairs = list(zip(labels, frames))
        parts: list = [TextPart(text_prompt)]
        for label, frame in pairs:
            parts.append(TextPart(label))
            parts.append(ImagePart(frame))
        return [ChatMessage("user", tuple(parts))]

    def vision_chat(self, text_prompt: str, frames: Sequence[Frame], purpose: str | None = None,
                    labels: Sequence[str] | None = None, params: dict | None = None) -> str:
        """Send frames to the VLM, each preceded by a text part naming its timestamp.

        Frames go in timestamp order unless explicit ``labels`` fix the order.
        """
        return self.chat(BackendRole.VLM, self.vision_messages(text_prompt, frames, labels),
                         params=params, purpose=purpose)

    def _embed(self, item: str | Frame, meta: dict) -> np.ndarray:
        if isinstance(item, str) and not item.strip():
            raise ValueError("cannot embed empty text")
        role = BackendRole.EMBEDDER
        body = embedding_body(self.config.model_name(role), item)
        vec = self._with_retries(
            role, "embed", (),
            lambda: self.backend.embed(role, body, meta=meta, timeout_s=self.config.timeout_s(role)),
            lambda v: ("", 0, 0),
        )
        return np.asarray(vec, dtype=float)

    def embed_text(self, s: str) -> np.ndarray:
        return self._embed(s, {"text": s})

    def embed_image(self, frame: Frame) -> np.ndarray:
        return self._embed(frame, {"file": Path(frame.path).name, "ms": frame.ms})


def normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise GatewayError("zero-length embedding vector")
    return v / n


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(normalize(np.asarray(a, float)), normalize(np.asarray(b, float))))
