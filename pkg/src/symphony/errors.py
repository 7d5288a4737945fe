"""Exception hierarchy shared across the package."""

from __future__ import annotations

from pathlib import Path


class SymphonyError(Exception):
    pass


class MalformedTimecode(SymphonyError, ValueError):
    pass


# media


class MediaError(SymphonyError):
    pass


class MissingManifest(MediaError):
    pass


class EmptyFrameSet(MediaError):
    pass


class TimestampBeyondDuration(MediaError):
    pass


class MalformedSubtitleFile(MediaError):
    pass


# model gateway


class GatewayError(SymphonyError):
    pass


class ConfigError(GatewayError):
    pass


class TransportError(GatewayError):
    """A backend call failed on the wire. Retryable subclasses set ``retryable``."""

    retryable = False


class RequestTimeout(TransportError):
    retryable = True


class HTTPStatus(TransportError):
    def __init__(self, code: int, body: str = ""):
        super().__init__(f"HTTP {code}: {body[:200]}")
        self.code = code
        self.body = body

    @property
    def retryable(self) -> bool:  # type: ignore[override]
        return self.code == 429 or self.code >= 500


class RateLimited(HTTPStatus):
    def __init__(self, body: str = ""):
        super().__init__(429, body)


class FrameLimitExceeded(GatewayError, ValueError):
    pass


class NoJsonFound(GatewayError, ValueError):
    pass


class ScriptExhausted(GatewayError):
    pass


class BackendOutage(GatewayError):
    pass


# agents


class AgentError(SymphonyError):
    pass


class ToolLoopExceeded(AgentError):
    pass


class GroundingParseFailure(AgentError):
    pass


class SubtitleParseFailure(AgentError):
    pass


class PlanningParseFailure(AgentError):
    pass


class AnswerExtractionFailure(AgentError):
    pass


class EpisodeAborted(SymphonyError):
    """Raised when a planner or reflector backend is unreachable mid-episode.

    The partial trajectory log has already been written to ``log_path``.
    """

    def __init__(self, message: str, log_path: Path | None = None, log: dict | None = None):
        super().__init__(message)
        self.log_path = log_path
        self.log = log
