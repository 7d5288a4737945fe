from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

from ..media import Frame


class BackendRole(str, Enum):
    PLANNER = "planner"
    REFLECTOR = "reflector"
    SUBTITLE_LLM = "subtitle_llm"
    VLM = "vlm"
    EMBEDDER = "embedder"


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    frame: Frame


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    parts: tuple[Part, ...]

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown message role {self.role!r}")
        object.__setattr__(self, "parts", tuple(self.parts))

    @classmethod
    def text(cls, role: str, text: str) -> "ChatMessage":
        return cls(role, (TextPart(text),))

    @property
    def has_images(self) -> bool:
        return any(isinstance(p, ImagePart) for p in self.parts)

    def plain_text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


def system(text: str) -> ChatMessage:
    return ChatMessage.text("system", text)


def user(text: str) -> ChatMessage:
    return ChatMessage.text("user", text)


def assistant(text: str) -> ChatMessage:
    return ChatMessage.text("assistant", text)
