"""Request bodies in the OpenAI-compatible chat-completions format.

Bodies are built with a fixed key order and serialized compactly, so the same
messages always produce the same bytes.
"""

from __future__ import annotations

import base64
import json
from typing import Any

from ..media import Frame, load_image_bytes
from .messages import ChatMessage, ImagePart, TextPart


def frame_data_url(frame: Frame) -> str:
    data, mime = load_image_bytes(frame)
    return f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"


def message_payload(msg: ChatMessage) -> dict[str, Any]:
    if len(msg.parts) == 1 and isinstance(msg.parts[0], TextPart):
        return {"role": msg.role, "content": msg.parts[0].text}
    content = []
    for part in msg.parts:
        if isinstance(part, TextPart):
            content.append({"type": "text", "text": part.text})
        elif isinstance(part, ImagePart):
            content.append({"type": "image_url", "image_url": {"url": frame_data_url(part.frame)}})
    return {"role": msg.role, "content": content}


def chat_body(model: str, messages: list[ChatMessage], params: dict[str, Any] | None = None) -> dict:
    body: dict[str, Any] = {"model": model, "messages": [message_payload(m) for m in messages]}
    for key in sorted(params or {}):
        body[key] = params[key]
    body["stream"] = False
    return body


def embedding_body(model: str, item: str | Frame) -> dict:
    if isinstance(item, str):
        return {"model": model, "input": [item]}
    return {"model": model,
            "input": [{"type": "image_url", "image_url": {"url": frame_data_url(item)}}]}


def encode(body: dict) -> bytes:
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def body_text(body: dict) -> str:
    """All text content of a chat body, for logging and scripted matching."""
    chunks = []
    for m in body.get("messages", []):
        content = m.get("content")
        if isinstance(content, str):
            chunks.append(content)
        else:
            chunks.extend(c["text"] for c in content if c.get("type") == "text")
    return "\n".join(chunks)
