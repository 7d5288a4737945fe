"""Uniform access to the planner, reflector, subtitle LLM, VLM and embedder."""

from .backends import Completion, HttpBackend, RoleConfig, ScriptedBackend
from .core import Gateway, GatewayConfig, ModelExchange, cosine, load_config, normalize
from .jsonx import extract_json
from .messages import BackendRole, ChatMessage, ImagePart, TextPart, assistant, system, user
from .wire import chat_body, encode

__all__ = [
    "BackendRole", "ChatMessage", "Completion", "Gateway", "GatewayConfig", "HttpBackend",
    "ImagePart", "ModelExchange", "RoleConfig", "ScriptedBackend", "TextPart", "assistant",
    "chat_body", "cosine", "encode", "extract_json", "load_config", "normalize", "system", "user",
]
