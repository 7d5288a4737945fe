"""Pull the first JSON object out of free-form model output."""

from __future__ import annotations

import json
import re
from typing import Any, Iterator

from ..errors import NoJsonFound

_THINK_RE = re.compile(r"<think>.*?</think>", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")


def _balanced_spans(text: str) -> Iterator[tuple[int, int]]:
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        esc = False
        end = -1
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    end = i + 1
                    break
        if end != -1:
            yield start, end
        start = text.find("{", start + 1)


def _strip_comments(s: str) -> str:
    out = []
    i, in_str, esc = 0, False, False
    while i < len(s):
        ch = s[i]
        if in_str:
            out.append(ch)
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
            out.append(ch)
        elif s.startswith("//", i):
            nl = s.find("\n", i)
            i = len(s) if nl == -1 else nl
            continue
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def _loads(candidate: str) -> Any:
    try:
        return json.loads(candidate)
    except json.JSONDecodeError:
        # models copying a template often keep its // comments and trailing commas
        relaxed = _TRAILING_COMMA_RE.sub(r"\1", _strip_comments(candidate))
        return json.loads(relaxed)


def extract_json(text: str) -> dict:
    """Return the first balanced ``{...}`` in ``text`` that parses as an object.

    Surrounding prose, code fences and ``<think>`` blocks are ignored.
    """
    cleaned = _THINK_RE.sub("", text or "")
    for a, b in _balanced_spans(cleaned):
        try:
            value = _loads(cleaned[a:b])
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return value
    raise NoJsonFound(f"no JSON object in model output: {text[:120]!r}")
