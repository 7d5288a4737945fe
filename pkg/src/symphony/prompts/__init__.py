"""Prompt templates shipped as text assets, filled by ``{placeholder}`` substitution.

Only the declared placeholders of a template are replaced; every other brace
(the JSON schemas inside the prompts) is left alone.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

PROMPT_VERSION = "1"

PLACEHOLDERS: dict[str, frozenset[str]] = {
    "planner": frozenset({"question", "duration", "history_str"}),
    "reflector": frozenset({"history", "question", "proposed_answer"}),
    "subtitle": frozenset({"question", "subtitles"}),
    "subtitle_merge": frozenset({"question", "first", "second"}),
    "perception": frozenset({"instruct", "duration"}),
    "grounding": frozenset({"question", "video_length", "original_question"}),
    "enhance_query": frozenset({"question"}),
    "scoring": frozenset({"USER_QUESTION", "SCORING_INSTRUCTION", "clip_range"}),
    "finalize": frozenset({"question", "duration", "history_str", "answer_format"}),
    "frame_inspector": frozenset({"time_range", "instruct", "cue_line"}),
    "global_summary": frozenset({"n_frames", "duration", "instruct"}),
    "multi_segment": frozenset({"n_segments", "segment_list", "instruct"}),
}

_FIELD_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@lru_cache(maxsize=None)
def template(name: str) -> str:
    if name not in PLACEHOLDERS:
        raise KeyError(f"unknown prompt {name!r}")
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(name: str, **values) -> str:
    expected = PLACEHOLDERS[name]
    given = set(values)
    if given != expected:
        missing, extra = sorted(expected - given), sorted(given - expected)
        raise ValueError(f"prompt {name!r}: missing {missing}, unexpected {extra}")
    text = template(name)

    def sub(m: re.Match) -> str:
        key = m.group(1)
        return str(values[key]) if key in expected else m.group(0)

    return _FIELD_RE.sub(sub, text)
