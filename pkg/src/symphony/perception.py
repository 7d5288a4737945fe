"""Visual perception agent: an LLM tool loop over three frame tools.

* ``frame_inspector`` looks densely at one 10-60 s range, optionally adding
  frames picked by a visual cue;
* ``global_summary_tool`` samples the whole video uniformly;
* ``multi_segment_analysis_tool`` compares 2-6 separate ranges in one call.

The loop ends when the model replies with text starting ``[answer]``.
Invalid tool calls come back to the model as error text naming the broken
constraint, so it can correct itself on the next turn.
"""

from __future__ import annotations

import logging
import re
from enum import Enum
from typing import Any, Optional, Sequence

from . import prompts
from .errors import MalformedTimecode, NoJsonFound
from .gateway import BackendRole, Gateway, assistant, extract_json, normalize, system, user
from .media import Frame, FrameManifest, sample_uniform, thin_uniform
from .types import AgentKind, Budgets, Observation, TimeRange, format_timecode, parse_timecode

logger = logging.getLogger(__name__)

MIN_INSPECT_MS = 10_000
MAX_INSPECT_MS = 60_000
CUE_MIN_MS = 30_000
CUE_FRAMES = 10
MIN_SEGMENTS, MAX_SEGMENTS = 2, 6

ANSWER_RE = re.compile(r"\[answer\]", re.IGNORECASE)


class PerceptionTool(str, Enum):
    FRAME_INSPECTOR = "frame_inspector"
    GLOBAL_SUMMARY = "global_summary_tool"
    MULTI_SEGMENT = "multi_segment_analysis_tool"


TOOL_NAMES = {t.value: t for t in PerceptionTool}
TOOL_NAMES.update({"global_summary": PerceptionTool.GLOBAL_SUMMARY,
                   "multi_segment_analysis": PerceptionTool.MULTI_SEGMENT})


class ToolArgError(ValueError):
    """Invalid tool arguments; rendered back to the model rather than raised out of the loop."""

    @property
    def kind(self) -> str:
        return type(self).__name__

    def as_tool_text(self) -> str:
        return f"Error ({self.kind}): {self}"


class RangeTooShort(ToolArgError):
    pass


class RangeTooLong(ToolArgError):
    pass


class RangeOutOfVideo(ToolArgError):
    pass


class TooFewRanges(ToolArgError):
    pass


class TooManyRanges(ToolArgError):
    pass


class BadToolCall(ToolArgError):
    pass


def parse_range(value: Any) -> TimeRange:
    """Accept ``["HH:MM:SS", "HH:MM:SS"]`` or a string such as ``"00:01:00-00:01:40"``."""
    if isinstance(value, str):
        parts = re.findall(r"\d+:\d{2}:\d{2}", value)
    elif isinstance(value, (list, tuple)):
        parts = [str(v) for v in value]
    else:
        parts = []
    if len(parts) != 2:
        raise BadToolCall(f"time range must be two HH:MM:SS timestamps, got {value!r}")
    try:
        start, end = parse_timecode(parts[0]), parse_timecode(parts[1])
    except MalformedTimecode as e:
        raise BadToolCall(f"{e}; write 3 min 21 s as 00:03:21") from e
    if not start < end:
        raise BadToolCall(f"range start {parts[0]} must be before its end {parts[1]}")
    return TimeRange(start, end)


def check_in_video(rng: TimeRange, manifest: FrameManifest) -> None:
    if rng.end_ms > manifest.duration_ms:
        raise RangeOutOfVideo(f"range {rng} ends after the video ends at "
                              f"{format_timecode(manifest.duration_ms)}")


def check_inspect_range(rng: TimeRange, manifest: FrameManifest) -> None:
    check_in_video(rng, manifest)
    if rng.duration_ms <= MIN_INSPECT_MS:
        raise RangeTooShort(f"range {rng} lasts {rng.duration_ms / 1000:g} s; frame_inspector needs "
                            "a range longer than 10 seconds")
    if rng.duration_ms > MAX_INSPECT_MS:
        raise RangeTooLong(f"range {rng} lasts {rng.duration_ms / 1000:g} s; frame_inspector accepts "
                           "at most 60 seconds, so split it into consecutive ranges of 60 seconds")


def cue_frames(gateway: Gateway, cue: str, rng: TimeRange, manifest: FrameManifest,
               k: int = CUE_FRAMES) -> list[Frame]:
    """The ``k`` in-range frames whose embeddings are closest to the cue text."""
    candidates = manifest.frames_in(rng)
    if not candidates:
        return []
    q = normalize(gateway.embed_text(cue))
    sims = [float(normalize(gateway.embed_image(f)) @ q) for f in candidates]
    order = sorted(range(len(candidates)), key=lambda i: (-sims[i], candidates[i].ms))
    return sorted((candidates[i] for i in order[:k]), key=lambda f: f.ms)


def inspector_frames(gateway: Gateway, rng: TimeRange, cue: Optional[str], manifest: FrameManifest,
                     budgets: Budgets) -> list[Frame]:
    frames = sample_uniform(rng, budgets.frame_cap, manifest)
    if cue and cue.strip() and rng.duration_ms > CUE_MIN_MS:
        merged = {f.ms: f for f in frames}
        for f in cue_frames(gateway, cue, rng, manifest):
            merged.setdefault(f.ms, f)
        frames = thin_uniform([merged[ms] for ms in sorted(merged)], budgets.frame_cap)
    return frames


def frame_inspector(gateway: Gateway, rng: TimeRange, cue: Optional[str], manifest: FrameManifest,
                    instruct: str = "", budgets: Budgets | None = None) -> str:
    budgets = budgets or gateway.budgets
    try:
        check_inspect_range(rng, manifest)
    except ToolArgError as e:
        return e.as_tool_text()
    frames = inspector_frames(gateway, rng, cue, manifest, budgets)
    if not frames:
        return f"Error (NoFrames): no extracted frames fall inside {rng}"
    cue_line = f"Visual cue to watch for: {cue}" if cue else ""
    prompt = prompts.render("frame_inspector", time_range=str(rng), instruct=instruct, cue_line=cue_line)
    return gateway.vision_chat(prompt, frames, purpose="frame_inspector")


def global_summary(gateway: Gateway, manifest: FrameManifest, instruct: str = "",
                   budgets: Budgets | None = None) -> str:
    budgets = budgets or gateway.budgets
    frames = sample_uniform(manifest.full_range, budgets.frame_cap, manifest)
    prompt = prompts.render("global_summary", n_frames=len(frames),
                            duration=format_timecode(manifest.duration), instruct=instruct)
    return gateway.vision_chat(prompt, frames, purpose="global_summary")


def multi_segment_frames(ranges: Sequence[TimeRange], manifest: FrameManifest,
                         budgets: Budgets) -> tuple[list[Frame], list[str]]:
    if len(ranges) < MIN_SEGMENTS:
        raise TooFewRanges(f"got {len(ranges)} range(s); multi_segment_analysis_tool needs 2 to 6, "
                           "use frame_inspector for a single range")
    if len(ranges) > MAX_SEGMENTS:
        raise TooManyRanges(f"got {len(ranges)} ranges; multi_segment_analysis_tool accepts at most 6")
    for r in ranges:
        check_in_video(r, manifest)
    per_range = budgets.frame_cap // len(ranges)
    frames, labels = [], []
    for i, r in enumerate(ranges, 1):
        for f in sample_uniform(r, per_range, manifest):
            frames.append(f)
            labels.append(f"Segment {i}, frame at {f.timecode}")
    return frames, labels


def multi_segment_analysis(gateway: Gateway, ranges: Sequence[TimeRange], instruct: str,
                           manifest: FrameManifest, budgets: Budgets | None = None) -> str:
    budgets = budgets or gateway.budgets
    frames, labels = multi_segment_frames(ranges, manifest, budgets)
    if not frames:
        return "Error (NoFrames): no extracted frames fall inside the requested ranges"
    listing = ", ".join(f"{i} {r}" for i, r in enumerate(ranges, 1))
    prompt = prompts.render("multi_segment", n_segments=len(ranges), segment_list=listing,
                            instruct=instruct)
    return gateway.vision_chat(prompt, frames, purpose="multi_segment_analysis", labels=labels)


def execute_tool_call(gateway: Gateway, reply: str, instruct: str, manifest: FrameManifest,
                      budgets: Budgets) -> str:
    """Run the single tool call in ``reply``; argument problems come back as text."""
    try:
        call = extract_json(reply)
    except NoJsonFound:
        return ('Error (BadToolCall): no tool call found. Reply with one JSON object '
                '{"tool": ..., "args": {...}} or with text starting with [answer].')
    tool = TOOL_NAMES.get(str(call.get("tool", "")))
    args = call.get("args") or {}
    try:
        if tool is None or not isinstance(args, dict):
            raise BadToolCall(f"unknown tool {call.get('tool')!r}; use one of "
                              f"{', '.join(t.value for t in PerceptionTool)}")
        if tool is PerceptionTool.FRAME_INSPECTOR:
            rng = parse_range(args.get("time_range"))
            return frame_inspector(gateway, rng, args.get("cue"), manifest, instruct, budgets)
        if tool is PerceptionTool.GLOBAL_SUMMARY:
            return global_summary(gateway, manifest, instruct, budgets)
        raw = args.get("time_ranges")
        if not isinstance(raw, list):
            raise BadToolCall("multi_segment_analysis_tool needs time_ranges: a list of [start, end] pairs")
        ranges = [parse_range(r) for r in raw]
        return multi_segment_analysis(gateway, ranges, instruct, manifest, budgets)
    except ToolArgError as e:
        return e.as_tool_text()


def answer_text(reply: str) -> Optional[str]:
    m = ANSWER_RE.search(reply)
    return None if m is None else reply[m.end():].strip()


def run_perception(gateway: Gateway, instruct: str, manifest: FrameManifest,
                   budgets: Budgets | None = None) -> Observation:
    budgets = budgets or gateway.budgets
    if not instruct.strip():
        raise ValueError("perception needs a non-empty instruct")
    messages = [system(prompts.render("perception", instruct=instruct,
                                      duration=format_timecode(manifest.duration))),
                user("Begin the task.")]
    results: list[str] = []
    tool_calls = 0
    while True:
        reply = gateway.chat(BackendRole.VLM, messages, purpose="perception_agent")
        messages.append(assistant(reply))
        answer = answer_text(reply)
        if answer is not None:
            return Observation.make(AgentKind.VISUAL_PERCEPTION, answer, {"tool_calls": tool_calls},
                                    budgets.observation_budget)
        if tool_calls >= budgets.tool_calls_per_agent:
            logger.warning("perception agent hit its %d tool-call budget", tool_calls)
            partial = "\n\n".join(results[-3:])
            text = (f"Perception stopped after {tool_calls} tool calls without a final answer. "
                    f"Latest tool results:\n{partial}")
            return Observation.make(AgentKind.VISUAL_PERCEPTION, text, {"tool_calls": tool_calls},
                                    budgets.observation_budget, truncated=True)
        tool_calls += 1
        result = execute_tool_call(gateway, reply, instruct, manifest, budgets)
        results.append(result)
        note = ""
        if tool_calls >= budgets.tool_calls_per_agent:
            note = "\n\nTool budget exhausted. Reply now with your summary starting with [answer]."
        messages.append(user(f"Tool result:\n{result}{note}"))
