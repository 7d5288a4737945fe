"""Grounding agent: find the video segments relevant to a query.

Two tools back the agent. ``clip_retrieve`` ranks 10 s windows by embedding
similarity to a short cue and suits simple, explicit questions.
``vlm_ground`` asks the VLM to score every 60 s segment on a 1-4 relevance
rubric and keeps the ones scoring 2 or more; it suits abstract or multi-hop
questions. ``run_grounding`` lets an LLM pick between them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from . import prompts
from .errors import BackendOutage, GroundingParseFailure, NoJsonFound, ToolLoopExceeded, TransportError
from .gateway import BackendRole, Gateway, assistant, extract_json, normalize, system, user
from .media import Frame, FrameManifest, clip_windows, partition_segments, sample_fps
from .types import Budgets, Question, TimeRange, format_timecode

logger = logging.getLogger(__name__)

CLIP_EMBED_FPS = 0.2
CLIP_EMBED_FRAMES = 2


class Complexity(str, Enum):
    TYPE1 = "Type1"
    TYPE2 = "Type2"


class GroundingTool(str, Enum):
    RETRIEVE = "retrieve_tool"
    VLM_SCORING = "vlm_scoring_tool"


@dataclass(frozen=True)
class EnhancedQuery:
    original: str
    analysis: str
    concrete_cues: tuple[str, ...] = ()
    complexity: Complexity = Complexity.TYPE2

    def __post_init__(self):
        object.__setattr__(self, "concrete_cues", tuple(self.concrete_cues))
        if self.complexity is Complexity.TYPE2 and not self.concrete_cues:
            raise ValueError("a Type2 query needs at least one concrete cue")

    @property
    def scoring_instruction(self) -> str:
        cues = "; ".join(self.concrete_cues)
        return f"{self.analysis} Concrete visual cues: {cues}" if cues else self.analysis

    def to_dict(self) -> dict:
        return {"original": self.original, "analysis": self.analysis,
                "concrete_cues": list(self.concrete_cues), "complexity": self.complexity.value}


@dataclass(frozen=True)
class SegmentScore:
    range: TimeRange
    score: int
    clip_caption: str
    reasoning: Optional[str]

    def __post_init__(self):
        if self.score not in (1, 2, 3, 4):
            raise ValueError(f"relevance score must be 1-4, got {self.score!r}")
        if (self.reasoning is None) != (self.score == 1):
            raise ValueError("reasoning is null exactly when the score is 1")

    def to_dict(self) -> dict:
        return {"range": self.range.to_dict(), "score": self.score,
                "clip_caption": self.clip_caption, "reasoning": self.reasoning}


@dataclass(frozen=True)
class RetrievedClip:
    range: TimeRange
    similarity: float

    def to_dict(self) -> dict:
        return {"range": self.range.to_dict(), "similarity": round(self.similarity, 6)}


@dataclass(frozen=True)
class GroundingResult:
    tool_used: Optional[GroundingTool]
    segments: tuple[Union[SegmentScore, RetrievedClip], ...]
    report: str
    query: Optional[EnhancedQuery] = None
    scored: tuple[SegmentScore, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "tool_used": self.tool_used.value if self.tool_used else None,
            "segments": [s.to_dict() for s in self.segments],
            "report": self.report,
            "query": self.query.to_dict() if self.query else None,
            "segments_scored": len(self.scored),
        }


def _chat_json(gateway: Gateway, messages: list, purpose: str) -> dict:
    """One call, plus one reprompt carrying the parse error if no JSON came back."""
    reply = gateway.chat(BackendRole.VLM, messages, purpose=purpose)
    try:
        return extract_json(reply)
    except NoJsonFound as e:
        retry = messages + [assistant(reply),
                            user(f"Your reply could not be parsed ({e}). Respond with the JSON object only.")]
        reply = gateway.chat(BackendRole.VLM, retry, purpose=purpose)
        try:
            return extract_json(reply)
        except NoJsonFound as e2:
            raise GroundingParseFailure(str(e2)) from e2


def enhance_query(gateway: Gateway, question: Question) -> EnhancedQuery:
    """Ask the LLM to turn the question into concrete visual cues and classify it."""
    data = _chat_json(gateway, [user(prompts.render("enhance_query", question=question.render()))],
                      purpose="enhance_query")
    cues = data.get("concrete_cues") or []
    if isinstance(cues, str):
        cues = [cues]
    cues = tuple(str(c).strip() for c in cues if str(c).strip())
    complexity = Complexity.TYPE1 if str(data.get("complexity", "")).replace(" ", "").lower() == "type1" \
        else Complexity.TYPE2
    if complexity is Complexity.TYPE2 and not cues:
        cues = (question.text.strip(),)
    return EnhancedQuery(question.render(), str(data.get("analysis") or ""), cues, complexity)


def _parse_score(reply: str, segment: TimeRange) -> SegmentScore:
    data = extract_json(reply)
    raw = data.get("relevance_score")
    if isinstance(raw, bool):
        raise ValueError("boolean relevance score")
    score = int(raw) if isinstance(raw, (int, float, str)) and float(raw) == int(float(raw)) else None
    if score not in (1, 2, 3, 4):
        raise ValueError(f"relevance score {raw!r} outside 1-4")
    caption = str(data.get("clip_caption") or "")
    reasoning = data.get("reasoning")
    if score == 1:
        reasoning = None
    elif reasoning is None or str(reasoning).strip().lower() == "null":
        reasoning = ""
    return SegmentScore(segment, score, caption, None if reasoning is None else str(reasoning))


def score_segment(gateway: Gateway, query: EnhancedQuery, segment: TimeRange,
                  manifest: FrameManifest, budgets: Budgets | None = None) -> SegmentScore:
    """Score one segment 1-4. Unusable VLM output degrades to score 1; transport
    errors propagate so the caller can tell an outage from a bad answer."""
    budgets = budgets or gateway.budgets
    frames = sample_fps(segment, budgets.scoring_fps, budgets.frame_cap, manifest)
    if not frames:
        logger.warning("segment %s has no frames; scored 1", segment)
        return SegmentScore(segment, 1, "", None)
    prompt = prompts.render("scoring", USER_QUESTION=query.original,
                            SCORING_INSTRUCTION=query.scoring_instruction, clip_range=str(segment))
    reply = gateway.vision_chat(prompt, frames, purpose="vlm_scoring")
    try:
        return _parse_score(reply, segment)
    except (NoJsonFound, ValueError, TypeError) as e:
        logger.warning("unusable score for segment %s (%s); scored 1", segment, e)
        return SegmentScore(segment, 1, "", None)


def select_relevant(scores: Sequence[SegmentScore], keep_min: int) -> list[SegmentScore]:
    kept = [s for s in scores if s.score >= keep_min]
    return sorted(kept, key=lambda s: (-s.score, s.range.start_ms))


def _vlm_report(kept: Sequence[SegmentScore], n_scored: int, keep_min: int, seg_s: int) -> str:
    if not kept:
        return (f"vlm_scoring_tool: scored {n_scored} segments of {seg_s} s; "
                f"no relevant content found (no segment scored {keep_min} or higher).")
    lines = [f"vlm_scoring_tool: scored {n_scored} segments of {seg_s} s; "
             f"{len(kept)} relevant (score >= {keep_min}), most relevant first:"]
    for s in kept:
        lines.append(f"{s.range} score {s.score}")
        lines.append(f"  caption: {s.clip_caption}")
        lines.append(f"  reasoning: {s.reasoning}")
    return "\n".join(lines)


def vlm_ground(gateway: Gateway, query: EnhancedQuery, manifest: FrameManifest,
               budgets: Budgets | None = None) -> GroundingResult:
    budgets = budgets or gateway.budgets
    segments = partition_segments(manifest.duration, budgets.segment_duration_s)
    failures = []

    def work(seg: TimeRange) -> SegmentScore:
        try:
            return score_segment(gateway, query, seg, manifest, budgets)
        except TransportError as e:
            logger.warning("scoring %s failed after retries (%s); scored 1", seg, e)
            failures.append(seg)
            return SegmentScore(seg, 1, "", None)

    with ThreadPoolExecutor(max_workers=budgets.scoring_concurrency) as pool:
        scored = list(pool.map(work, segments))
    if segments and len(failures) == len(segments):
        raise BackendOutage(f"all {len(segments)} segment scoring calls failed")
    kept = select_relevant(scored, budgets.score_keep_min)
    return GroundingResult(GroundingTool.VLM_SCORING, tuple(kept),
                           _vlm_report(kept, len(scored), budgets.score_keep_min,
                                       budgets.segment_duration_s),
                           query=query, scored=tuple(scored))


def window_vectors(gateway: Gateway, windows: Sequence[TimeRange],
                   manifest: FrameManifest) -> np.ndarray:
    """One unit vector per window: the normalized mean of its frames' normalized embeddings."""
    cache: dict[int, np.ndarray] = {}

    def frame_vec(f: Frame) -> np.ndarray:
        if f.ms not in cache:
            cache[f.ms] = normalize(gateway.embed_image(f))
        return cache[f.ms]

    rows = []
    for w in windows:
        frames = sample_fps(w, CLIP_EMBED_FPS, CLIP_EMBED_FRAMES, manifest)
        if not frames:
            frames = [manifest.nearest((w.start_ms + w.end_ms) / 2)]
        rows.append(normalize(np.mean([frame_vec(f) for f in frames], axis=0)))
    return np.vstack(rows)


def clip_retrieve(gateway: Gateway, query_text: str, manifest: FrameManifest,
                  budgets: Budgets | None = None) -> GroundingResult:
    budgets = budgets or gateway.budgets
    windows = clip_windows(manifest.duration, budgets.clip_window_s)
    q = normalize(gateway.embed_text(query_text))
    sims = window_vectors(gateway, windows, manifest) @ q
    order = sorted(range(len(windows)), key=lambda i: (-sims[i], windows[i].start_ms))
    top = [RetrievedClip(windows[i], float(sims[i])) for i in order[: budgets.clip_top_k]]
    lines = [f"retrieve_tool: top {len(top)} of {len(windows)} clips of {budgets.clip_window_s} s "
             f"for cue {query_text!r}:"]
    lines += [f"{k}. {c.range} similarity {c.similarity:.3f}" for k, c in enumerate(top, 1)]
    return GroundingResult(GroundingTool.RETRIEVE, tuple(top), "\n".join(lines))


def _query_from_args(gateway: Gateway, args: dict, question: Question) -> EnhancedQuery:
    instruction = str(args.get("scoring_instruction") or "").strip()
    if not instruction:
        return enhance_query(gateway, question)
    cues = args.get("concrete_cues") or []
    if isinstance(cues, str):
        cues = [cues]
    cues = tuple(str(c) for c in cues if str(c).strip()) or (question.text.strip(),)
    original = str(args.get("question") or "").strip() or question.render()
    return EnhancedQuery(original, instruction, cues, Complexity.TYPE2)


def run_grounding(gateway: Gateway, instruct: str, question: Question, manifest: FrameManifest,
                  subtitles=None, budgets: Budgets | None = None, tool: str = "auto") -> GroundingResult:
    """Localize the segments relevant to ``instruct``.

    With ``tool="auto"`` an LLM loop analyzes the request, calls
    ``retrieve_tool`` or ``vlm_scoring_tool`` and ends with ``finish``.
    ``"retrieve"`` and ``"vlm"`` call the tool directly.
    """
    budgets = budgets or gateway.budgets
    if tool == "retrieve":
        return clip_retrieve(gateway, instruct, manifest, budgets)
    if tool == "vlm":
        return vlm_ground(gateway, enhance_query(gateway, question), manifest, budgets)
    if tool != "auto":
        raise ValueError(f"unknown grounding tool mode {tool!r}")

    messages = [
        system(prompts.render("grounding", question=instruct,
                              video_length=format_timecode(manifest.duration),
                              original_question=question.render())),
        user("Analyze the question, then call a tool."),
    ]
    last: GroundingResult | None = None
    for _ in range(budgets.tool_calls_per_agent):
        reply = gateway.chat(BackendRole.VLM, messages, purpose="grounding_agent")
        messages.append(assistant(reply))
        try:
            call = extract_json(reply)
            name = str(call["tool"])
            args = call.get("args") or {}
            if not isinstance(args, dict):
                raise TypeError("args must be an object")
        except (NoJsonFound, KeyError, TypeError) as e:
            messages.append(user(f"Tool call error: {e}. Reply with one JSON object "
                                 '{"tool": ..., "args": {...}}.'))
            continue
        if name == "finish":
            answer = str(args.get("answer") or "").strip()
            if last is None:
                return GroundingResult(None, (), answer or "No localization result.")
            report = f"{answer}\n\n{last.report}" if answer else last.report
            return GroundingResult(last.tool_used, last.segments, report, last.query, last.scored)
        if name == GroundingTool.RETRIEVE.value:
            cue = str(args.get("cue") or "").strip() or question.text
            last = clip_retrieve(gateway, cue, manifest, budgets)
        elif name == GroundingTool.VLM_SCORING.value:
            last = vlm_ground(gateway, _query_from_args(gateway, args, question), manifest, budgets)
        else:
            messages.append(user(f"Tool call error: unknown tool {name!r}. "
                                 "Use retrieve_tool, vlm_scoring_tool or finish."))
            continue
        messages.append(user(f"Tool result ({name}):\n{last.report}"))
    raise ToolLoopExceeded(f"grounding agent did not finish within {budgets.tool_calls_per_agent} turns")
