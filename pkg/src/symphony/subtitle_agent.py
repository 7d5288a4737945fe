"""Subtitle agent: one LLM pass over the rendered subtitle track.

The planner only ever sees the structured analysis, never the raw transcript.
Transcripts over ``SPLIT_CHARS`` are halved recursively and the partial
analyses merged by a further call.
"""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass

from . import prompts
from .errors import MalformedTimecode, NoJsonFound, SubtitleParseFailure
from .gateway import BackendRole, Gateway, assistant, extract_json, user
from .media import SubtitleTrack, render_subtitles
from .types import DEFAULT_OBSERVATION_BUDGET, TRUNCATION_MARKER, Question, parse_timecode

logger = logging.getLogger(__name__)

SPLIT_CHARS = 60_000
FIELDS = ("relevant_subtitle_info", "key_entities_and_sentiment", "overall_topic")
LINE_RE = re.compile(r"^\[(\d+:\d{2}:\d{2}) - (\d+:\d{2}:\d{2})\]: ?(.*)$")


@dataclass(frozen=True)
class SubtitleAnalysis:
    relevant_subtitle_info: str
    key_entities_and_sentiment: str
    overall_topic: str

    def as_text(self) -> str:
        return (f"Relevant subtitles:\n{self.relevant_subtitle_info or '(none)'}\n\n"
                f"Key entities and sentiment: {self.key_entities_and_sentiment}\n"
                f"Overall topic: {self.overall_topic}")

    def to_dict(self) -> dict:
        return asdict(self)


NO_SUBTITLES = SubtitleAnalysis("", "No subtitles are available for this video.",
                                "No subtitles available.")


def _parse(reply: str) -> SubtitleAnalysis:
    data = extract_json(reply)
    missing = [f for f in FIELDS if f not in data]
    if missing:
        raise NoJsonFound(f"analysis JSON lacks {missing}")
    values = []
    for f in FIELDS:
        v = data[f]
        if isinstance(v, list):
            v = "\n".join(str(x) for x in v)
        values.append("" if v is None else str(v).strip())
    return SubtitleAnalysis(*values)


def _ask(gateway: Gateway, prompt: str, purpose: str) -> SubtitleAnalysis:
    messages = [user(prompt)]
    reply = gateway.chat(BackendRole.SUBTITLE_LLM, messages, purpose=purpose)
    try:
        return _parse(reply)
    except NoJsonFound as e:
        messages += [assistant(reply), user(f"Your reply could not be parsed ({e}). "
                                            "Return only the JSON object with the three fields.")]
        reply = gateway.chat(BackendRole.SUBTITLE_LLM, messages, purpose=purpose)
        try:
            return _parse(reply)
        except NoJsonFound as e2:
            raise SubtitleParseFailure(str(e2)) from e2


def check_relevant_lines(info: str, duration_ms: int | None = None) -> list[str]:
    """Return a description of every line that breaks the bracketed-timestamp
    format or points past the end of the video."""
    problems = []
    for line in filter(None, (ln.strip() for ln in info.splitlines())):
        m = LINE_RE.match(line)
        if m is None:
            problems.append(f"unformatted line: {line[:80]!r}")
            continue
        try:
            start, end = parse_timecode(m.group(1)), parse_timecode(m.group(2))
        except MalformedTimecode as e:
            problems.append(str(e))
            continue
        if duration_ms is not None and end.millis > duration_ms + 999:
            problems.append(f"timestamp beyond video end: {line[:80]!r}")
        elif end < start:
            problems.append(f"reversed range: {line[:80]!r}")
    return problems


def _analyze(gateway: Gateway, question: Question, track: SubtitleTrack, split_chars: int) -> SubtitleAnalysis:
    rendered = render_subtitles(track)
    if len(rendered) > split_chars and len(track) > 1:
        first, second = track.split()
        a = _analyze(gateway, question, first, split_chars)
        b = _analyze(gateway, question, second, split_chars)
        prompt = prompts.render("subtitle_merge", question=question.render(),
                                first=a.as_text(), second=b.as_text())
        return _ask(gateway, prompt, "subtitle_merge")
    prompt = prompts.render("subtitle", question=question.render(), subtitles=rendered)
    return _ask(gateway, prompt, "subtitle_analysis")


def analyze_subtitles(gateway: Gateway, question: Question, track: SubtitleTrack | None,
                      duration_ms: int | None = None, split_chars: int = SPLIT_CHARS,
                      max_info_chars: int = DEFAULT_OBSERVATION_BUDGET) -> SubtitleAnalysis:
    if track is None or not track.cues:
        return NO_SUBTITLES
    result = _analyze(gateway, question, track, split_chars)
    for problem in check_relevant_lines(result.relevant_subtitle_info, duration_ms):
        logger.warning("subtitle analysis: %s", problem)
    info = result.relevant_subtitle_info
    if len(info) > max_info_chars:
        info = info[: max_info_chars - len(TRUNCATION_MARKER)] + TRUNCATION_MARKER
        result = SubtitleAnalysis(info, result.key_entities_and_sentiment, result.overall_topic)
    return result
