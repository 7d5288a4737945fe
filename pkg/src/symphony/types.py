"""Domain model shared by every agent: time handling, questions, actions,
observations, the append-only trajectory and the run budgets."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Iterator, Optional, Sequence

from .errors import MalformedTimecode

TIMECODE_RE = re.compile(r"^\s*(\d+):(\d{2}):(\d{2})\s*$")

TRUNCATION_MARKER = "\n[truncated]"
DEFAULT_OBSERVATION_BUDGET = 8000


@dataclass(frozen=True, order=True)
class Timecode:
    """Offset from the start of a video, in whole milliseconds."""

    millis: int

    def __post_init__(self):
        if not isinstance(self.millis, int) or self.millis < 0:
            raise ValueError(f"Timecode needs a non-negative int of milliseconds, got {self.millis!r}")

    @classmethod
    def from_seconds(cls, seconds: float) -> "Timecode":
        return cls(int(round(seconds * 1000)))

    @property
    def seconds(self) -> float:
        return self.millis / 1000.0

    def __str__(self) -> str:
        return format_timecode(self)


def parse_timecode(s: str) -> Timecode:
    """Parse ``HH:MM:SS``. Bare ``MM:SS`` is rejected on purpose: prompts ask the
    models for the three-field form and a two-field value is ambiguous."""
    m = TIMECODE_RE.match(s) if isinstance(s, str) else None
    if m is None:
        raise MalformedTimecode(f"expected HH:MM:SS, got {s!r}")
    h, mi, se = (int(g) for g in m.groups())
    if mi >= 60 or se >= 60:
        raise MalformedTimecode(f"minutes and seconds must be < 60 in {s!r}")
    return Timecode((3600 * h + 60 * mi + se) * 1000)


def format_timecode(t: Timecode | int) -> str:
    ms = t.millis if isinstance(t, Timecode) else int(t)
    total = ms // 1000
    h, rem = divmod(total, 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


@dataclass(frozen=True, order=True)
class TimeRange:
    start: Timecode
    end: Timecode

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"TimeRange start must precede end: {self.start} .. {self.end}")

    @classmethod
    def from_ms(cls, start_ms: int, end_ms: int) -> "TimeRange":
        return cls(Timecode(int(start_ms)), Timecode(int(end_ms)))

    @classmethod
    def parse(cls, start: str, end: str) -> "TimeRange":
        return cls(parse_timecode(start), parse_timecode(end))

    @property
    def start_ms(self) -> int:
        return self.start.millis

    @property
    def end_ms(self) -> int:
        return self.end.millis

    @property
    def duration_ms(self) -> int:
        return self.end.millis - self.start.millis

    def contains_ms(self, ms: int) -> bool:
        return self.start.millis <= ms < self.end.millis

    def __str__(self) -> str:
        return f"[{self.start} - {self.end}]"

    def to_dict(self) -> dict:
        return {"start": str(self.start), "end": str(self.end),
                "start_ms": self.start.millis, "end_ms": self.end.millis}


@dataclass(frozen=True)
class Option:
    label: str
    text: str


@dataclass(frozen=True)
class Question:
    text: str
    options: tuple[Option, ...] = ()
    question_id: str = ""
    category: Optional[str] = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("question text must be non-empty")
        labels = [o.label for o in self.options]
        if len(set(labels)) != len(labels):
            raise ValueError(f"option labels must be unique: {labels}")
        object.__setattr__(self, "options", tuple(self.options))

    @property
    def labels(self) -> list[str]:
        return [o.label for o in self.options]

    @property
    def is_multiple_choice(self) -> bool:
        return bool(self.options)

    def render(self) -> str:
        """Question text followed by one ``(X) text`` line per option."""
        lines = [self.text.strip()]
        lines.extend(f"({o.label}) {o.text}" for o in self.options)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "text": self.text,
            "options": [{"label": o.label, "text": o.text} for o in self.options],
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Question":
        opts = d.get("options") or []
        options = []
        for i, o in enumerate(opts):
            if isinstance(o, dict):
                options.append(Option(str(o["label"]), str(o.get("text", ""))))
            else:
                options.append(Option(chr(ord("A") + i), str(o)))
        return cls(
            text=d["text"],
            options=tuple(options),
            question_id=str(d.get("question_id", "")),
            category=d.get("category"),
        )


class AgentKind(str, Enum):
    GROUNDING = "Grounding"
    VISUAL_PERCEPTION = "VisualPerception"
    SUBTITLE = "Subtitle"
    TERMINATE = "Terminate"

    @property
    def display_name(self) -> str:
        return {
            AgentKind.GROUNDING: "Grounding Agent",
            AgentKind.VISUAL_PERCEPTION: "Visual Perception Agent",
            AgentKind.SUBTITLE: "Subtitle Agent",
            AgentKind.TERMINATE: "finish",
        }[self]


# The action space; TERMINATE is the planner's stop signal, not an agent.
ACTION_SPACE = (AgentKind.GROUNDING, AgentKind.VISUAL_PERCEPTION, AgentKind.SUBTITLE)


@dataclass(frozen=True)
class AgentAction:
    kind: AgentKind
    instruct: str
    reason: str = ""

    def __post_init__(self):
        if self.kind is not AgentKind.TERMINATE and not self.instruct.strip():
            raise ValueError(f"{self.kind.display_name} action needs a non-empty instruct")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "agent": self.kind.display_name,
                "instruct": self.instruct, "reason": self.reason}


@dataclass(frozen=True)
class Observation:
    source: AgentKind
    text: str
    artifacts: Optional[dict[str, Any]] = None
    truncated: bool = False

    @classmethod
    def make(cls, source: AgentKind, text: str, artifacts: dict | None = None,
             budget: int = DEFAULT_OBSERVATION_BUDGET, truncated: bool = False) -> "Observation":
        """Build an observation, clipping ``text`` to ``budget`` characters.

        Clipped text keeps its head and ends with a ``[truncated]`` marker; the
        marker counts toward the budget.
        """
        if len(text) > budget:
            keep = max(0, budget - len(TRUNCATION_MARKER))
            text = text[:keep] + TRUNCATION_MARKER
            truncated = True
        return cls(source, text, artifacts, truncated)

    def to_dict(self) -> dict:
        return {"source": self.source.value, "text": self.text,
                "truncated": self.truncated, "artifacts": self.artifacts}


@dataclass(frozen=True)
class Critique:
    comment: str
    attempt_index: int
    after_step: int = 0  # number of steps in the trajectory when the critique was issued

    def __post_init__(self):
        if not self.comment or not self.comment.strip():
            raise ValueError("critique comment must be non-empty")
        if self.attempt_index < 1:
            raise ValueError("attempt_index starts at 1")


@dataclass(frozen=True)
class Step:
    action: AgentAction
    observation: Observation


class Trajectory:
    """Append-only record of (action, observation) steps and critiques."""

    def __init__(self):
        self._steps: list[Step] = []
        self._critiques: list[Critique] = []

    @property
    def steps(self) -> tuple[Step, ...]:
        return tuple(self._steps)

    @property
    def critiques(self) -> tuple[Critique, ...]:
        return tuple(self._critiques)

    def append_step(self, action: AgentAction, observation: Observation) -> Step:
        step = Step(action, observation)
        self._steps.append(step)
        return step

    def append_critique(self, comment: str, attempt_index: int) -> Critique:
        c = Critique(comment, attempt_index, after_step=len(self._steps))
        self._critiques.append(c)
        return c

    def __len__(self) -> int:
        return len(self._steps)

    def events(self) -> Iterator[Step | Critique]:
        """Steps and critiques interleaved in the order they were recorded."""
        ci = 0
        for i, step in enumerate(self._steps):
            while ci < len(self._critiques) and self._critiques[ci].after_step <= i:
                yield self._critiques[ci]
                ci += 1
            yield step
        yield from self._critiques[ci:]

    def render(self, budget: int = DEFAULT_OBSERVATION_BUDGET) -> str:
        """Text form handed to the planner and reflector prompts."""
        blocks = []
        for k, ev in enumerate_steps(self.events()):
            if isinstance(ev, Critique):
                blocks.append(f"Reflection feedback (attempt {ev.attempt_index}): {ev.comment}")
            else:
                obs = ev.observation.text
                if len(obs) > budget:
                    obs = obs[: max(0, budget - len(TRUNCATION_MARKER))] + TRUNCATION_MARKER
                blocks.append(
                    f"Step {k} - {ev.action.kind.display_name}\n"
                    f"Instruct: {ev.action.instruct}\n"
                    f"Observation: {obs}"
                )
        return "\n\n".join(blocks)

    def to_dict(self) -> dict:
        return {
            "steps": [
                {"index": i + 1, "action": s.action.to_dict(), "observation": s.observation.to_dict()}
                for i, s in enumerate(self._steps)
            ],
            "critiques": [asdict(c) for c in self._critiques],
        }


def enumerate_steps(events) -> Iterator[tuple[int, Step | Critique]]:
    k = 0
    for ev in events:
        if isinstance(ev, Step):
            k += 1
        yield k, ev


@dataclass(frozen=True)
class EpisodeState:
    question: Question
    trajectory: Trajectory
    video: Any  # FrameManifest
    subtitles: Any = None  # SubtitleTrack or None


@dataclass(frozen=True)
class Answer:
    choice_label: Optional[str]
    free_text: str
    confidence_note: Optional[str] = None
    trajectory_ref: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Budgets:
    inner_rounds: int = 15
    tool_calls_per_agent: int = 15
    reflection_rounds: int = 3
    frame_cap: int = 40
    segment_duration_s: int = 60
    frames_per_segment: int = 30
    scoring_concurrency: int = 20
    clip_window_s: int = 10
    clip_top_k: int = 15
    score_keep_min: int = 2
    observation_budget: int = DEFAULT_OBSERVATION_BUDGET

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"budget {name} must be a positive int, got {value!r}")
        if self.frames_per_segment > self.frame_cap:
            raise ValueError("frames_per_segment cannot exceed frame_cap")
        if self.score_keep_min not in (2, 3, 4):
            raise ValueError("score_keep_min must be 2, 3 or 4")

    @property
    def scoring_fps(self) -> float:
        return self.frames_per_segment / self.segment_duration_s

    @classmethod
    def from_mapping(cls, d: dict | None) -> "Budgets":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown budget fields: {sorted(unknown)}")
        return cls(**d)


def labels_for(n: int) -> list[str]:
    return [chr(ord("A") + i) for i in range(n)]


def make_question(text: str, options: Sequence[str] = (), question_id: str = "",
                  category: str | None = None) -> Question:
    """Build a question from option strings like ``"A. cooking"`` or plain
    ``"cooking"`` (labels assigned A, B, C, ... when absent)."""
    parsed = []
    for i, raw in enumerate(options):
        m = re.match(r"^\s*\(?([A-Za-z])[\.\):]\s*(.*)$", raw)
        if m:
            parsed.append(Option(m.group(1).upper(), m.group(2).strip()))
        else:
            parsed.append(Option(labels_for(len(options))[i], raw.strip()))
    return Question(text=text, options=tuple(parsed), question_id=question_id, category=category)
