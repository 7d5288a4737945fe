"""The planning / reflection loop that drives an episode.

An episode alternates two phases. In the forward phase the planner picks the
next specialized agent given the question and the trajectory so far, the
agent runs, and its observation is appended. When the planner calls
``finish`` (or its step budget runs out) the reflector judges the whole
trajectory. A non-credible verdict is appended to the trajectory as a
critique and planning resumes with every earlier step still in view. After
``reflection_rounds`` rejected attempts the planner answers anyway and the
answer carries a low-confidence note.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import prompts
from .errors import (AnswerExtractionFailure, EpisodeAborted, NoJsonFound, PlanningParseFailure,
                     RequestTimeout, SymphonyError, TransportError)
from .gateway import BackendRole, Gateway, assistant, extract_json, user
from .grounding import run_grounding
from .media import FrameManifest, SubtitleTrack
from .perception import run_perception
from .subtitle_agent import analyze_subtitles
from .types import (AgentAction, AgentKind, Answer, Budgets, EpisodeState, Observation, Question,
                    Trajectory, format_timecode)

logger = logging.getLogger(__name__)

LOG_SCHEMA_VERSION = 1
LOW_CONFIDENCE_NOTE = "low confidence: no credible reflection verdict within the reflection budget"
NO_PROPOSAL = "(no answer was proposed before the planning step budget ran out)"

_AGENT_NAMES = {
    "grounding agent": AgentKind.GROUNDING, "grounding": AgentKind.GROUNDING,
    "visual perception agent": AgentKind.VISUAL_PERCEPTION,
    "visual perception": AgentKind.VISUAL_PERCEPTION,
    "perception agent": AgentKind.VISUAL_PERCEPTION, "perception": AgentKind.VISUAL_PERCEPTION,
    "subtitle agent": AgentKind.SUBTITLE, "subtitle": AgentKind.SUBTITLE,
    "finish": AgentKind.TERMINATE, "terminate": AgentKind.TERMINATE,
}


@dataclass(frozen=True)
class ReflectionVerdict:
    credible: bool
    comment: Optional[str] = None

    def __post_init__(self):
        if (self.comment is None) != self.credible:
            raise ValueError("comment must be null exactly when the verdict is credible")


@dataclass
class EpisodeOutcome:
    answer: Answer
    attempts_used: int
    steps_used: int
    verdicts: list[ReflectionVerdict]
    exchanges: dict[str, dict[str, int]]
    log_path: Optional[Path] = None
    log: dict = field(default_factory=dict, repr=False)


class CallMeter:
    """Counts planner calls against a hard ceiling."""

    def __init__(self, limit: int | None = None):
        self.limit = limit
        self.used = 0

    def remaining(self) -> float:
        return float("inf") if self.limit is None else self.limit - self.used

    def take(self) -> None:
        if self.remaining() < 1:
            raise PlanningParseFailure("planner call budget exhausted")
        self.used += 1


def agent_kind(name: object) -> Optional[AgentKind]:
    key = re.sub(r"\s+", " ", str(name or "").replace("_", " ")).strip().lower()
    return _AGENT_NAMES.get(key)


def _planner_chat(gateway: Gateway, messages: list, meter: CallMeter, purpose: str) -> str:
    meter.take()
    return gateway.chat(BackendRole.PLANNER, messages, purpose=purpose)


def render_planner_prompt(state: EpisodeState, budgets: Budgets) -> str:
    return prompts.render("planner", question=state.question.render(),
                          duration=format_timecode(state.video.duration),
                          history_str=state.trajectory.render(budgets.observation_budget))


def plan_step(gateway: Gateway, state: EpisodeState, budgets: Budgets | None = None,
              meter: CallMeter | None = None) -> AgentAction:
    """Ask the planner for the next action.

    No JSON: one reprompt, then :class:`PlanningParseFailure`. Unknown agent
    name: one corrective reprompt, then the step is treated as ``finish``.
    """
    budgets = budgets or gateway.budgets
    meter = meter or CallMeter()
    messages = [user(render_planner_prompt(state, budgets))]
    reply = _planner_chat(gateway, messages, meter, "plan")
    try:
        data = extract_json(reply)
    except NoJsonFound as e:
        if meter.remaining() < 1:
            raise PlanningParseFailure(str(e)) from e
        messages += [assistant(reply), user(f"Your reply could not be parsed ({e}). Reply with the "
                                            'JSON object {"reason", "agent", "instruct"} only.')]
        reply = _planner_chat(gateway, messages, meter, "plan")
        try:
            data = extract_json(reply)
        except NoJsonFound as e2:
            raise PlanningParseFailure(str(e2)) from e2

    kind = agent_kind(data.get("agent"))
    if kind is None and meter.remaining() >= 1:
        valid = ", ".join(k.display_name for k in AgentKind)
        messages += [assistant(reply), user(f"Unknown agent {data.get('agent')!r}. "
                                            f"The agent must be one of: {valid}.")]
        reply = _planner_chat(gateway, messages, meter, "plan")
        try:
            data = extract_json(reply)
            kind = agent_kind(data.get("agent"))
        except NoJsonFound:
            kind = None
    if kind is None:
        logger.warning("planner named unknown agent %r twice; treating as finish", data.get("agent"))
        return AgentAction(AgentKind.TERMINATE, "", f"fault: unknown agent {data.get('agent')!r}")

    instruct = str(data.get("instruct") or "").strip()
    if kind is not AgentKind.TERMINATE and not instruct:
        instruct = state.question.render()
    return AgentAction(kind, instruct, str(data.get("reason") or ""))


def dispatch_action(gateway: Gateway, action: AgentAction, state: EpisodeState,
                    budgets: Budgets | None = None, grounding_tool: str = "auto") -> Observation:
    """Run the chosen agent and append (action, observation) to the trajectory.

    Agent failures become error-text observations so planning can go on.
    """
    budgets = budgets or gateway.budgets
    if action.kind is AgentKind.TERMINATE:
        raise ValueError("finish is not dispatched to an agent")
    try:
        if action.kind is AgentKind.GROUNDING:
            result = run_grounding(gateway, action.instruct, state.question, state.video,
                                   state.subtitles, budgets, tool=grounding_tool)
            obs = Observation.make(AgentKind.GROUNDING, result.report, {"grounding": result.to_dict()},
                                   budgets.observation_budget)
        elif action.kind is AgentKind.VISUAL_PERCEPTION:
            obs = run_perception(gateway, action.instruct, state.video, budgets)
        else:
            analysis = analyze_subtitles(gateway, state.question, state.subtitles,
                                         state.video.duration_ms,
                                         max_info_chars=budgets.observation_budget)
            obs = Observation.make(AgentKind.SUBTITLE, analysis.as_text(),
                                   {"subtitle_analysis": analysis.to_dict()}, budgets.observation_budget)
    except RequestTimeout:
        obs = Observation.make(action.kind, "tool error: timeout", {"error": "timeout"})
    except (SymphonyError, ValueError) as e:
        logger.warning("%s failed: %s", action.kind.display_name, e)
        obs = Observation.make(action.kind, f"tool error: {type(e).__name__}: {e}",
                               {"error": type(e).__name__}, budgets.observation_budget)
    state.trajectory.append_step(action, obs)
    return obs


def reflect(gateway: Gateway, state: EpisodeState, proposed_answer: str,
            budgets: Budgets | None = None) -> ReflectionVerdict:
    budgets = budgets or gateway.budgets
    prompt = prompts.render("reflector", history=state.trajectory.render(budgets.observation_budget),
                            question=state.question.render(), proposed_answer=proposed_answer)
    reply = gateway.chat(BackendRole.REFLECTOR, [user(prompt)], purpose="reflect")
    try:
        data = extract_json(reply)
        credible = data["credible"]
        if isinstance(credible, str) and credible.strip().lower() in ("true", "false"):
            credible = credible.strip().lower() == "true"
        if not isinstance(credible, bool):
            raise TypeError("credible is not a boolean")
    except (NoJsonFound, KeyError, TypeError):
        return ReflectionVerdict(False, "reflection output unparseable")
    if credible:
        return ReflectionVerdict(True, None)
    comment = str(data.get("comment") or "").strip()
    return ReflectionVerdict(False, comment or "The answer was judged not credible; no reason given.")


_CHOICE_PATTERNS = (
    re.compile(r"answer\s*(?:is|:|=)?\s*[:\-]?\s*\**\(?\s*([A-Z])\s*\)?(?![A-Za-z])", re.IGNORECASE),
    re.compile(r"\(\s*([A-Z])\s*\)"),
    re.compile(r"^\s*\**\s*([A-Z])\s*(?:[\.\):]|\**\s*$)"),
    re.compile(r"(?:option|choice)\s+\(?([A-Z])\)?(?![A-Za-z])", re.IGNORECASE),
)


def extract_choice(reply: str, labels: Sequence[str]) -> Optional[str]:
    """Find the option label a reply commits to, or None."""
    valid = set(labels)
    try:
        data = extract_json(reply)
        ans = str(data.get("answer", "")).strip().strip("()").upper()
        if ans in valid:
            return ans
    except NoJsonFound:
        pass
    for pat in _CHOICE_PATTERNS:
        for m in pat.finditer(reply):
            label = m.group(1).upper() if pat.flags & re.IGNORECASE else m.group(1)
            if label in valid:
                return label
    return None


def prefix_match(reply: str, question: Question) -> Optional[str]:
    """Case-insensitive prefix match of the reply against labels, then option texts."""
    r = reply.strip().lower()
    if not r:
        return None
    for o in question.options:
        lab = o.label.lower()
        if r.startswith(lab) and (len(r) == len(lab) or not r[len(lab)].isalpha()):
            return o.label
    for o in question.options:
        t = o.text.strip().lower()
        if t and (r.startswith(t) or (len(r) >= 3 and t.startswith(r))):
            return o.label
    return None


def finalize_answer(gateway: Gateway, state: EpisodeState, budgets: Budgets | None = None,
                    confidence_note: str | None = None, trajectory_ref: str = "",
                    meter: CallMeter | None = None) -> Answer:
    budgets = budgets or gateway.budgets
    meter = meter or CallMeter()
    q = state.question
    if q.is_multiple_choice:
        fmt = ("Reply with the label of the single best option, for example \"The answer is (B)\", "
               "then one sentence of justification.")
    else:
        fmt = "Reply with a concise answer, then one sentence of justification."
    prompt = prompts.render("finalize", question=q.render(), duration=format_timecode(state.video.duration),
                            history_str=state.trajectory.render(budgets.observation_budget),
                            answer_format=fmt)
    messages = [user(prompt)]
    reply = _planner_chat(gateway, messages, meter, "answer")
    if not q.is_multiple_choice:
        return Answer(None, reply.strip(), confidence_note, trajectory_ref)
    label = extract_choice(reply, q.labels)
    if label is None and meter.remaining() >= 1:
        listing = ", ".join(q.labels)
        messages += [assistant(reply), user(f"Your reply did not name a valid option. "
                                            f"Answer with exactly one of: {listing}.")]
        reply = _planner_chat(gateway, messages, meter, "answer")
        label = extract_choice(reply, q.labels) or prefix_match(reply, q)
    if label is None:
        raise AnswerExtractionFailure(f"no valid option label in final reply {reply[:120]!r}")
    return Answer(label, reply.strip(), confidence_note, trajectory_ref)


def default_episode_id(question: Question) -> str:
    if question.question_id:
        return re.sub(r"[^A-Za-z0-9_.#-]+", "_", question.question_id)
    return "q-" + hashlib.sha1(question.render().encode("utf-8")).hexdigest()[:12]


def build_log(episode_id: str, state: EpisodeState, budgets: Budgets, verdicts: Sequence[ReflectionVerdict],
              attempts: int, answer: Answer | None, gateway: Gateway, status: str,
              faults: Sequence[str], error: str | None = None) -> dict:
    traj = state.trajectory.to_dict()
    log = {
        "schema_version": LOG_SCHEMA_VERSION,
        "prompt_version": prompts.PROMPT_VERSION,
        "episode_id": episode_id,
        "status": status,
        "video_id": state.video.video_id,
        "question": state.question.to_dict(),
        "budgets": asdict(budgets),
        "steps": traj["steps"],
        "critiques": traj["critiques"],
        "verdicts": [asdict(v) for v in verdicts],
        "attempts_used": attempts,
        "steps_used": len(state.trajectory),
        "answer": answer.to_dict() if answer else None,
        "faults": list(faults),
        "token_totals": gateway.token_totals(),
    }
    if error:
        log["error"] = error
    return log


def write_log(log: dict, log_dir: str | Path | None) -> Optional[Path]:
    if log_dir is None:
        return None
    path = Path(log_dir)
    path.mkdir(parents=True, exist_ok=True)
    out = path / f"{log['episode_id']}.json"
    out.write_text(json.dumps(log, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return out


def run_episode(gateway: Gateway, question: Question, manifest: FrameManifest,
                subtitles: SubtitleTrack | None = None, budgets: Budgets | None = None,
                log_dir: str | Path | None = None, episode_id: str | None = None,
                fork_key: str | None = None, grounding_tool: str = "auto") -> EpisodeOutcome:
    """Answer one question about one video.

    The episode gets its own child gateway (forked by ``fork_key`` when given)
    so its token totals are its own. The log is written once, at the end or
    on abort.
    """
    budgets = budgets or gateway.budgets
    gw = gateway.fork(fork_key) if fork_key else gateway.child()
    episode_id = episode_id or default_episode_id(question)
    state = EpisodeState(question, Trajectory(), manifest, subtitles)
    # per attempt: inner_rounds planning steps plus one reprompt; one more call to answer
    meter = CallMeter(budgets.reflection_rounds * (budgets.inner_rounds + 1) + 1)
    verdicts: list[ReflectionVerdict] = []
    faults: list[str] = []
    attempts = 0
    try:
        while attempts < budgets.reflection_rounds:
            attempts += 1
            # one call stays in reserve for the final answer
            attempt_meter = CallMeter(min(budgets.inner_rounds + 1, int(meter.remaining()) - 1))
            proposed = None
            steps = 0
            while steps < budgets.inner_rounds:
                try:
                    action = plan_step(gw, state, budgets, attempt_meter)
                except PlanningParseFailure as e:
                    faults.append(f"attempt {attempts}: planning parse failure: {e}")
                    break
                if action.kind is AgentKind.TERMINATE:
                    if action.reason.startswith("fault:"):
                        faults.append(f"attempt {attempts}: {action.reason}")
                    proposed = action.instruct.strip() or None
                    break
                dispatch_action(gw, action, state, budgets, grounding_tool)
                steps += 1
            meter.used += attempt_meter.used
            verdict = reflect(gw, state, proposed or NO_PROPOSAL, budgets)
            verdicts.append(verdict)
            if verdict.credible:
                break
            state.trajectory.append_critique(verdict.comment, attempts)
        note = None if verdicts and verdicts[-1].credible else LOW_CONFIDENCE_NOTE
        answer = finalize_answer(gw, state, budgets, note, episode_id, meter)
    except (TransportError, AnswerExtractionFailure) as e:
        log = build_log(episode_id, state, budgets, verdicts, attempts, None, gw, "aborted", faults,
                        error=f"{type(e).__name__}: {e}")
        path = write_log(log, log_dir)
        raise EpisodeAborted(f"episode {episode_id} aborted: {e}", path, log) from e

    log = build_log(episode_id, state, budgets, verdicts, attempts, answer, gw, "completed", faults)
    path = write_log(log, log_dir)
    return EpisodeOutcome(answer, attempts, len(state.trajectory), verdicts, gw.token_totals(), path, log)
