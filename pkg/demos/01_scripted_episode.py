"""Walk through one question-answering episode, fully offline.

The scripted backend stands in for every model, so the run is
deterministic. Swap in ``Gateway.from_config(load_config("models.yaml"))``
to talk to real OpenAI-compatible servers instead.
"""

# %%
import json
import tempfile
from pathlib import Path

from symphony import Gateway, ScriptedBackend, make_question, run_episode
from symphony.synthetic import make_video

work = Path(tempfile.mkdtemp(prefix="symphony-demo-"))
video = make_video(work / "kitchen", "kitchen", duration_s=180, fps=1.0)
print(f"{video.video_id}: {len(video.frames)} frames, {video.duration}")

# %%
# The planner first asks for grounding, then a closer look, then finishes.
# On the first attempt the reflector pushes back once.


def plan(agent, instruct, reason="next step"):
    return json.dumps({"reason": reason, "agent": agent, "instruct": instruct})


script = {
    "planner/plan": [
        plan("Grounding Agent", "Find when the person stands at the stove."),
        plan("finish", "B"),
        plan("Visual Perception Agent", "What is the person doing at 00:01:00-00:01:30?"),
        plan("finish", "C"),
    ],
    "reflector": [
        json.dumps({"credible": False, "comment": "the stove scene was never inspected"}),
        json.dumps({"credible": True, "comment": None}),
    ],
    "planner/answer": "The answer is (C).",
    "vlm/grounding_agent": [
        json.dumps({"tool": "retrieve_tool", "args": {"cue": "person at a stove"}}),
        json.dumps({"tool": "finish", "args": {"answer": "The stove scene is near 00:01:00."}}),
    ],
    "vlm/perception_agent": [
        json.dumps({"tool": "frame_inspector",
                    "args": {"time_range": ["00:01:00", "00:01:30"], "cue": "stove"}}),
        "[answer] The person stirs a pot; they are cooking.",
    ],
    "vlm/frame_inspector": "A person stirs a pot on a stove.",
    "embedder": {"dim": 16},
}

# %%
question = make_question("What is the person doing?",
                         ["A. sleeping", "B. reading", "C. cooking", "D. running"],
                         question_id="demo-1")
outcome = run_episode(Gateway(ScriptedBackend(script)), question, video, log_dir=work / "logs")

print("answer:", outcome.answer.choice_label)
print("attempts:", outcome.attempts_used, "steps:", outcome.steps_used)
for v in outcome.verdicts:
    print("  verdict:", "credible" if v.credible else f"not credible ({v.comment})")

# %%
# Every step, critique and verdict lands in the episode log.
log = json.loads(outcome.log_path.read_text())
for step in log["steps"]:
    print(step["action"]["agent"], "->", step["observation"]["text"].splitlines()[0])
print("log written to", outcome.log_path)
