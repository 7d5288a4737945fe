"""Run a tiny benchmark and a three-way vote, both offline."""

# %%
import json
import tempfile
from pathlib import Path

from symphony import (Gateway, ScriptedBackend, load_dataset, load_manifest, make_question, run_bench,
                      vote_ask)
from symphony.synthetic import make_video

root = Path(tempfile.mkdtemp(prefix="symphony-bench-"))
for vid in ("va", "vb"):
    make_video(root / "videos" / vid, vid, duration_s=60, fps=0.5)

rows = [
    {"video_id": "va", "question_id": "q1", "question": "Q1?", "options": ["A. a", "B. b"],
     "answer": "A", "category": "Rea"},
    {"video_id": "va", "question_id": "q2", "question": "Q2?", "options": ["A. a", "B. b"],
     "answer": "B", "category": "Rea"},
    {"video_id": "vb", "question_id": "q3", "question": "Q3?", "options": ["A. a", "B. b"],
     "answer": "A", "category": "Sum"},
]
(root / "data.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))


def answering(label):
    return {"planner/plan": json.dumps({"reason": "done", "agent": "finish", "instruct": label}),
            "reflector": json.dumps({"credible": True, "comment": None}),
            "planner/answer": f"The answer is ({label})"}


# %%
# Each question id gets its own forked script; q3 is answered wrongly.
script = {"forks": {"q1": answering("A"), "q2": answering("B"), "q3": answering("B")}}
report = run_bench(Gateway(ScriptedBackend(script)), load_dataset(root / "data.jsonl"),
                   root / "videos", root / "out", jobs=2)
print(report.summary())

# %%
# Re-running the same out dir skips everything already in completed.jsonl.
again = run_bench(Gateway(ScriptedBackend(script)), load_dataset(root / "data.jsonl"),
                  root / "videos", root / "out")
print("skipped from ledger:", again.skipped_from_ledger)

# %%
# Voting: three independent episodes, majority label wins.
video = load_manifest(root / "videos" / "va")
gw = Gateway(ScriptedBackend({"forks": {"vote0": answering("B"), "vote1": answering("A"),
                                        "vote2": answering("B")}}))
voted = vote_ask(gw, make_question("Q?", ["A. a", "B. b"], question_id="v"), video, k=3)
print("votes:", voted.keys, "->", voted.answer.choice_label, "(no majority)" if voted.no_majority else "")
