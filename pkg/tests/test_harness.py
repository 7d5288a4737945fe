import itertools
import json

import pytest

from symphony.errors import EpisodeAborted
from symphony.gateway import Gateway, ScriptedBackend
from symphony.harness import BenchItem, load_dataset, majority_vote, run_bench, vote_ask
from symphony.orchestrator import run_episode
from symphony.synthetic import make_video
from symphony.types import make_question

from conftest import plan, verdict


def answering(label):
    """Minimal episode script: finish at once, credible, answer ``label``."""
    return {"planner/plan": plan("finish", label), "reflector": verdict(True),
            "planner/answer": f"The answer is ({label})"}


def oracle_vote(keys):
    """Brute force: label with the highest count, earliest first occurrence on ties."""
    best, best_n = None, -1
    for k in keys:
        n = keys.count(k)
        if n > best_n:
            best, best_n = k, n
    return best, not best_n * 2 > len(keys)


def test_vote_all_triples_match_oracle():
    for triple in itertools.product("ABC", repeat=3):
        got = majority_vote(list(triple))
        counts = {k: triple.count(k) for k in triple}
        strict = [k for k, n in counts.items() if n >= 2]
        expected = (strict[0], False) if strict else (triple[0], True)
        assert got == expected == oracle_vote(list(triple)), triple


def test_vote_five_way_invariant():
    for keys in itertools.product("ABCDE", repeat=5):
        winner, no_majority = majority_vote(list(keys))
        counts = {k: keys.count(k) for k in keys}
        top = max(counts.values())
        assert counts[winner] == top
        assert keys.index(winner) == min(keys.index(k) for k, n in counts.items() if n == top)
        assert no_majority == (top <= 2)


def test_vote_excludes_aborted():
    assert majority_vote([None, "B", "B"]) == ("B", False)
    assert majority_vote([None, "A", "B"]) == ("A", True)
    assert majority_vote([None, None]) == (None, True)


def test_vote_ask_concurrent_instances(mcq, video3):
    gw = Gateway(ScriptedBackend({"forks": {"vote0": answering("C"), "vote1": answering("B"),
                                            "vote2": answering("C")}}))
    out = vote_ask(gw, mcq, video3, k=3)
    assert out.answer.choice_label == "C" and not out.no_majority
    assert out.keys == ["C", "B", "C"]
    assert out.token_totals["planner"]["calls"] == 6


def test_vote_ask_no_majority_and_abort(mcq, video3):
    gw = Gateway(ScriptedBackend({"forks": {"vote0": answering("A"), "vote1": answering("B"),
                                            "vote2": answering("C")}}))
    out = vote_ask(gw, mcq, video3, k=3)
    assert out.answer.choice_label == "A" and out.no_majority

    broken = {"planner/plan": {"default": {"error": 400}}}
    gw = Gateway(ScriptedBackend({"forks": {"vote0": broken, "vote1": answering("B"),
                                            "vote2": answering("B")}}))
    out = vote_ask(gw, mcq, video3, k=3)
    assert out.keys == [None, "B", "B"] and out.answer.choice_label == "B"

    gw = Gateway(ScriptedBackend({"forks": {"vote0": broken, "vote1": broken, "vote2": broken}}))
    with pytest.raises(EpisodeAborted):
        vote_ask(gw, mcq, video3, k=3)


def test_vote_k_one_matches_single_episode(mcq, video3):
    gw = Gateway(ScriptedBackend(answering("D")))
    assert vote_ask(gw, mcq, video3, k=1).answer.choice_label == \
        run_episode(Gateway(ScriptedBackend(answering("D"))), mcq, video3).answer.choice_label
    with pytest.raises(ValueError):
        vote_ask(gw, mcq, video3, k=2)


# bench


@pytest.fixture(scope="module")
def bench_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    videos = root / "videos"
    make_video(videos / "va", "va", 60, fps=0.5)
    make_video(videos / "vb", "vb", 60, fps=0.5)
    rows = [
        {"video_id": "va", "question_id": "q1", "question": "Q1?", "options": ["A. a", "B. b"],
         "answer": "A", "category": "Rea"},
        {"video_id": "va", "question_id": "q2", "question": "Q2?", "options": ["A. a", "B. b"],
         "answer": "B", "category": "Rea"},
        {"video_id": "vb", "question_id": "q3", "question": "Q3?", "options": ["A. a", "B. b"],
         "answer": "A", "category": "Sum"},
        {"video_id": "vb", "question_id": "q4", "question": "Q4?", "options": ["A. a", "B. b"],
         "answer": "A", "category": "Sum"},
    ]
    dataset = root / "data.jsonl"
    dataset.write_text("".join(json.dumps(r) + "\n" for r in rows))
    # q4 is answered wrongly
    script = {"forks": {"q1": answering("A"), "q2": answering("B"), "q3": answering("A"),
                        "q4": answering("B")}}
    return videos, dataset, script


def test_bench_accuracy_and_categories(bench_env, tmp_path):
    videos, dataset, script = bench_env
    items = load_dataset(dataset)
    report = run_bench(Gateway(ScriptedBackend(script)), items, videos, tmp_path, jobs=2)
    assert report.overall_accuracy == 0.75
    assert report.per_category == {"Rea": {"correct": 2, "total": 2, "accuracy": 1.0},
                                   "Sum": {"correct": 1, "total": 2, "accuracy": 0.5}}
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["schema_version"] == 1 and [i["question_id"] for i in doc["items"]] == ["q1", "q2", "q3", "q4"]
    assert (tmp_path / "summary.txt").read_text().startswith("items: 4  accuracy: 0.7500")
    assert len(list((tmp_path / "logs").glob("*.json"))) == 4


def test_bench_resume_skips_completed(bench_env, tmp_path):
    videos, dataset, script = bench_env
    items = load_dataset(dataset)
    run_bench(Gateway(ScriptedBackend(script)), items[:2], videos, tmp_path)  # "interrupted" after item 2
    backend = ScriptedBackend(script)
    seen = []
    orig_fork = backend.fork
    backend.fork = lambda key: seen.append(key) or orig_fork(key)
    report = run_bench(Gateway(backend), items, videos, tmp_path)
    assert seen == ["q3", "q4"]
    assert report.skipped_from_ledger == 2 and report.overall_accuracy == 0.75
    assert len((tmp_path / "completed.jsonl").read_text().splitlines()) == 4


def test_bench_deterministic_modulo_wall_time(bench_env, tmp_path):
    videos, dataset, script = bench_env
    items = load_dataset(dataset)
    docs = []
    for name in ("one", "two"):
        run_bench(Gateway(ScriptedBackend(script)), items, videos, tmp_path / name, jobs=3)
        doc = json.loads((tmp_path / name / "report.json").read_text())
        doc.pop("wall_time_s")
        docs.append(doc)
    assert docs[0] == docs[1]


def test_bench_item_failure_recorded(bench_env, tmp_path):
    videos, _, script = bench_env
    items = [BenchItem("missing", make_question("Q?", ["A. a", "B. b"], "qx", "Rea"), "A")]
    report = run_bench(Gateway(ScriptedBackend(script)), items, videos, tmp_path)
    rec = report.records[0]
    assert not rec["correct"] and rec["error"].startswith("media:")
    assert report.overall_accuracy == 0.0


def test_bench_item_gold_must_be_an_option():
    with pytest.raises(ValueError):
        BenchItem("v", make_question("Q?", ["A. a", "B. b"]), "C")


def test_lvbench_adapter(tmp_path):
    line = {"key": "vid1", "qa": [
        {"uid": "u1", "question": "What happens first?\n(A) rain\n(B) sun\n(C) snow\n(D) wind",
         "answer": "B", "question_type": ["event understanding"]},
        {"uid": "u2", "question": "Who speaks?\n(A) he\n(B) she", "answer": "A", "question_type": ["reasoning"]},
    ]}
    p = tmp_path / "lv.jsonl"
    p.write_text(json.dumps(line) + "\n")
    items = load_dataset(p, "lvbench")
    assert [i.question.question_id for i in items] == ["u1", "u2"]
    assert items[0].question.text == "What happens first?"
    assert items[0].question.labels == ["A", "B", "C", "D"] and items[0].answer_label == "B"
    assert items[1].question.category == "reasoning" and items[1].video_id == "vid1"


def test_dataset_duplicate_ids_rejected(tmp_path):
    row = {"video_id": "v", "question_id": "same", "question": "Q?", "options": ["a", "b"], "answer": "A"}
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")
    with pytest.raises(ValueError):
        load_dataset(p)
