"""Self-consistency voting and the resumable benchmark runner."""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import EpisodeAborted, MediaError, SymphonyError
from .gateway import Gateway
from .media import FrameManifest, SubtitleTrack, load_manifest, parse_subtitles
from .orchestrator import EpisodeOutcome, default_episode_id, run_episode
from .types import Answer, Budgets, Option, Question, make_question

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
LEDGER_NAME = "completed.jsonl"
UNCATEGORIZED = "uncategorized"


def vote_key(answer: Answer) -> str:
    if answer.choice_label is not None:
        return answer.choice_label
    return re.sub(r"\s+", " ", answer.free_text).strip().lower()


def majority_vote(keys: Sequence[Optional[str]]) -> tuple[Optional[str], bool]:
    """Pick the most common key; ``None`` entries are aborted instances.

    Ties go to the key whose first occurrence was launched earliest. The flag
    is True when the winner does not hold a strict majority of the instances
    that finished.
    """
    live = [k for k in keys if k is not None]
    if not live:
        return None, True
    counts = Counter(live)
    best = max(counts.values())
    winner = next(k for k in live if counts[k] == best)
    return winner, best * 2 <= len(live)


@dataclass
class VoteOutcome:
    answer: Answer
    no_majority: bool
    keys: list[Optional[str]]
    outcomes: list[Optional[EpisodeOutcome]]

    @property
    def token_totals(self) -> dict[str, dict[str, int]]:
        return merge_totals(o.exchanges for o in self.outcomes if o is not None)


def merge_totals(parts) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = defaultdict(lambda: {"calls": 0, "prompt_tokens": 0,
                                                          "completion_tokens": 0})
    for totals in parts:
        for role, t in totals.items():
            for k, v in t.items():
                out[role][k] = out[role].get(k, 0) + v
    return {r: dict(v) for r, v in sorted(out.items())}


def vote_ask(gateway: Gateway, question: Question, manifest: FrameManifest,
             subtitles: SubtitleTrack | None = None, k: int = 3, budgets: Budgets | None = None,
             log_dir: str | Path | None = None, episode_id: str | None = None) -> VoteOutcome:
    """Run ``k`` independent episodes concurrently and vote on their answers."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"vote needs an odd k >= 1, got {k}")
    base = episode_id or default_episode_id(question)

    def one(i: int) -> Optional[EpisodeOutcome]:
        try:
            return run_episode(gateway, question, manifest, subtitles, budgets, log_dir,
                               episode_id=f"{base}#vote{i}", fork_key=f"{base}#vote{i}")
        except EpisodeAborted as e:
            logger.warning("vote instance %d aborted: %s", i, e)
            return None

    with ThreadPoolExecutor(max_workers=k) as pool:
        outcomes = list(pool.map(one, range(k)))
    keys = [vote_key(o.answer) if o else None for o in outcomes]
    winner, no_majority = majority_vote(keys)
    if winner is None:
        raise EpisodeAborted(f"all {k} vote instances of {base} aborted")
    chosen = next(o for o, key in zip(outcomes, keys) if key == winner)
    return VoteOutcome(chosen.answer, no_majority, keys, outcomes)


@dataclass(frozen=True)
class BenchItem:
    video_id: str
    question: Question
    answer_label: Optional[str]
    subtitle_path: Optional[str] = None

    def __post_init__(self):
        q = self.question
        if q.is_multiple_choice and self.answer_label is not None and self.answer_label not in q.labels:
            raise ValueError(f"gold label {self.answer_label!r} of {q.question_id} is not one of {q.labels}")


def _native_item(d: dict, index: int) -> BenchItem:
    options = d.get("options") or []
    q_id = str(d.get("question_id") or f"item-{index}")
    if options and isinstance(options[0], dict):
        q = Question(d["question"], tuple(Option(str(o["label"]), str(o["text"])) for o in options),
                     q_id, d.get("category"))
    else:
        q = make_question(d["question"], [str(o) for o in options], q_id, d.get("category"))
    return BenchItem(str(d["video_id"]), q, d.get("answer"), d.get("subtitle_path"))


_LV_OPTION = re.compile(r"^\s*\(([A-Z])\)\s*(.*)$")


def _lvbench_items(d: dict, index: int) -> list[BenchItem]:
    """One annotation line: ``{"key": video, "qa": [{"uid", "question", "answer", "question_type"}]}``.

    Options are embedded in the question text as ``(A) ...`` lines.
    """
    video_id = str(d.get("key") or d.get("video_id"))
    items = []
    for j, qa in enumerate(d.get("qa") or [d]):
        stem, options = [], []
        for line in str(qa["question"]).splitlines():
            m = _LV_OPTION.match(line)
            if m:
                options.append(Option(m.group(1), m.group(2).strip()))
            elif line.strip():
                stem.append(line.strip())
        qtype = qa.get("question_type")
        category = qtype[0] if isinstance(qtype, list) and qtype else qtype
        q_id = str(qa.get("uid") or f"{video_id}-{index}-{j}")
        items.append(BenchItem(video_id, Question(" ".join(stem), tuple(options), q_id, category),
                               qa.get("answer")))
    return items


def load_dataset(path: str | Path, fmt: str = "native") -> list[BenchItem]:
    """Read a JSONL dataset. ``fmt`` is ``"native"`` or ``"lvbench"``."""
    items: list[BenchItem] = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            d = json.loads(line)
            if fmt == "native":
                items.append(_native_item(d, i))
            elif fmt == "lvbench":
                items.extend(_lvbench_items(d, i))
            else:
                raise ValueError(f"unknown dataset format {fmt!r}")
    ids = [it.question.question_id for it in items]
    dupes = sorted(k for k, n in Counter(ids).items() if n > 1)
    if dupes:
        raise ValueError(f"duplicate question ids in {path}: {dupes[:5]}")
    return items


def read_ledger(out_dir: str | Path) -> dict[str, dict]:
    path = Path(out_dir) / LEDGER_NAME
    done: dict[str, dict] = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                done[rec["question_id"]] = rec
    return done


def _find_subtitles(item: BenchItem, videos_root: Path, dataset_dir: Path | None) -> Optional[SubtitleTrack]:
    if item.subtitle_path:
        p = Path(item.subtitle_path)
        if not p.is_absolute() and dataset_dir is not None:
            p = dataset_dir / p
        return parse_subtitles(p)
    for name in ("subtitles.srt", "subtitles.vtt"):
        p = videos_root / item.video_id / name
        if p.exists():
            return parse_subtitles(p)
    return None


def run_item(gateway: Gateway, item: BenchItem, videos_root: Path, dataset_dir: Path | None = None,
             budgets: Budgets | None = None, log_dir: Path | None = None, vote_k: int = 1) -> dict:
    """Answer one item and return its ledger record. Never raises for item-level failures."""
    q = item.question
    rec = {"question_id": q.question_id, "video_id": item.video_id,
           "category": q.category or UNCATEGORIZED, "gold": item.answer_label, "predicted": None,
           "correct": False, "error": None, "token_totals": {}}
    key = q.question_id
    try:
        manifest = load_manifest(videos_root / item.video_id)
        subtitles = _find_subtitles(item, videos_root, dataset_dir)
        if vote_k > 1:
            vote = vote_ask(gateway, q, manifest, subtitles, vote_k, budgets, log_dir, episode_id=key)
            answer, totals = vote.answer, vote.token_totals
            rec["no_majority"] = vote.no_majority
        else:
            out = run_episode(gateway, q, manifest, subtitles, budgets, log_dir, episode_id=key,
                              fork_key=key)
            answer, totals = out.answer, out.exchanges
            rec["confidence_note"] = answer.confidence_note
    except (SymphonyError, OSError) as e:
        kind = "media" if isinstance(e, (MediaError, OSError)) else "episode"
        rec["error"] = f"{kind}: {type(e).__name__}: {e}"
        logger.warning("item %s failed: %s", key, rec["error"])
        return rec
    rec["predicted"] = answer.choice_label if q.is_multiple_choice else answer.free_text
    rec["token_totals"] = totals
    if item.answer_label is not None and rec["predicted"] is not None:
        if q.is_multiple_choice:
            rec["correct"] = rec["predicted"].upper() == str(item.answer_label).strip().upper()
        else:
            rec["correct"] = vote_key(answer) == str(item.answer_label).strip().lower()
    return rec


@dataclass
class BenchReport:
    n_items: int
    overall_accuracy: float
    per_category: dict[str, dict]
    token_totals: dict[str, dict[str, int]]
    wall_time_s: float
    skipped_from_ledger: int
    records: list[dict] = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "n_items": self.n_items,
            "overall_accuracy": self.overall_accuracy,
            "per_category": self.per_category,
            "token_totals": self.token_totals,
            "wall_time_s": round(self.wall_time_s, 3),
            "skipped_from_ledger": self.skipped_from_ledger,
            "items": self.records,
        }

    def summary(self) -> str:
        lines = [f"items: {self.n_items}  accuracy: {self.overall_accuracy:.4f}"]
        for cat, c in self.per_category.items():
            lines.append(f"  {cat}: {c['correct']}/{c['total']} = {c['accuracy']:.4f}")
        for role, t in self.token_totals.items():
            lines.append(f"  tokens[{role}]: calls={t['calls']} prompt={t['prompt_tokens']} "
                         f"completion={t['completion_tokens']}")
        return "\n".join(lines)


def summarize(records: Sequence[dict], wall_time_s: float = 0.0, skipped: int = 0) -> BenchReport:
    per: dict[str, dict] = {}
    for r in records:
        c = per.setdefault(r["category"], {"correct": 0, "total": 0})
        c["total"] += 1
        c["correct"] += int(bool(r["correct"]))
    for c in per.values():
        c["accuracy"] = c["correct"] / c["total"]
    total = len(records)
    acc = sum(bool(r["correct"]) for r in records) / total if total else 0.0
    return BenchReport(total, acc, dict(sorted(per.items())),
                       merge_totals(r.get("token_totals") or {} for r in records),
                       wall_time_s, skipped, list(records))


def run_bench(gateway: Gateway, items: Sequence[BenchItem], videos_root: str | Path, out_dir: str | Path,
              jobs: int = 1, vote_k: int = 1, budgets: Budgets | None = None,
              dataset_dir: str | Path | None = None) -> BenchReport:
    """Run every item not already in the ledger, then write ``report.json``.

    Each finished item is appended to ``completed.jsonl`` as soon as it
    completes, so an interrupted run resumes where it stopped.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_dir = out / "logs"
    videos_root = Path(videos_root)
    ds_dir = Path(dataset_dir) if dataset_dir else None
    done = read_ledger(out)
    todo = [it for it in items if it.question.question_id not in done]
    skipped = len(items) - len(todo)
    lock = threading.Lock()
    t0 = time.monotonic()

    def work(item: BenchItem) -> dict:
        rec = run_item(gateway, item, videos_root, ds_dir, budgets, log_dir, vote_k)
        with lock, open(out / LEDGER_NAME, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return rec

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        for rec in pool.map(work, todo):
            done[rec["question_id"]] = rec
    records = [done[it.question.question_id] for it in items]
    report = summarize(records, time.monotonic() - t0, skipped)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n",
                                     encoding="utf-8")
    (out / "summary.txt").write_text(report.summary() + "\n", encoding="utf-8")
    return report
