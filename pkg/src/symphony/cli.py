"""Command-line entry point: ``symphony ask|ground|vote|bench|extract``.

Exit codes: 0 success, 1 episode failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import subprocess
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, EpisodeAborted, MediaError, SymphonyError
from .gateway import Gateway, GatewayConfig, ScriptedBackend, load_config
from .grounding import run_grounding
from .harness import load_dataset, run_bench, vote_ask
from .media import load_manifest, parse_subtitles, write_manifest
from .orchestrator import run_episode
from .types import make_question

logger = logging.getLogger("symphony")

EXIT_OK, EXIT_EPISODE, EXIT_USAGE = 0, 1, 2


def build_gateway(args: argparse.Namespace) -> Gateway:
    config = load_config(args.config) if args.config else GatewayConfig()
    if args.backend_script:
        try:
            backend = ScriptedBackend.from_file(args.backend_script)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot load backend script {args.backend_script}: {e}") from e
        return Gateway(backend, config)
    if not args.config:
        raise ConfigError("no backend configured: pass --config or --backend-script")
    return Gateway.from_config(config)


def _question(args: argparse.Namespace):
    return make_question(args.question, args.option or [], question_id=args.question_id or "")


def _inputs(args: argparse.Namespace):
    manifest = load_manifest(args.video)
    subtitles = parse_subtitles(args.subtitles) if args.subtitles else None
    return manifest, subtitles


def _emit(args: argparse.Namespace, payload: dict, lines: Sequence[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        print("\n".join(lines))


def cmd_ask(args: argparse.Namespace) -> int:
    gateway = build_gateway(args)
    manifest, subtitles = _inputs(args)
    out = run_episode(gateway, _question(args), manifest, subtitles, log_dir=args.log_dir)
    a = out.answer
    shown = a.choice_label if a.choice_label is not None else a.free_text
    lines = [f"Answer: {shown}"]
    if a.confidence_note:
        lines.append(f"Note: {a.confidence_note}")
    lines.append(f"Attempts: {out.attempts_used}  steps: {out.steps_used}")
    for i, step in enumerate(out.log["steps"], 1):
        lines.append(f"  {i}. {step['action']['agent']}: {step['action']['instruct'][:100]}")
    if out.log_path:
        lines.append(f"Log: {out.log_path}")
    _emit(args, {"answer": a.to_dict(), "attempts_used": out.attempts_used, "steps_used": out.steps_used,
                 "log_path": str(out.log_path) if out.log_path else None,
                 "token_totals": out.exchanges}, lines)
    return EXIT_OK


def cmd_vote(args: argparse.Namespace) -> int:
    gateway = build_gateway(args)
    manifest, subtitles = _inputs(args)
    v = vote_ask(gateway, _question(args), manifest, subtitles, k=args.k, log_dir=args.log_dir)
    a = v.answer
    shown = a.choice_label if a.choice_label is not None else a.free_text
    lines = [f"Answer: {shown}", f"Votes: {', '.join(k or '(aborted)' for k in v.keys)}"]
    if v.no_majority:
        lines.append("No strict majority; kept the first instance's answer.")
    _emit(args, {"answer": a.to_dict(), "votes": v.keys, "no_majority": v.no_majority,
                 "token_totals": v.token_totals}, lines)
    return EXIT_OK


def cmd_ground(args: argparse.Namespace) -> int:
    gateway = build_gateway(args)
    manifest, subtitles = _inputs(args)
    q = _question(args)
    result = run_grounding(gateway, q.render(), q, manifest, subtitles, tool=args.tool)
    payload = {"video_id": manifest.video_id, "question": q.to_dict(), **result.to_dict()}
    sidecar = Path(args.out) if args.out else None
    if sidecar is None and args.log_dir:
        sidecar = Path(args.log_dir) / f"grounding-{manifest.video_id}.json"
    if sidecar is not None:
        sidecar.parent.mkdir(parents=True, exist_ok=True)
        sidecar.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    lines = [result.report] + ([f"Saved: {sidecar}"] if sidecar else [])
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    gateway = build_gateway(args)
    items = load_dataset(args.dataset, args.format)
    if not items:
        raise ConfigError(f"dataset {args.dataset} is empty")
    report = run_bench(gateway, items, args.videos_root, args.out, jobs=args.jobs, vote_k=args.vote_k,
                       dataset_dir=Path(args.dataset).parent)
    _emit(args, {k: v for k, v in report.to_dict().items() if k != "items"},
          [report.summary(), f"Report: {Path(args.out) / 'report.json'}"])
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    """Decode a video file into JPEG frames at a fixed rate and write its manifest."""
    ffmpeg, ffprobe = shutil.which("ffmpeg"), shutil.which("ffprobe")
    if not ffmpeg or not ffprobe:
        raise ConfigError("extract needs ffmpeg and ffprobe on PATH")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    probe = subprocess.run([ffprobe, "-v", "error", "-show_entries", "format=duration", "-of",
                            "default=noprint_wrappers=1:nokey=1", args.video],
                           capture_output=True, text=True, check=True)
    duration_ms = int(float(probe.stdout.strip()) * 1000)
    subprocess.run([ffmpeg, "-v", "error", "-y", "-i", args.video, "-vf", f"fps={args.fps}",
                    "-q:v", "3", str(out / "frame_%06d.jpg")], check=True)
    step = 1000.0 / args.fps
    frames = []
    for i, p in enumerate(sorted(out.glob("frame_*.jpg"))):
        ms = int(round(i * step))
        if ms > duration_ms:
            p.unlink()
            continue
        frames.append((ms, p.name))
    video_id = args.video_id or Path(args.video).stem
    write_manifest(out, video_id, duration_ms, frames, source_fps=args.fps)
    print(f"Wrote {len(frames)} frames and manifest to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with role endpoints and budgets")
    common.add_argument("--backend-script", help="JSON script for the offline scripted backend")
    common.add_argument("--log-dir", help="directory for trajectory logs")
    common.add_argument("--json", action="store_true", help="print a machine-readable result")
    common.add_argument("-v", "--verbose", action="store_true")

    question = argparse.ArgumentParser(add_help=False)
    question.add_argument("--video", required=True, help="frame directory holding manifest.json")
    question.add_argument("--question", "-q", required=True)
    question.add_argument("--option", "-o", action="append",
                          help='answer option such as "A. cooking"; repeat per option')
    question.add_argument("--subtitles", help="SRT or WebVTT file")
    question.add_argument("--question-id")

    p = argparse.ArgumentParser(prog="symphony", description="Long-video question answering with cooperating agents.")
    sub = p.add_subparsers(dest="command", required=True)

    ask = sub.add_parser("ask", parents=[common, question], help="answer one question")
    ask.set_defaults(func=cmd_ask)

    vote = sub.add_parser("vote", parents=[common, question], help="answer by majority over k runs")
    vote.add_argument("-k", type=int, default=3)
    vote.set_defaults(func=cmd_vote)

    ground = sub.add_parser("ground", parents=[common, question], help="localize relevant segments only")
    ground.add_argument("--tool", choices=["auto", "retrieve", "vlm"], default="auto")
    ground.add_argument("--out", help="where to write the grounding JSON")
    ground.set_defaults(func=cmd_ground)

    bench = sub.add_parser("bench", parents=[common], help="evaluate a JSONL dataset")
    bench.add_argument("--dataset", required=True)
    bench.add_argument("--videos-root", required=True)
    bench.add_argument("--out", required=True, help="output directory for ledger, logs and report")
    bench.add_argument("--format", choices=["native", "lvbench"], default="native")
    bench.add_argument("--jobs", type=int, default=1)
    bench.add_argument("--vote-k", type=int, default=1)
    bench.set_defaults(func=cmd_bench)

    extract = sub.add_parser("extract", parents=[common], help="decode a video into frames")
    extract.add_argument("--video", required=True, help="video file")
    extract.add_argument("--out", required=True)
    extract.add_argument("--fps", type=float, default=0.5)
    extract.add_argument("--video-id")
    extract.set_defaults(func=cmd_extract)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EpisodeAborted as e:
        print(f"error: {e}", file=sys.stderr)
        if e.log_path:
            print(f"log: {e.log_path}", file=sys.stderr)
        return EXIT_EPISODE
    except (ConfigError, MediaError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SymphonyError, subprocess.CalledProcessError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_EPISODE


if __name__ == "__main__":
    sys.exit(main())
