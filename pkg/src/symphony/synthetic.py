"""Synthetic videos for offline runs: solid-color JPEG frames plus a manifest.

Each frame is a tiny image whose color encodes its timestamp, so sampling
and batching can be checked without real footage.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Optional

from PIL import Image

from .media import FrameManifest, load_manifest, write_manifest


def default_color(ms: int) -> tuple[int, int, int]:
    s = ms // 1000
    return (s * 37 % 256, s * 11 % 256, (s // 60) * 53 % 256)


def make_video(root: str | Path, video_id: str, duration_s: float, fps: float = 1.0,
               size: tuple[int, int] = (32, 24),
               color: Optional[Callable[[int], tuple[int, int, int]]] = None) -> FrameManifest:
    """Write frames at ``fps`` covering ``[0, duration_s)`` and return the loaded manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    color = color or default_color
    duration_ms = int(round(duration_s * 1000))
    step_ms = 1000.0 / fps
    frames = []
    i = 0
    while round(i * step_ms) < duration_ms:
        ms = int(round(i * step_ms))
        name = f"{ms}.jpg"
        Image.new("RGB", size, color(ms)).save(root / name, format="JPEG", quality=80)
        frames.append((ms, name))
        i += 1
    write_manifest(root, video_id, duration_ms, frames, source_fps=fps)
    return load_manifest(root)


def write_srt(path: str | Path, cues: list[tuple[float, float, str]]) -> Path:
    """Write an SRT file from ``(start_s, end_s, text)`` triples."""

    def stamp(t: float) -> str:
        ms = int(round(t * 1000))
        h, rem = divmod(ms, 3_600_000)
        m, rem = divmod(rem, 60_000)
        s, ms = divmod(rem, 1000)
        return f"{h:02d}:{m:02d}:{s:02d},{ms:03d}"

    blocks = [f"{i}\n{stamp(a)} --> {stamp(b)}\n{text}\n" for i, (a, b, text) in enumerate(cues, 1)]
    path = Path(path)
    path.write_text("\n".join(blocks), encoding="utf-8")
    return path
