"""Read-only access to pre-extracted frames and subtitle files, plus the
segmentation and sampling arithmetic every agent relies on.

The engine never decodes video. A video is a directory holding
``manifest.json`` and one JPEG per extracted frame::

    {"schema_version": 1, "video_id": "abc", "duration_ms": 4080000,
     "source_fps": 0.5, "frames": [{"ms": 0, "file": "0.jpg"}, ...]}

When ``frames`` is omitted the index is built from files named ``<millis>.jpg``.
"""

from __future__ import annotations

import bisect
import io
import json
import logging
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

from PIL import Image

from .errors import (EmptyFrameSet, MalformedSubtitleFile, MediaError, MissingManifest,
                     TimestampBeyondDuration)
from .types import TimeRange, Timecode, format_timecode

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA_VERSION = 1
MAX_SHORT_SIDE = 720  # 720p cap
TAIL_MERGE_MS = 5000


class Frame(NamedTuple):
    ms: int
    path: Path

    @property
    def timecode(self) -> str:
        return format_timecode(self.ms)


@dataclass(frozen=True)
class FrameManifest:
    video_id: str
    duration: Timecode
    frames: tuple[Frame, ...]
    source_fps: Optional[float] = None
    root: Optional[Path] = None

    def __post_init__(self):
        if not self.frames:
            raise EmptyFrameSet(f"video {self.video_id!r} has no frames")
        times = [f.ms for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise MediaError(f"video {self.video_id!r}: frame timestamps must be strictly increasing")
        if times[-1] > self.duration.millis:
            raise TimestampBeyondDuration(
                f"frame at {times[-1]} ms lies beyond duration {self.duration.millis} ms")
        object.__setattr__(self, "_times", times)

    @property
    def duration_ms(self) -> int:
        return self.duration.millis

    @property
    def full_range(self) -> TimeRange:
        return TimeRange.from_ms(0, self.duration.millis)

    @property
    def times(self) -> list[int]:
        return self._times  # type: ignore[attr-defined]

    def frames_in(self, rng: TimeRange) -> list[Frame]:
        lo = bisect.bisect_left(self.times, rng.start_ms)
        hi = bisect.bisect_left(self.times, rng.end_ms)
        return list(self.frames[lo:hi])

    def nearest(self, ms: float, rng: TimeRange | None = None) -> Optional[Frame]:
        """Frame closest to ``ms``; ties go to the earlier frame. With ``rng``
        only frames inside the range are candidates."""
        if rng is None:
            lo, hi = 0, len(self.frames)
        else:
            lo = bisect.bisect_left(self.times, rng.start_ms)
            hi = bisect.bisect_left(self.times, rng.end_ms)
        if lo >= hi:
            return None
        i = bisect.bisect_left(self.times, ms, lo, hi)
        if i == lo:
            return self.frames[lo]
        if i == hi:
            return self.frames[hi - 1]
        before, after = self.frames[i - 1], self.frames[i]
        return before if ms - before.ms <= after.ms - ms else after


def load_manifest(path: str | Path) -> FrameManifest:
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    numbered = _numbered_frames(root) if root.is_dir() else []
    if not manifest_path.exists():
        if not numbered:
            raise EmptyFrameSet(f"{root} holds neither {MANIFEST_NAME} nor any frames")
        raise MissingManifest(f"{manifest_path} not found")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        duration_ms = int(doc["duration_ms"])
    except (ValueError, KeyError, TypeError) as e:
        raise MissingManifest(f"{manifest_path} is not a valid manifest: {e}") from e

    if "frames" in doc:
        frames = [Frame(int(f["ms"]), root / f["file"]) for f in doc["frames"]]
    else:
        frames = numbered
    if not frames:
        raise EmptyFrameSet(f"{root} has an empty frame index")
    frames.sort(key=lambda f: f.ms)
    return FrameManifest(
        video_id=str(doc.get("video_id") or root.name),
        duration=Timecode(duration_ms),
        frames=tuple(frames),
        source_fps=doc.get("source_fps"),
        root=root,
    )


def _numbered_frames(root: Path) -> list[Frame]:
    out = []
    for p in root.glob("*.jpg"):
        if p.stem.isdigit():
            out.append(Frame(int(p.stem), p))
    return sorted(out)


def write_manifest(root: str | Path, video_id: str, duration_ms: int,
                   frames: Sequence[tuple[int, str]], source_fps: float | None = None) -> Path:
    """Write ``manifest.json`` for frames already present under ``root``."""
    root = Path(root)
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "video_id": video_id,
        "duration_ms": int(duration_ms),
        "frames": [{"ms": int(ms), "file": name} for ms, name in sorted(frames)],
    }
    if source_fps is not None:
        doc["source_fps"] = source_fps
    out = root / MANIFEST_NAME
    out.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return out


def load_image_bytes(frame: Frame, max_short_side: int = MAX_SHORT_SIDE) -> tuple[bytes, str]:
    """Return (bytes, mime) for a frame, downscaled so its shorter side is at
    most ``max_short_side``. Small JPEGs pass through byte-for-byte."""
    raw = Path(frame.path).read_bytes()
    with Image.open(io.BytesIO(raw)) as img:
        w, h = img.size
        if min(w, h) <= max_short_side and img.format == "JPEG":
            return raw, "image/jpeg"
        scale = min(1.0, max_short_side / min(w, h))
        size = (max(1, round(w * scale)), max(1, round(h * scale)))
        out = img.convert("RGB").resize(size, Image.BICUBIC) if scale < 1 else img.convert("RGB")
        buf = io.BytesIO()
        out.save(buf, format="JPEG", quality=90)
        return buf.getvalue(), "image/jpeg"


# segmentation


def partition_segments(duration: Timecode | int, segment_s: int | float) -> list[TimeRange]:
    """Tile ``[0, duration)`` with consecutive ``segment_s`` ranges.

    The last range may be shorter. A remainder under 5 s is folded into the
    previous range when there is one.
    """
    d = duration.millis if isinstance(duration, Timecode) else int(duration)
    seg = int(round(segment_s * 1000))
    if d <= 0 or seg <= 0:
        raise ValueError("duration and segment length must be positive")
    bounds = list(range(0, d, seg)) + [d]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < TAIL_MERGE_MS:
        del bounds[-2]
    return [TimeRange.from_ms(a, b) for a, b in zip(bounds, bounds[1:])]


def clip_windows(duration: Timecode | int, window_s: int | float) -> list[TimeRange]:
    return partition_segments(duration, window_s)


# sampling


def thin_uniform(items: Sequence, cap: int) -> list:
    """Keep ``cap`` evenly spread items, always including both ends."""
    n = len(items)
    if n <= cap:
        return list(items)
    if cap == 1:
        return [items[(n - 1) // 2]]
    idx = [math.floor(j * (n - 1) / (cap - 1) + 0.5) for j in range(cap)]
    return [items[i] for i in idx]


def sample_uniform(rng: TimeRange, n: int, manifest: FrameManifest) -> list[Frame]:
    """Up to ``n`` frames nearest to the midpoints of ``n`` equal slices of ``rng``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    available = manifest.frames_in(rng)
    if len(available) <= n:
        return available
    length = rng.duration_ms
    picked = {}
    for i in range(n):
        t = rng.start_ms + (i + 0.5) * length / n
        f = manifest.nearest(t, rng)
        picked[f.ms] = f
    return [picked[k] for k in sorted(picked)]


def fps_targets(rng: TimeRange, fps: float) -> list[float]:
    """Timestamps start, start + 1/fps, ... strictly below the range end."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    step = Fraction(1000) / Fraction(repr(float(fps)))
    count = math.ceil(Fraction(rng.duration_ms) / step)
    return [float(rng.start_ms + k * step) for k in range(count)]


def sample_fps(rng: TimeRange, fps: float, cap: int, manifest: FrameManifest) -> list[Frame]:
    if cap < 1:
        raise ValueError("cap must be >= 1")
    picked = {}
    for t in fps_targets(rng, fps):
        f = manifest.nearest(t, rng)
        if f is not None:
            picked[f.ms] = f
    frames = [picked[k] for k in sorted(picked)]
    return thin_uniform(frames, cap)


# subtitles


@dataclass(frozen=True)
class SubtitleCue:
    range: TimeRange
    text: str


@dataclass(frozen=True)
class SubtitleTrack:
    cues: tuple[SubtitleCue, ...] = ()

    def __len__(self) -> int:
        return len(self.cues)

    def split(self) -> tuple["SubtitleTrack", "SubtitleTrack"]:
        mid = len(self.cues) // 2
        return SubtitleTrack(self.cues[:mid]), SubtitleTrack(self.cues[mid:])


_CUE_TIME = r"(?:(\d+):)?(\d{1,2}):(\d{2})(?:[,.](\d{1,3}))?"
_TIMING_RE = re.compile(rf"^\s*{_CUE_TIME}\s*-->\s*{_CUE_TIME}")
_TAG_RE = re.compile(r"<[^>]+>")


def _cue_ms(h, m, s, frac) -> int:
    ms = int((frac or "0").ljust(3, "0"))
    return ((int(h or 0) * 60 + int(m)) * 60 + int(s)) * 1000 + ms


def parse_subtitle_text(text: str) -> SubtitleTrack:
    """Parse SRT or WebVTT content. Cue order is kept; overlaps are not touched."""
    text = text.lstrip("﻿").replace("\r\n", "\n").replace("\r", "\n")
    if not text.strip():
        return SubtitleTrack()
    lines = text.split("\n")
    cues: list[SubtitleCue] = []
    saw_timing = False
    i = 0
    while i < len(lines):
        line = lines[i]
        if "-->" not in line:
            i += 1
            continue
        m = _TIMING_RE.match(line)
        if m is None:
            raise MalformedSubtitleFile(f"bad timing line {i + 1}: {line!r}")
        saw_timing = True
        g = m.groups()
        start, end = _cue_ms(*g[:4]), _cue_ms(*g[4:])
        i += 1
        body = []
        while i < len(lines) and lines[i].strip() and "-->" not in lines[i]:
            body.append(_TAG_RE.sub("", lines[i]).strip())
            i += 1
        if end < start:
            raise MalformedSubtitleFile(f"cue ends before it starts at line {i}: {line!r}")
        if end == start:
            logger.warning("dropping zero-length subtitle cue at %s", format_timecode(start))
            continue
        cues.append(SubtitleCue(TimeRange.from_ms(start, end), " ".join(b for b in body if b)))
    if not saw_timing and not text.lstrip().startswith("WEBVTT"):
        raise MalformedSubtitleFile("no cue timing lines found")
    return SubtitleTrack(tuple(cues))


def parse_subtitles(path: str | Path) -> SubtitleTrack:
    try:
        content = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise MalformedSubtitleFile(f"{path}: not UTF-8 text") from e
    return parse_subtitle_text(content)


def render_subtitles(track: SubtitleTrack) -> str:
    return "\n".join(f"[{c.range.start} - {c.range.end}]: {c.text}" for c in track.cues)
