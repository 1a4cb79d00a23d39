"""Clickstream ingestion: parsing, weekly sessionization, n-gram extraction,
and dropout labeling.

Input records arrive as JSONL (one object per line) or CSV with a header.
Schema per event:

    {"user_id": str, "timestamp": int epoch seconds,
     "click_type": one of the ten category names, "video_id": str or null}

Week buckets are fixed 604800-second windows counted from ``course_start``.
A learner's last active week before the horizon is their dropout week; the
instance for that week is the single positive example for the learner.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Iterator, Optional, Sequence

from .errors import InputError

__all__ = [
    "SECONDS_PER_WEEK",
    "ClickType",
    "VIDEO_CLICK_TYPES",
    "ClickEvent",
    "CourseVocab",
    "WeeklyInstance",
    "ParseReport",
    "parse_events",
    "sessionize",
    "extract_ngrams",
    "assign_labels",
    "build_instances",
    "instances_to_jsonl",
    "instances_from_jsonl",
    "ngram_to_index",
    "index_to_ngram",
]

SECONDS_PER_WEEK = 604800


class ClickType(IntEnum):
    """The ten click categories with fixed ordinals."""

    Pageview = 0
    Quiz = 1
    Forum = 2
    Play = 3
    Pause = 4
    SeekFwd = 5
    SeekBwd = 6
    RateFaster = 7
    RateSlower = 8
    Stalled = 9


# click types that always reference a video; the rest never do
VIDEO_CLICK_TYPES = frozenset({
    ClickType.Play, ClickType.Pause, ClickType.SeekFwd, ClickType.SeekBwd,
    ClickType.RateFaster, ClickType.RateSlower, ClickType.Stalled,
})

NUM_CLICK_TYPES = 10


@dataclass(frozen=True, slots=True)
class ClickEvent:
    user_id: str
    timestamp: int
    click_type: ClickType
    video_id: Optional[str] = None


@dataclass
class CourseVocab:
    """Video-id vocabulary plus the course-level framing parameters."""

    video_index: dict[str, int] = field(default_factory=dict)
    n: int = 4
    course_start: int = 0
    horizon_weeks: int = 12

    @property
    def num_videos(self) -> int:
        return len(self.video_index)

    @property
    def no_video(self) -> int:
        """Sentinel index for n-grams that end on a video-less click."""
        return len(self.video_index)

    def to_json(self) -> str:
        return json.dumps(self.video_index, sort_keys=True, indent=2)


@dataclass(frozen=True, slots=True)
class WeeklyInstance:
    user_id: str
    week: int
    steps: tuple[tuple[int, int], ...]  # (ngram index, video index) per position
    label: int  # 1 = drops out after this week


@dataclass
class ParseReport:
    events: list[ClickEvent]
    vocab: CourseVocab
    rejected: list[tuple[int, str]] = field(default_factory=list)

    @property
    def num_rejected(self) -> int:
        return len(self.rejected)


def ngram_to_index(ordinals: Sequence[int]) -> int:
    """Positional base-10 encoding of a click-ordinal window."""
    idx = 0
    for o in ordinals:
        if not 0 <= o < NUM_CLICK_TYPES:
            raise InputError(f"click ordinal {o} out of range")
        idx = idx * NUM_CLICK_TYPES + o
    return idx


def index_to_ngram(index: int, n: int) -> tuple[int, ...]:
    """Inverse of :func:`ngram_to_index` for a window of length n."""
    if not 0 <= index < NUM_CLICK_TYPES ** n:
        raise InputError(f"ngram index {index} out of range for n={n}")
    out = []
    for _ in range(n):
        out.append(index % NUM_CLICK_TYPES)
        index //= NUM_CLICK_TYPES
    return tuple(reversed(out))


def _iter_records(lines: Iterable[str], fmt: str) -> Iterator[tuple[int, dict, Optional[str]]]:
    """Yield (line_no, record, error) per input line; error set when undecodable."""
    if fmt == "jsonl":
        for line_no, line in enumerate(lines, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                yield line_no, {}, f"invalid JSON: {e.msg}"
                continue
            if not isinstance(rec, dict):
                yield line_no, {}, "record is not an object"
                continue
            yield line_no, rec, None
    elif fmt == "csv":
        reader = csv.DictReader(lines)
        for line_no, rec in enumerate(reader, start=2):  # line 1 is the header
            if rec.get("video_id") == "":
                rec = dict(rec, video_id=None)
            yield line_no, rec, None
    else:
        raise InputError(f"unknown event format {fmt!r} (expected 'jsonl' or 'csv')")


def parse_events(
    lines: Iterable[str],
    fmt: str = "jsonl",
    n: int = 4,
    horizon_weeks: int = 12,
    course_start: Optional[int] = None,
) -> ParseReport:
    """Parse raw event records into sorted ClickEvents plus a CourseVocab.

    Malformed records are rejected individually (with their line number and a
    reason) rather than aborting the parse.  When ``course_start`` is omitted
    it defaults to the earliest accepted timestamp.
    """
    if n < 1:
        raise InputError("ngram order n must be >= 1")
    if horizon_weeks < 1:
        raise InputError("horizon_weeks must be >= 1")

    events: list[ClickEvent] = []
    rejected: list[tuple[int, str]] = []

    for line_no, rec, err in _iter_records(lines, fmt):
        if err is not None:
            rejected.append((line_no, err))
            continue
        reason = _validate_record(rec, course_start)
        if reason is not None:
            rejected.append((line_no, reason))
            continue
        vid = rec.get("video_id")
        events.append(ClickEvent(
            user_id=str(rec["user_id"]),
            timestamp=int(rec["timestamp"]),
            click_type=ClickType[rec["click_type"]],
            video_id=str(vid) if vid is not None else None,
        ))

    events.sort(key=lambda e: (e.user_id, e.timestamp))
    if course_start is None:
        course_start = min((e.timestamp for e in events), default=0)

    video_index: dict[str, int] = {}
    for e in events:
        if e.video_id is not None and e.video_id not in video_index:
            video_index[e.video_id] = len(video_index)

    vocab = CourseVocab(video_index=video_index, n=n,
                        course_start=course_start, horizon_weeks=horizon_weeks)
    return ParseReport(events=events, vocab=vocab, rejected=rejected)


def _validate_record(rec: dict, course_start: Optional[int]) -> Optional[str]:
    for key in ("user_id", "timestamp", "click_type"):
        if rec.get(key) is None:
            return f"missing field {key!r}"
    ts = rec["timestamp"]
    if isinstance(ts, bool) or not isinstance(ts, (int, float)) or (
        isinstance(ts, float) and not ts.is_integer()
    ):
        try:
            ts = int(str(ts))
        except (TypeError, ValueError):
            return f"unparseable timestamp {rec['timestamp']!r}"
        rec["timestamp"] = ts
    name = rec["click_type"]
    if name not in ClickType.__members__:
        return f"unknown click type {name!r}"
    ct = ClickType[name]
    vid = rec.get("video_id")
    if ct in VIDEO_CLICK_TYPES and vid is None:
        return f"click type {name} requires a video_id"
    if ct not in VIDEO_CLICK_TYPES and vid is not None:
        return f"click type {name} must not carry a video_id"
    if course_start is not None and int(rec["timestamp"]) < course_start:
        return f"timestamp {rec['timestamp']} precedes course start {course_start}"
    return None


def sessionize(
    events: Sequence[ClickEvent], vocab: CourseVocab
) -> tuple[dict[str, dict[int, list[ClickEvent]]], int]:
    """Bucket events into per-user week lists; returns (buckets, dropped count).

    Events falling outside [0, horizon_weeks) are dropped and counted, never
    fatal.  Every retained event lands in exactly one bucket.
    """
    buckets: dict[str, dict[int, list[ClickEvent]]] = {}
    dropped = 0
    for e in events:
        week = (e.timestamp - vocab.course_start) // SECONDS_PER_WEEK
        if week < 0 or week >= vocab.horizon_weeks:
            dropped += 1
            continue
        buckets.setdefault(e.user_id, {}).setdefault(week, []).append(e)
    return buckets, dropped


def extract_ngrams(
    week_clicks: Sequence[ClickEvent], vocab: CourseVocab
) -> list[tuple[int, int]]:
    """Sliding stride-1 windows over a week's clicks.

    Each window maps to (ngram index, video index of the window's last click),
    with the no-video sentinel when that click has no video.  Fewer than n
    clicks yield an empty list.
    """
    n = vocab.n
    L = len(week_clicks)
    if L < n:
        return []
    ordinals = [int(e.click_type) for e in week_clicks]
    out = []
    for start in range(L - n + 1):
        idx = ngram_to_index(ordinals[start:start + n])
        last = week_clicks[start + n - 1]
        if last.video_id is None:
            vidx = vocab.no_video
        else:
            vidx = vocab.video_index[last.video_id]
        out.append((idx, vidx))
    return out


def assign_labels(
    user_weeks: dict[str, dict[int, list[tuple[int, int]]]], horizon_weeks: int
) -> list[WeeklyInstance]:
    """Label each active (user, week) with the next-week dropout flag.

    A learner whose last active week precedes the final horizon week is a
    dropout: that week's instance is positive and every earlier active week is
    negative.  Learners active through the final week yield only negatives.
    """
    instances: list[WeeklyInstance] = []
    for user_id in sorted(user_weeks):
        weeks = user_weeks[user_id]
        if not weeks:
            continue
        last = max(weeks)
        for week in sorted(weeks):
            label = 1 if (week == last and last < horizon_weeks - 1) else 0
            instances.append(WeeklyInstance(
                user_id=user_id, week=week,
                steps=tuple(weeks[week]), label=label,
            ))
    return instances


def build_instances(
    events: Sequence[ClickEvent], vocab: CourseVocab
) -> tuple[list[WeeklyInstance], int]:
    """Full pipeline: sessionize, extract n-grams, label. Returns (instances, dropped)."""
    buckets, dropped = sessionize(events, vocab)
    user_weeks = {
        user: {week: extract_ngrams(clicks, vocab) for week, clicks in per_week.items()}
        for user, per_week in buckets.items()
    }
    return assign_labels(user_weeks, vocab.horizon_weeks), dropped


def instances_to_jsonl(instances: Sequence[WeeklyInstance]) -> str:
    lines = [
        json.dumps({"user_id": i.user_id, "week": i.week, "label": i.label,
                    "steps": [[g, v] for g, v in i.steps]})
        for i in instances
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def instances_from_jsonl(lines: Iterable[str]) -> list[WeeklyInstance]:
    out = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            out.append(WeeklyInstance(
                user_id=str(rec["user_id"]), week=int(rec["week"]),
                steps=tuple((int(g), int(v)) for g, v in rec["steps"]),
                label=int(rec["label"]),
            ))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise InputError(f"bad instance record on line {line_no}: {e}") from e
    return out
