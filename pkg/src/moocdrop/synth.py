"""Synthetic clickstream corpora with planted latent structure.

Each learner gets a base engagement level e in (0, 1) and each video a
difficulty d in (0, 1).  A learner's effective engagement fluctuates week by
week (a scaled Beta multiplier with mean one), modeling good and bad weeks.
A weekly syllabus assigns a block of videos to every week; active learners
watch a few videos in consecutive blocks, mostly from the current week's
syllabus but with review and read-ahead reaching other weeks (geometric
falloff in syllabus distance, controlled by ``syllabus_spread``), emitting a
click volume proportional to that week's effective engagement, with click
types drawn from a mix between an "engaged" profile (Play/Pause heavy) and a
"struggling" profile (SeekBwd/Stalled/Pause heavy).  The mixing weight rises with video difficulty
and falls with effective engagement, so the difficulty signal is recoverable
from the click patterns.  After each week w (except the final one) the
learner drops out with probability

    hazard = logistic(alpha * watched_difficulty - beta * effective_engagement + gamma)

where watched_difficulty is the click-weighted mean difficulty of the videos
the learner actually watched that week.  Because the same effective
engagement drives the week's click volume, click mix, and dropout hazard, a
learner's final week carries a visible disengagement signature, which is the
within-learner signal the ranking-trained predictor relies on.  The emitted JSONL conforms to the clickstream schema and the realized
dropout weeks agree with the labels assigned by ``clickstream.assign_labels``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clickstream import ClickType, VIDEO_CLICK_TYPES
from .errors import InputError
from .serialize import atomic_write_text

__all__ = [
    "SynthConfig",
    "GroundTruth",
    "ENGAGED_PROFILE",
    "STRUGGLING_PROFILE",
    "generate",
    "write_events_jsonl",
    "signal_check",
]

# click-type distributions over the ten ordinals; overlap is about 60%
ENGAGED_PROFILE = np.array(
    [0.08, 0.06, 0.04, 0.34, 0.16, 0.12, 0.04, 0.06, 0.02, 0.08]
)
STRUGGLING_PROFILE = np.array(
    [0.06, 0.04, 0.04, 0.16, 0.22, 0.04, 0.20, 0.01, 0.07, 0.16]
)

_SECONDS_PER_WEEK = 604800


@dataclass
class SynthConfig:
    users: int = 5000
    videos: int = 24
    weeks: int = 8
    seed: int = 0
    click_rate: float = 40.0            # lambda: weekly click volume scale
    engagement_alpha: float = 2.0       # Beta prior for engagement
    engagement_beta: float = 2.0
    difficulty_alpha: float = 2.0       # Beta prior for difficulty
    difficulty_beta: float = 2.0
    fluctuation_alpha: float = 2.0      # weekly engagement multiplier ~ 2 Beta(a, b)
    fluctuation_beta: float = 2.0
    hazard_difficulty: float = 4.0      # alpha: difficulty weight in the hazard
    hazard_engagement: float = 4.0      # beta: engagement weight in the hazard
    hazard_bias: float = -1.2           # gamma
    mix_difficulty_gain: float = 4.0    # struggle-mix sensitivity to difficulty
    mix_engagement_gain: float = 2.0    # struggle-mix sensitivity to engagement
    syllabus_spread: float = 1.5        # review/read-ahead reach in weeks (0 = strict)
    course_start: int = 0

    def validate(self):
        if self.users < 1 or self.videos < 1 or self.weeks < 1:
            raise InputError("users, videos, and weeks must all be >= 1")
        if self.click_rate <= 0:
            raise InputError("click_rate must be positive")
        if self.syllabus_spread < 0:
            raise InputError("syllabus_spread must be >= 0")
        for name in ("engagement_alpha", "engagement_beta",
                     "difficulty_alpha", "difficulty_beta",
                     "fluctuation_alpha", "fluctuation_beta"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")


@dataclass
class GroundTruth:
    engagement: dict[str, float]
    difficulty: dict[str, float]
    dropout_week: dict[str, Optional[int]]  # None = completed the course

    def to_json(self) -> str:
        return json.dumps(
            {"engagement": self.engagement, "difficulty": self.difficulty,
             "dropout_week": self.dropout_week},
            sort_keys=True, indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        obj = json.loads(text)
        return cls(
            engagement=obj["engagement"],
            difficulty=obj["difficulty"],
            dropout_week={k: (None if v is None else int(v))
                          for k, v in obj["dropout_week"].items()},
        )


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _syllabus(videos: int, weeks: int) -> list[list[int]]:
    """Contiguous blocks of videos per week, first weeks padded one wider."""
    base = videos // weeks
    extra = videos % weeks
    plan = []
    nxt = 0
    for w in range(weeks):
        size = base + (1 if w < extra else 0)
        plan.append(list(range(nxt, min(nxt + size, videos))) or [nxt - 1])
        nxt += size
    return plan


def generate(config: SynthConfig) -> tuple[list[dict], GroundTruth]:
    """Produce event records (clickstream JSONL schema) plus the ground truth.

    Per-user randomness comes from seeds spawned off the master seed, so the
    corpus is reproducible and per-user generation could run in parallel.
    """
    config.validate()
    master = np.random.SeedSequence(config.seed)
    global_rng = np.random.default_rng(master.spawn(1)[0])
    user_seeds = master.spawn(config.users)

    video_ids = [f"v{i:03d}" for i in range(config.videos)]
    difficulty = global_rng.beta(config.difficulty_alpha, config.difficulty_beta,
                                 size=config.videos)
    engagement = global_rng.beta(config.engagement_alpha, config.engagement_beta,
                                 size=config.users)
    plan = _syllabus(config.videos, config.weeks)
    video_week = np.zeros(config.videos)
    for w, vids in enumerate(plan):
        for v in vids:
            video_week[v] = w

    records: list[dict] = []
    truth_engagement: dict[str, float] = {}
    truth_dropout: dict[str, Optional[int]] = {}

    for u in range(config.users):
        user_id = f"u{u:05d}"
        rng = np.random.default_rng(user_seeds[u])
        e_u = float(engagement[u])
        truth_engagement[user_id] = e_u
        dropout_week: Optional[int] = None
        for week in range(config.weeks):
            # effective engagement this week: base level times a mean-one swing
            e_week = e_u * 2.0 * rng.beta(config.fluctuation_alpha,
                                          config.fluctuation_beta)
            week_records, watched_difficulty = _emit_week(
                rng, config, user_id, week, len(plan[week]), video_week,
                difficulty, e_week, video_ids
            )
            records.extend(week_records)
            if week < config.weeks - 1:
                hazard = _sigmoid(config.hazard_difficulty * watched_difficulty
                                  - config.hazard_engagement * e_week
                                  + config.hazard_bias)
                if rng.random() < hazard:
                    dropout_week = week
                    break
        truth_dropout[user_id] = dropout_week

    truth = GroundTruth(
        engagement=truth_engagement,
        difficulty={vid: float(d) for vid, d in zip(video_ids, difficulty)},
        dropout_week=truth_dropout,
    )
    return records, truth


def _emit_week(rng, config, user_id, week, n_blocks, video_week, difficulty,
               e_week, video_ids):
    # an active week always emits at least one click, otherwise the realized
    # dropout week would disagree with the labels recovered from the events
    n_clicks = max(1, int(rng.poisson(config.click_rate * e_week + 1.0)))
    # which videos this learner opens: biased to the current syllabus week,
    # with review and read-ahead reaching neighboring weeks
    if config.syllabus_spread > 0:
        weight = np.exp(-np.abs(video_week - week) / config.syllabus_spread)
    else:
        weight = (video_week == week).astype(float)
    block_videos = sorted(rng.choice(video_week.size, size=n_blocks,
                                     p=weight / weight.sum()).tolist())
    # consecutive blocks of clicks, one per opened video, in syllabus order
    cuts = sorted(rng.integers(0, n_clicks + 1, size=n_blocks - 1).tolist())
    bounds = [0] + cuts + [n_clicks]
    week_start = config.course_start + week * _SECONDS_PER_WEEK
    gap = max(1, _SECONDS_PER_WEEK // (n_clicks + 1))
    out = []
    click_no = 0
    watched_difficulty = 0.0
    for block, video in enumerate(block_videos):
        block_size = bounds[block + 1] - bounds[block]
        if block_size == 0:
            continue
        d_v = float(difficulty[video])
        watched_difficulty += block_size * d_v
        mix = _sigmoid(config.mix_difficulty_gain * (d_v - 0.5)
                       + config.mix_engagement_gain * (0.5 - e_week))
        probs = (1.0 - mix) * ENGAGED_PROFILE + mix * STRUGGLING_PROFILE
        kinds = rng.choice(10, size=block_size, p=probs / probs.sum())
        for k in kinds:
            ct = ClickType(int(k))
            ts = min(week_start + (click_no + 1) * gap,
                     week_start + _SECONDS_PER_WEEK - 1)
            out.append({
                "user_id": user_id,
                "timestamp": int(ts),
                "click_type": ct.name,
                "video_id": video_ids[video] if ct in VIDEO_CLICK_TYPES else None,
            })
            click_no += 1
    return out, watched_difficulty / n_clicks


def write_events_jsonl(records: list[dict], path: str):
    """One event object per line, fixed key order, byte-reproducible."""
    lines = [
        json.dumps({"user_id": r["user_id"], "timestamp": r["timestamp"],
                    "click_type": r["click_type"], "video_id": r["video_id"]})
        for r in records
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


@dataclass
class SignalReport:
    status: str                      # "ok", "failed", or "insufficient_data"
    passed: bool
    struggle_difficulty_rho: Optional[float] = None
    dropout_difficulty_rho: Optional[float] = None
    dropout_engagement_rho: Optional[float] = None
    dropout_rate: Optional[float] = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "passed": self.passed,
            "struggle_difficulty_rho": self.struggle_difficulty_rho,
            "dropout_difficulty_rho": self.dropout_difficulty_rho,
            "dropout_engagement_rho": self.dropout_engagement_rho,
            "dropout_rate": self.dropout_rate,
            "details": self.details,
        }


def signal_check(records: list[dict], truth: GroundTruth,
                 min_struggle_rho: float = 0.3,
                 min_dropout_rho: float = 0.05) -> SignalReport:
    """Verify the planted correlations actually made it into the corpus.

    Two checks.  First, the SeekBwd+Stalled fraction of a video's clicks must
    rise with its difficulty (Spearman rho over videos).  Second, dropout must
    rise with the difficulty of the videos watched: each (user, week) that
    faced a survival draw contributes one point pairing that week's
    click-weighted watched difficulty with the dropped-after-this-week flag,
    and the Spearman rho over those points must be positive.  The per-draw
    pairing avoids the truncation artifact where dropping out early biases
    which part of the syllabus a user saw.
    """
    from scipy.stats import spearmanr

    if not records:
        return SignalReport(status="insufficient_data", passed=False)

    weeks = 1 + max(r["timestamp"] for r in records) // _SECONDS_PER_WEEK
    struggle = {ClickType.SeekBwd.name, ClickType.Stalled.name}
    video_total: dict[str, int] = {}
    video_struggle: dict[str, int] = {}
    watched: dict[tuple[str, int], list[float]] = {}
    for r in records:
        vid = r["video_id"]
        if vid is None:
            continue
        video_total[vid] = video_total.get(vid, 0) + 1
        if r["click_type"] in struggle:
            video_struggle[vid] = video_struggle.get(vid, 0) + 1
        week = r["timestamp"] // _SECONDS_PER_WEEK
        watched.setdefault((r["user_id"], week), []).append(truth.difficulty[vid])

    vids = [v for v in sorted(video_total) if video_total[v] >= 20]
    if len(vids) < 3 or len(truth.dropout_week) < 10:
        return SignalReport(status="insufficient_data", passed=False)

    fracs = [video_struggle.get(v, 0) / video_total[v] for v in vids]
    diffs = [truth.difficulty[v] for v in vids]
    rho_struggle = float(spearmanr(diffs, fracs).statistic)

    draw_difficulty: list[float] = []
    draw_engagement: list[float] = []
    draw_outcome: list[int] = []
    for user, drop_week in truth.dropout_week.items():
        last_active = (weeks - 1) if drop_week is None else drop_week
        for week in range(last_active + 1):
            if week >= weeks - 1:
                continue  # the final horizon week has no survival draw
            key = (user, week)
            if key not in watched:
                continue
            draw_difficulty.append(float(np.mean(watched[key])))
            draw_engagement.append(truth.engagement[user])
            draw_outcome.append(1 if drop_week == week else 0)

    dropped_users = [0 if w is None else 1 for w in truth.dropout_week.values()]
    if len(draw_outcome) < 10 or len(set(draw_outcome)) < 2:
        rho_dropout = 0.0
        rho_engagement = 0.0
    else:
        rho_dropout = float(spearmanr(draw_difficulty, draw_outcome).statistic)
        rho_engagement = float(spearmanr(draw_engagement, draw_outcome).statistic)

    passed = rho_struggle > min_struggle_rho and rho_dropout > min_dropout_rho
    return SignalReport(
        status="ok" if passed else "failed",
        passed=passed,
        struggle_difficulty_rho=rho_struggle,
        dropout_difficulty_rho=rho_dropout,
        dropout_engagement_rho=rho_engagement,
        dropout_rate=float(np.mean(dropped_users)),
        details={"videos_checked": len(vids), "hazard_draws": len(draw_outcome)},
    )
