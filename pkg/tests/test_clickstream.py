import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moocdrop.clickstream import (
    SECONDS_PER_WEEK,
    ClickEvent,
    ClickType,
    CourseVocab,
    WeeklyInstance,
    assign_labels,
    build_instances,
    extract_ngrams,
    index_to_ngram,
    ngram_to_index,
    parse_events,
    sessionize,
)
from moocdrop.errors import InputError


def jl(rec):
    return json.dumps(rec)


def ev(user="u1", t=0, ct=ClickType.Play, vid="v1"):
    if ct in (ClickType.Pageview, ClickType.Quiz, ClickType.Forum):
        vid = None
    return ClickEvent(user_id=user, timestamp=t, click_type=ct, video_id=vid)


class TestClickTypeOrdinals:
    def test_fixed_ordinals(self):
        expected = ["Pageview", "Quiz", "Forum", "Play", "Pause", "SeekFwd",
                    "SeekBwd", "RateFaster", "RateSlower", "Stalled"]
        for i, name in enumerate(expected):
            assert ClickType[name] == i
            assert ClickType(i).name == name


class TestNGramIndex:
    def test_known_encodings(self):
        assert ngram_to_index([3, 3, 3, 3]) == 3333
        assert ngram_to_index([0, 0, 0, 0]) == 0
        assert ngram_to_index([3, 4, 3, 4]) == 3434
        assert ngram_to_index([4, 3, 4, 9]) == 4349

    def test_digit_string_oracle(self):
        # independent check: the index is just the ordinals read as digits
        import random

        rnd = random.Random(404)
        for _ in range(500):
            n = rnd.randint(1, 6)
            g = [rnd.randint(0, 9) for _ in range(n)]
            assert ngram_to_index(g) == int("".join(str(d) for d in g))

    def test_roundtrip_exhaustive_small_n(self):
        for n in (1, 2, 3):
            for idx in range(10 ** n):
                assert ngram_to_index(index_to_ngram(idx, n)) == idx

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=5))
    def test_roundtrip_property(self, g):
        assert list(index_to_ngram(ngram_to_index(g), len(g))) == g

    def test_out_of_range(self):
        with pytest.raises(InputError):
            ngram_to_index([10])
        with pytest.raises(InputError):
            index_to_ngram(1000, 3)


class TestParseEvents:
    def test_empty_input(self):
        rep = parse_events([])
        assert rep.events == []
        assert rep.vocab.video_index == {}
        assert rep.num_rejected == 0

    def test_single_record(self):
        rep = parse_events([jl({"user_id": "u1", "timestamp": 100,
                                "click_type": "Play", "video_id": "v1"})],
                           course_start=100)
        assert len(rep.events) == 1
        assert rep.events[0] == ClickEvent("u1", 100, ClickType.Play, "v1")
        assert rep.vocab.video_index == {"v1": 0}

    def test_sorts_by_user_then_timestamp(self):
        lines = [
            jl({"user_id": "u1", "timestamp": 300, "click_type": "Pageview", "video_id": None}),
            jl({"user_id": "u1", "timestamp": 100, "click_type": "Pageview", "video_id": None}),
            jl({"user_id": "u1", "timestamp": 200, "click_type": "Pageview", "video_id": None}),
        ]
        rep = parse_events(lines)
        assert [e.timestamp for e in rep.events] == [100, 200, 300]

    def test_unknown_click_type_rejected_with_line_number(self):
        lines = [
            jl({"user_id": "u1", "timestamp": 1, "click_type": "Pageview", "video_id": None}),
            jl({"user_id": "u1", "timestamp": 2, "click_type": "DoubleClick", "video_id": None}),
        ]
        rep = parse_events(lines)
        assert len(rep.events) == 1
        assert rep.num_rejected == 1
        line_no, reason = rep.rejected[0]
        assert line_no == 2
        assert "DoubleClick" in reason

    def test_unparseable_timestamp_rejected(self):
        rep = parse_events([jl({"user_id": "u1", "timestamp": "not-a-time",
                                "click_type": "Pageview", "video_id": None})])
        assert rep.events == []
        assert rep.num_rejected == 1

    def test_video_click_without_video_rejected(self):
        rep = parse_events([jl({"user_id": "u1", "timestamp": 1,
                                "click_type": "Play", "video_id": None})])
        assert rep.num_rejected == 1

    def test_pageview_with_video_rejected(self):
        rep = parse_events([jl({"user_id": "u1", "timestamp": 1,
                                "click_type": "Pageview", "video_id": "v1"})])
        assert rep.num_rejected == 1

    def test_timestamp_before_course_start_rejected(self):
        rep = parse_events([jl({"user_id": "u1", "timestamp": 5,
                                "click_type": "Pageview", "video_id": None})],
                           course_start=100)
        assert rep.num_rejected == 1

    def test_csv_input(self):
        lines = [
            "user_id,timestamp,click_type,video_id",
            "u1,100,Play,v1",
            "u1,200,Pageview,",
        ]
        rep = parse_events(lines, fmt="csv")
        assert len(rep.events) == 2
        assert rep.events[0].video_id == "v1"
        assert rep.events[1].video_id is None

    def test_vocab_json_round_trip(self):
        rep = parse_events([
            jl({"user_id": "u1", "timestamp": 1, "click_type": "Play", "video_id": "vB"}),
            jl({"user_id": "u1", "timestamp": 2, "click_type": "Play", "video_id": "vA"}),
        ])
        assert json.loads(rep.vocab.to_json()) == {"vB": 0, "vA": 1}


class TestSessionize:
    def make_vocab(self, W=12):
        return CourseVocab(video_index={"v1": 0}, n=4, course_start=1000, horizon_weeks=W)

    def test_event_at_course_start_is_week_zero(self):
        v = self.make_vocab()
        buckets, dropped = sessionize([ev(t=1000)], v)
        assert dropped == 0
        assert list(buckets["u1"]) == [0]

    def test_week_boundary(self):
        v = self.make_vocab()
        buckets, _ = sessionize([ev(t=1000 + SECONDS_PER_WEEK - 1),
                                 ev(t=1000 + SECONDS_PER_WEEK)], v)
        assert sorted(buckets["u1"]) == [0, 1]
        assert len(buckets["u1"][0]) == 1
        assert len(buckets["u1"][1]) == 1

    def test_event_past_horizon_dropped_and_counted(self):
        v = self.make_vocab(W=12)
        buckets, dropped = sessionize([ev(t=1000 + SECONDS_PER_WEEK * 12)], v)
        assert dropped == 1
        assert buckets == {}

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, SECONDS_PER_WEEK * 14 - 1), min_size=0, max_size=40))
    def test_partition_property(self, offsets):
        # every retained event appears in exactly one bucket
        v = self.make_vocab(W=12)
        events = [ev(t=1000 + off) for off in sorted(offsets)]
        buckets, dropped = sessionize(events, v)
        total = sum(len(lst) for per in buckets.values() for lst in per.values())
        assert total + dropped == len(events)
        for per in buckets.values():
            for week, lst in per.items():
                assert 0 <= week < 12
                for e in lst:
                    assert (e.timestamp - 1000) // SECONDS_PER_WEEK == week


class TestExtractNgrams:
    def make_vocab(self, n=4):
        return CourseVocab(video_index={"v0": 0}, n=n, course_start=0, horizon_weeks=12)

    def test_four_plays_on_one_video(self):
        v = self.make_vocab()
        clicks = [ev(t=i, ct=ClickType.Play, vid="v0") for i in range(4)]
        assert extract_ngrams(clicks, v) == [(3333, 0)]

    def test_four_pageviews_map_to_no_video(self):
        v = self.make_vocab()
        clicks = [ev(t=i, ct=ClickType.Pageview) for i in range(4)]
        assert extract_ngrams(clicks, v) == [(0, v.no_video)]

    def test_five_clicks_two_windows(self):
        v = self.make_vocab()
        kinds = [ClickType.Play, ClickType.Pause, ClickType.Play, ClickType.Pause, ClickType.Stalled]
        clicks = [ev(t=i, ct=k, vid="v0") for i, k in enumerate(kinds)]
        got = extract_ngrams(clicks, v)
        assert got == [(3434, 0), (4349, 0)]
        # digit-wise oracle on the window ordinals
        ords = [int(k) for k in kinds]
        for w, (idx, _) in enumerate(got):
            assert idx == int("".join(str(d) for d in ords[w:w + 4]))

    def test_short_weeks_yield_empty(self):
        v = self.make_vocab()
        clicks = [ev(t=i, ct=ClickType.Play, vid="v0") for i in range(3)]
        assert extract_ngrams(clicks, v) == []

    def test_window_count(self):
        v = self.make_vocab(n=2)
        for L in range(0, 8):
            clicks = [ev(t=i, ct=ClickType.Play, vid="v0") for i in range(L)]
            assert len(extract_ngrams(clicks, v)) == max(0, L - 1)

    def test_video_is_last_click_of_window(self):
        v = CourseVocab(video_index={"a": 0, "b": 1}, n=2, course_start=0, horizon_weeks=12)
        clicks = [ev(t=0, ct=ClickType.Play, vid="a"),
                  ev(t=1, ct=ClickType.Play, vid="b"),
                  ev(t=2, ct=ClickType.Quiz)]
        got = extract_ngrams(clicks, v)
        assert got == [(33, 1), (31, v.no_video)]


class TestAssignLabels:
    def test_dropout_mid_course(self):
        weeks = {0: [(1, 0)], 1: [(2, 0)], 2: [(3, 0)]}
        inst = assign_labels({"u1": weeks}, horizon_weeks=12)
        assert [(i.week, i.label) for i in inst] == [(0, 0), (1, 0), (2, 1)]

    def test_completer_all_negative(self):
        weeks = {w: [(1, 0)] for w in range(12)}
        inst = assign_labels({"u1": weeks}, horizon_weeks=12)
        assert len(inst) == 12
        assert all(i.label == 0 for i in inst)

    def test_single_week_user_is_positive(self):
        inst = assign_labels({"u1": {0: [(1, 0)]}}, horizon_weeks=12)
        assert [(i.week, i.label) for i in inst] == [(0, 1)]

    def test_no_events_no_instances(self):
        assert assign_labels({}, horizon_weeks=12) == []

    def test_at_most_one_positive_and_never_final_week(self):
        import random

        rnd = random.Random(7)
        users = {}
        for u in range(200):
            active = sorted(rnd.sample(range(12), rnd.randint(1, 12)))
            users[f"u{u}"] = {w: [] for w in active}
        inst = assign_labels(users, horizon_weeks=12)
        per_user = {}
        for i in inst:
            per_user.setdefault(i.user_id, []).append(i)
        for items in per_user.values():
            positives = [i for i in items if i.label == 1]
            assert len(positives) <= 1
            for p in positives:
                assert p.week < 11
                assert p.week == max(i.week for i in items)

    def test_empty_step_weeks_still_become_instances(self):
        inst = assign_labels({"u1": {0: [], 1: []}}, horizon_weeks=12)
        assert [(i.week, i.steps, i.label) for i in inst] == [(0, (), 0), (1, (), 1)]


class TestBuildInstances:
    def test_end_to_end_counts(self):
        lines = []
        t = 0
        # u1 active weeks 0 and 1 with 5 plays each; u2 active week 0 only
        for week in (0, 1):
            for i in range(5):
                lines.append(jl({"user_id": "u1", "timestamp": week * SECONDS_PER_WEEK + i,
                                 "click_type": "Play", "video_id": "v1"}))
        for i in range(4):
            lines.append(jl({"user_id": "u2", "timestamp": i,
                             "click_type": "Pause", "video_id": "v2"}))
        rep = parse_events(lines, course_start=0)
        instances, dropped = build_instances(rep.events, rep.vocab)
        assert dropped == 0
        by_key = {(i.user_id, i.week): i for i in instances}
        assert set(by_key) == {("u1", 0), ("u1", 1), ("u2", 0)}
        assert by_key[("u1", 0)].label == 0
        assert by_key[("u1", 1)].label == 1
        assert by_key[("u2", 0)].label == 1
        assert len(by_key[("u1", 0)].steps) == 2  # 5 clicks, n=4
        # per-week ngram count conservation
        total = sum(len(i.steps) for i in instances)
        assert total == 2 + 2 + 1
