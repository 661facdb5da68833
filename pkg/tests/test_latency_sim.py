import json
import os
import sys

import numpy as np
import pytest

# Ensure project root is on sys.path so we can import streamthink modules
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from streamthink.exceptions import (  # noqa: E402
    LatencyDivisionError,
    ParameterError,
    StructureError,
)
from streamthink.latency_sim import (  # noqa: E402
    LatencyProfile,
    calibrate_profile,
    calibrated_profile,
    compare_paradigms,
    format_comparison,
    read_profile,
    simulate_postquery_cot,
    simulate_vst,
    speedup_report,
    sweep_clip_counts,
    synthetic_stream,
)
from streamthink.orchestrator import QaLatencyReport  # noqa: E402
from streamthink.stream_model import DeadlinePolicy  # noqa: E402


def _profile(**overrides):
    fields = dict(
        frame_interarrival=0.5,
        clip_count=8,
        thought_tokens=64,
        answer_tokens=28,
        cot_tokens=412,
        generation_rate=50.0,
    )
    fields.update(overrides)
    return LatencyProfile(**fields)


def test_calibrated_profile_reproduces_reported_latencies():
    profile = calibrated_profile()

    vst = simulate_vst(profile)
    cot = simulate_postquery_cot(profile)

    assert vst.qa_latency == pytest.approx(0.56)
    assert cot.qa_latency == pytest.approx(8.80)
    assert speedup_report(vst, cot) == pytest.approx(15.71, abs=0.1)


def test_vst_latency_is_independent_of_clip_count():
    reports = sweep_clip_counts(_profile(), [1, 2, 4, 8, 16, 32])

    latencies = {count: report.qa_latency_ms for count, report in reports.items()}
    assert set(latencies.values()) == {560}
    assert {count: r.thought_count for count, r in reports.items()} == {
        1: 1,
        2: 2,
        4: 4,
        8: 8,
        16: 16,
        32: 32,
    }


def test_vst_latency_is_independent_of_thought_tokens_when_they_fit():
    short = simulate_vst(_profile(thought_tokens=10))
    long = simulate_vst(_profile(thought_tokens=100))

    assert short.qa_latency_ms == long.qa_latency_ms == 560


def test_fitting_thoughts_are_fully_overlapped():
    report = simulate_vst(_profile())

    assert report.thinking_time_total_ms == 8 * 1280
    assert report.thinking_time_overlapped_ms == report.thinking_time_total_ms
    assert report.deadline_misses == 0


def test_slow_thoughts_under_block_miss_deadlines():
    profile = _profile(thought_tokens=200, deadline_policy=DeadlinePolicy.BLOCK)

    report = simulate_vst(profile)

    assert not profile.thoughts_fit_gaps
    assert report.deadline_misses > 0
    assert report.qa_latency_ms > 560


def test_cot_without_reasoning_equals_direct_answer():
    profile = _profile(cot_tokens=0)

    assert simulate_postquery_cot(profile).qa_latency_ms == simulate_vst(profile).qa_latency_ms


def test_cot_latency_is_affine_in_reasoning_tokens():
    answer_ms = 560
    base = simulate_postquery_cot(_profile(cot_tokens=200)).qa_latency_ms
    doubled = simulate_postquery_cot(_profile(cot_tokens=400)).qa_latency_ms

    assert doubled - answer_ms == 2 * (base - answer_ms)
    assert base - answer_ms == 200 / 50.0 * 1000


def test_token_totals_match_when_thoughts_cover_reasoning():
    profile = _profile(thought_tokens=50, cot_tokens=400)

    vst = simulate_vst(profile)
    cot = simulate_postquery_cot(profile)

    assert vst.tokens_generated == cot.tokens_generated == 428


def test_speedup_edge_cases():
    assert speedup_report(QaLatencyReport(560), QaLatencyReport(560)) == 1.0
    with pytest.raises(LatencyDivisionError):
        speedup_report(QaLatencyReport(0), QaLatencyReport(560))


def test_random_profiles_never_slow_down_streaming():
    rng = np.random.default_rng(157)
    for _ in range(40):
        frames_per_clip = int(rng.integers(1, 5))
        interarrival = int(rng.integers(100, 1000)) / 1000
        rate = float(rng.integers(10, 100))
        span = frames_per_clip * interarrival
        profile = LatencyProfile(
            frame_interarrival=interarrival,
            clip_count=int(rng.integers(1, 6)),
            thought_tokens=int(rng.integers(1, max(2, int(rate * span)))),
            answer_tokens=int(rng.integers(1, 60)),
            cot_tokens=int(rng.integers(0, 500)),
            generation_rate=rate,
            frames_per_clip=frames_per_clip,
            clip_capacity_L=64,
        )
        if not profile.thoughts_fit_gaps:
            continue

        comparison = compare_paradigms(profile)

        assert comparison.speedup >= 1.0
        assert comparison.vst.deadline_misses == 0


def test_synthetic_stream_layout():
    profile = _profile(clip_count=2, clip_capacity_L=10, frames_per_clip=4)

    frames, query = synthetic_stream(profile)

    assert len(frames) == 2 * 4 + 3
    assert [f.visual_token_count for f in frames[:4]] == [2, 2, 2, 4]
    assert query.query_time_ms == 3500 + 2000


def test_format_comparison_table():
    text = format_comparison(compare_paradigms(calibrated_profile()))

    assert text.splitlines() == [
        "paradigm\tqa_latency_s\toverlapped_thinking_s\tspeedup",
        "streaming_thinking\t0.56\t10.24\t15.71",
        "post_query_cot\t8.80\t0.00\t1.00",
    ]


def test_calibrate_profile_derives_token_counts():
    profile = calibrate_profile(0.56, 8.80)

    assert (profile.answer_tokens, profile.cot_tokens, profile.thought_tokens) == (28, 412, 50)
    with pytest.raises(ParameterError):
        calibrate_profile(2.0, 1.0)


def test_profile_validation_and_records(tmp_path):
    with pytest.raises(ParameterError):
        _profile(generation_rate=0)
    with pytest.raises(ParameterError):
        _profile(cot_tokens=-1)
    with pytest.raises(StructureError, match="bogus"):
        LatencyProfile.from_record({**_profile().to_record(), "bogus": 1})

    path = tmp_path / "profile.json"
    path.write_text(json.dumps(_profile(deadline_policy="drop").to_record()), encoding="utf-8")
    assert read_profile(path) == _profile(deadline_policy=DeadlinePolicy.DROP)
