import os
import sys
import time

import pytest

# Ensure project root is on sys.path so we can import streamthink modules
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from streamthink.backends import (  # noqa: E402
    GenerationBackend,
    MockSummarizer,
    RateModelBackend,
    ReplayBackend,
    RequestKind,
    render_answer_prompt,
)
from streamthink.exceptions import (  # noqa: E402
    ClockError,
    MeasurementError,
    ParameterError,
    ProtocolError,
    RejectedFrameError,
    SessionAbortedError,
)
from streamthink.memory import render  # noqa: E402
from streamthink.orchestrator import (  # noqa: E402
    EventKind,
    FrameArrived,
    GenerationCompleted,
    QueryArrived,
    RealTimeSessionDriver,
    SessionDriver,
    SessionEnded,
    SkipReason,
    StartGeneration,
    Tick,
    apply_deadline_policy,
    initial_state,
    measure_latency,
    run_session,
    score_answers,
    step,
    transcript_to_records,
)
from streamthink.stream_model import (  # noqa: E402
    Clip,
    DeadlinePolicy,
    FrameRecord,
    QueryEvent,
    SessionConfig,
)


class RecordingBackend(GenerationBackend):
    """Wraps a backend and keeps every request it serves."""

    def __init__(self, inner, fail_on_call=None):
        super().__init__("recording", "recording")
        self.inner = inner
        self.requests = []
        self.fail_on_call = fail_on_call

    def generate(self, request):
        self.requests.append(request)
        if self.fail_on_call is not None and len(self.requests) == self.fail_on_call:
            raise RuntimeError("backend went away")
        return self.inner.generate(request)


def _frames(count, step_ms=500, tokens=50, captions=None):
    return [
        FrameRecord(i, i * step_ms, tokens, captions(i) if captions else f"f{i}")
        for i in range(count)
    ]


def _kinds(transcript):
    return [e.kind.value for e in transcript]


def test_golden_transcript_for_three_thoughts_and_one_answer():
    config = SessionConfig(clip_capacity_L=100, max_thinking_times=4)
    backend = MockSummarizer(tokens_per_second=10.0)

    result = run_session(config, _frames(7), [QueryEvent(3200, "Last?", "f6")], backend)

    assert _kinds(result.transcript) == [
        "clip_closed",
        "thought_started",
        "thought_completed",
        "clip_closed",
        "thought_started",
        "thought_completed",
        "clip_closed",
        "thought_started",
        "thought_completed",
        "query_arrived",
        "clip_closed",
        "answer_started",
        "answer_completed",
        "session_ended",
    ]
    records = result.transcript.to_records()
    assert records[0] == {
        "event": "clip_closed",
        "t_s": 0.5,
        "clip_index": 1,
        "start_s": 0.0,
        "end_s": 0.5,
        "visual_tokens": 100,
    }
    assert records[2] == {
        "event": "thought_completed",
        "t_s": 0.7,
        "clip_index": 1,
        "duration_s": 0.2,
        "token_count": 2,
        "text": "f0 f1",
    }
    assert records[10]["final"] is True and records[10]["clip_index"] == 4
    assert records[12]["t_s"] == 3.6
    (answer,) = result.answers
    assert answer.boxed_answer == "f6"
    assert (answer.start_ms, answer.end_ms, answer.query_time_ms) == (3200, 3600, 3200)


def test_golden_transcript_latency_report():
    config = SessionConfig(clip_capacity_L=100)
    result = run_session(
        config, _frames(7), [QueryEvent(3200, "Last?", "f6")], MockSummarizer(tokens_per_second=10.0)
    )

    report = measure_latency(result.transcript)

    assert report.qa_latency == pytest.approx(0.4)
    assert report.thought_count == 3
    assert report.thinking_time_total_ms == 600
    assert report.thinking_time_overlapped_ms == 600
    assert report.tokens_generated == 10
    assert report.deadline_misses == 0


def test_runs_are_byte_identical():
    config = SessionConfig(clip_capacity_L=100)
    queries = [QueryEvent(3200, "Last?", "f6")]

    first = run_session(config, _frames(7), queries, MockSummarizer()).transcript.dumps()
    second = run_session(config, _frames(7), queries, MockSummarizer()).transcript.dumps()

    assert first == second


def test_query_before_any_clip_closes_answers_over_flushed_clip():
    backend = RecordingBackend(MockSummarizer())

    result = run_session(
        SessionConfig(clip_capacity_L=1000), _frames(3), [QueryEvent(1200, "What?")], backend
    )

    assert result.transcript.of_kind(EventKind.THOUGHT_STARTED) == []
    assert len(result.answers) == 1
    (answer_request,) = backend.requests
    assert answer_request.kind is RequestKind.ANSWER
    assert answer_request.metadata["clip_index"] == 1
    assert answer_request.metadata["captions"] == ["f0", "f1", "f2"]


def test_three_closed_clips_yield_three_thoughts_and_partial_final_clip():
    backend = RecordingBackend(MockSummarizer(tokens_per_second=100.0))

    result = run_session(
        SessionConfig(clip_capacity_L=100, max_thinking_times=3),
        _frames(7),
        [QueryEvent(3100, "What?")],
        backend,
    )

    kinds = [r.kind for r in backend.requests]
    assert kinds == [RequestKind.THOUGHT] * 3 + [RequestKind.ANSWER]
    assert backend.requests[-1].metadata["clip_index"] == 4
    assert backend.requests[-1].metadata["captions"] == ["f6"]
    assert len(result.transcript.of_kind(EventKind.THOUGHT_COMPLETED)) == 3


def test_cap_of_one_skips_remaining_clips():
    result = run_session(
        SessionConfig(clip_capacity_L=50, max_thinking_times=1),
        _frames(4),
        [QueryEvent(2000, "What?")],
        MockSummarizer(tokens_per_second=100.0),
    )

    assert len(result.transcript.of_kind(EventKind.THOUGHT_COMPLETED)) == 1
    skipped = result.transcript.of_kind(EventKind.THOUGHT_SKIPPED)
    assert [(e.clip_index, e.reason) for e in skipped] == [
        (2, SkipReason.CAP),
        (3, SkipReason.CAP),
        (4, SkipReason.CAP),
    ]


@pytest.mark.parametrize("cap", [1, 4, 16])
def test_thought_cap_grid(cap):
    backend = RecordingBackend(MockSummarizer(tokens_per_second=100.0))

    result = run_session(
        SessionConfig(clip_capacity_L=100, max_thinking_times=cap),
        _frames(20, tokens=100),
        [QueryEvent(9800, "What?")],
        backend,
    )

    thoughts = result.transcript.of_kind(EventKind.THOUGHT_COMPLETED)
    assert len(thoughts) == min(20, cap)
    assert len(result.transcript.of_kind(EventKind.THOUGHT_SKIPPED)) == 20 - min(20, cap)
    # skipped clips feed the answer-time clip
    answer_request = backend.requests[-1]
    assert len(answer_request.metadata["captions"]) == max(1, 20 - cap)


def test_answer_prompt_holds_memory_at_query_time():
    backend = RecordingBackend(MockSummarizer(tokens_per_second=100.0))
    driver = SessionDriver(SessionConfig(clip_capacity_L=100), backend, frames=_frames(5))

    driver.submit_query(QueryEvent(2200, "What?"))
    driver.close()

    answer_request = backend.requests[-1]
    memory = driver.state.memory
    final_clip = Clip.from_frames(3, _frames(5)[4:])
    expected = render_answer_prompt(
        memory,
        final_clip,
        QueryEvent(2200, "What?"),
        max_new_tokens=driver.state.config.answer_max_new_tokens,
        issued_at_ms=2200,
        session_id="session-0",
    )
    assert answer_request.messages == expected.messages
    assert render(memory) in answer_request.messages[-1][1]


def test_two_queries_share_evolving_memory():
    backend = RecordingBackend(MockSummarizer(tokens_per_second=100.0))

    result = run_session(
        SessionConfig(clip_capacity_L=100),
        _frames(10),
        [QueryEvent(4800, "Second?"), QueryEvent(1200, "First?")],
        backend,
    )

    answers = [r for r in backend.requests if r.kind is RequestKind.ANSWER]
    assert len(result.answers) == 2
    assert [a.query_index for a in result.answers] == [0, 1]
    assert len(answers[0].metadata["memory_texts"]) == 1
    assert len(answers[1].metadata["memory_texts"]) == 4
    assert answers[1].metadata["memory_texts"][0] == answers[0].metadata["memory_texts"][0]


def test_replay_backend_reproduces_recorded_answer():
    backend = ReplayBackend(
        [
            {"call_index": 0, "text": "a man enters", "duration_ms": 100},
            {"call_index": 1, "text": "he sits down", "duration_ms": 100},
            {"call_index": 2, "text": "He sat. \\boxed{C}", "duration_ms": 300},
        ]
    )

    result = run_session(
        SessionConfig(clip_capacity_L=100), _frames(5), [QueryEvent(2200, "Which?")], backend
    )

    assert result.answers[0].boxed_answer == "C"
    assert result.answers[0].end_ms == 2500


def _policy_run(policy, query_ms=6000):
    config = SessionConfig(clip_capacity_L=100, max_thinking_times=8, deadline_policy=policy)
    backend = MockSummarizer(tokens_per_second=2.0)
    frames = _frames(4, tokens=100, captions=lambda i: f"frame {i}")
    return run_session(config, frames, [QueryEvent(query_ms, "What?")], backend)


def test_drop_policy_skips_overlapping_thoughts():
    result = _policy_run(DeadlinePolicy.DROP)

    skipped = result.transcript.of_kind(EventKind.THOUGHT_SKIPPED)
    assert [(e.clip_index, e.reason) for e in skipped] == [
        (2, SkipReason.DEADLINE),
        (4, SkipReason.DEADLINE),
    ]
    assert len(result.transcript.of_kind(EventKind.THOUGHT_COMPLETED)) == 2
    assert measure_latency(result.transcript).deadline_misses == 2


def test_block_policy_counts_one_miss_per_blocked_clip():
    result = _policy_run(DeadlinePolicy.BLOCK)

    misses = result.transcript.of_kind(EventKind.DEADLINE_MISSED)
    assert [e.clip_index for e in misses] == [2, 3, 4]
    assert len(result.transcript.of_kind(EventKind.THOUGHT_COMPLETED)) == 4
    closes = [e.at_ms for e in result.transcript.of_kind(EventKind.CLIP_CLOSED)]
    assert closes == [0, 500, 1000, 2000]


def test_defer_policy_queues_thoughts_without_holding_frames():
    result = _policy_run(DeadlinePolicy.DEFER)

    deferred = result.transcript.of_kind(EventKind.THOUGHT_DEFERRED)
    assert [e.clip_index for e in deferred] == [2, 3, 4]
    closes = [e.at_ms for e in result.transcript.of_kind(EventKind.CLIP_CLOSED)]
    assert closes == [0, 500, 1000, 1500]
    completed = result.transcript.of_kind(EventKind.THOUGHT_COMPLETED)
    assert [(e.clip_index, e.at_ms) for e in completed] == [
        (1, 1000),
        (2, 2000),
        (3, 3000),
        (4, 4000),
    ]


def test_query_cancels_deferred_thoughts():
    result = _policy_run(DeadlinePolicy.DEFER, query_ms=1200)

    skipped = result.transcript.of_kind(EventKind.THOUGHT_SKIPPED)
    assert [(e.clip_index, e.reason) for e in skipped] == [
        (3, SkipReason.QUERY_PENDING),
        (4, SkipReason.QUERY_PENDING),
    ]
    answer = result.answers[0]
    assert answer.start_ms == 2000


def _answer_captions(policy):
    config = SessionConfig(clip_capacity_L=150, deadline_policy=policy)
    backend = RecordingBackend(RateModelBackend(thought_tokens=150, answer_tokens=10))
    frames = _frames(5, tokens=100)
    run_session(config, frames, [QueryEvent(2200, "What?")], backend)
    answers = [r for r in backend.requests if r.kind is RequestKind.ANSWER]
    assert len(answers) == 1
    return answers[0].metadata["captions"]


def test_cancelled_deferred_clip_feeds_answer_clip():
    assert _answer_captions(DeadlinePolicy.DROP) == ["f2", "f3", "f4"]
    assert _answer_captions(DeadlinePolicy.DEFER) == ["f2", "f3", "f4"]


def test_apply_deadline_policy_without_running_thought_is_noop():
    state = initial_state(SessionConfig(clip_capacity_L=100))
    clip = Clip(1, 0, 0, 0, 0, 100)

    new_state, actions = apply_deadline_policy(state, clip)

    assert new_state is state
    assert actions == []


def test_step_rejects_past_events_and_closed_sessions():
    state = initial_state(SessionConfig(clip_capacity_L=100))
    state, _ = step(state, Tick(1000))

    with pytest.raises(ClockError):
        step(state, Tick(999))

    closed, _ = step(state, SessionEnded(1000))
    with pytest.raises(ProtocolError):
        step(closed, QueryArrived(1000, QueryEvent(1000, "late?")))


def test_step_rejects_unknown_completion():
    state = initial_state(SessionConfig(clip_capacity_L=100))
    state, actions = step(state, FrameArrived(0, FrameRecord(0, 0, 100, "x")))
    (action,) = actions
    assert isinstance(action, StartGeneration)
    result = MockSummarizer().generate(action.handle.request)

    with pytest.raises(ProtocolError):
        step(state, GenerationCompleted(100, action.handle.handle_id + 1, result))


def test_session_cannot_end_with_answer_outstanding():
    state = initial_state(SessionConfig(clip_capacity_L=100))
    state, _ = step(state, QueryArrived(0, QueryEvent(0, "now?")))

    with pytest.raises(ProtocolError):
        step(state, SessionEnded(10))


def test_events_never_depend_on_future_frames():
    result = _policy_run(DeadlinePolicy.BLOCK)

    for event in result.transcript:
        if event.span_end_ms is not None:
            assert event.span_end_ms <= event.at_ms


def test_run_session_validates_inputs():
    with pytest.raises(RejectedFrameError):
        run_session(
            SessionConfig(),
            [FrameRecord(1, 0, 1), FrameRecord(0, 10, 1)],
            [QueryEvent(0, "q")],
            MockSummarizer(),
        )
    with pytest.raises(ParameterError):
        run_session(SessionConfig(), _frames(2), [], MockSummarizer())


def test_backend_failure_aborts_with_partial_transcript():
    backend = RecordingBackend(MockSummarizer(tokens_per_second=100.0), fail_on_call=2)

    with pytest.raises(SessionAbortedError) as excinfo:
        run_session(SessionConfig(clip_capacity_L=100), _frames(6), [QueryEvent(2800, "q")], backend)

    kinds = [e.kind for e in excinfo.value.transcript]
    assert kinds.count(EventKind.THOUGHT_COMPLETED) == 1
    assert excinfo.value.answers == ()


def test_failed_answer_is_logged_when_not_aborting():
    backend = RecordingBackend(MockSummarizer(), fail_on_call=1)
    driver = SessionDriver(
        SessionConfig(clip_capacity_L=1000), backend, frames=_frames(2), abort_on_failure=False
    )

    index = driver.submit_query(QueryEvent(800, "q"))
    answer = driver.run_until_answered(index)

    assert answer is None
    failed = driver.transcript.of_kind(EventKind.ANSWER_FAILED)
    assert [e.query_index for e in failed] == [0]
    second = driver.submit_query(QueryEvent(900, "again"))
    assert driver.run_until_answered(second) is not None


def test_driver_serves_incremental_frames():
    driver = SessionDriver(SessionConfig(clip_capacity_L=100), MockSummarizer(tokens_per_second=100.0))
    for frame in _frames(4):
        driver.push_frame(frame)
    driver.advance_to(1600)

    index = driver.submit_query(QueryEvent(1700, "what?", "f3"))
    answer = driver.run_until_answered(index)

    assert answer.boxed_answer == "f3"
    assert len(driver.state.memory) == 2
    with pytest.raises(RejectedFrameError):
        driver.push_frame(FrameRecord(9, 100, 10))
        driver.push_frame(FrameRecord(10, 50, 10))


def test_measure_latency_requires_answer():
    state = initial_state(SessionConfig(clip_capacity_L=100))
    state, _ = step(state, QueryArrived(0, QueryEvent(0, "q")))

    with pytest.raises(MeasurementError):
        measure_latency(state.transcript)


def test_zero_thoughts_means_zero_thinking_time():
    result = run_session(
        SessionConfig(clip_capacity_L=10_000), _frames(3), [QueryEvent(1500, "q")], MockSummarizer()
    )

    report = measure_latency(result.transcript)

    assert report.thinking_time_total_ms == 0
    assert report.thought_count == 0


def test_score_answers_uses_gold_kind():
    queries = [
        QueryEvent(3200, "Last?", "f6"),
        QueryEvent(100, "No gold"),
    ]
    result = run_session(
        SessionConfig(clip_capacity_L=100), _frames(7), queries, MockSummarizer(tokens_per_second=50.0)
    )

    assert score_answers(result.answers, queries) == [None, 1.0]


def test_transcript_records_are_plain_dicts():
    result = run_session(SessionConfig(clip_capacity_L=100), _frames(3), [QueryEvent(1100, "q")], MockSummarizer())

    records = transcript_to_records(result.transcript)

    assert records == result.transcript.to_records()
    assert all("event" in r and "t_s" in r for r in records)


def test_real_time_driver_answers_a_query():
    frames = _frames(6, tokens=100)
    driver = RealTimeSessionDriver(
        SessionConfig(clip_capacity_L=100, mode="real_time"),
        MockSummarizer(tokens_per_second=1000.0),
        frames=frames,
        time_scale=0.01,
    )
    driver.start()
    try:
        time.sleep(0.2)
        index = driver.submit_query("Which frame?", "f5")
        answer = driver.wait_for_answer(index, timeout=5.0)
    finally:
        transcript = driver.stop()

    assert answer is not None
    assert answer.query_index == index == 0
    assert transcript.of_kind(EventKind.ANSWER_COMPLETED)
    assert driver.errors == []
