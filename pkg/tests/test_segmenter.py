import os
import random
import sys

import pytest

# Ensure project root is on sys.path so we can import streamthink modules
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from streamthink.exceptions import ParameterError, RejectedFrameError  # noqa: E402
from streamthink.segmenter import (  # noqa: E402
    SegmenterState,
    fit_clip_to_cap,
    flush,
    ingest_frame,
    segment_stream,
)
from streamthink.stream_model import FrameRecord  # noqa: E402


def _frames(token_counts, step_ms=500):
    return [FrameRecord(i, i * step_ms, tokens) for i, tokens in enumerate(token_counts)]


def _random_stream(rng, n):
    return _frames([rng.randint(1, 400) for _ in range(n)], step_ms=rng.choice([0, 100, 500]))


def test_clip_emitted_on_frame_reaching_capacity():
    state = SegmenterState()
    emitted = []
    for frame in _frames([100, 100, 100]):
        state, clip = ingest_frame(state, frame, 250)
        emitted.append(clip)

    assert emitted[:2] == [None, None]
    assert emitted[2].total_visual_tokens == 300
    assert emitted[2].frame_range == (0, 2)
    assert emitted[2].clip_index == 1


def test_single_frame_exactly_at_capacity_forms_clip():
    state, clip = ingest_frame(SegmenterState(), FrameRecord(0, 0, 100), 100)

    assert clip.frame_range == (0, 0)
    assert state.pending_frames == ()


def test_capacity_not_reached_emits_nothing():
    state = SegmenterState()
    for frame in _frames([100, 100]):
        state, clip = ingest_frame(state, frame, 250)
        assert clip is None

    assert state.accumulated_tokens == 200


def test_flush_on_empty_state_returns_no_clip():
    state, clip = flush(SegmenterState())

    assert clip is None
    assert state == SegmenterState()


def test_flush_emits_pending_partial_clip():
    state, _ = ingest_frame(SegmenterState(), FrameRecord(0, 0, 50), 100)

    state, clip = flush(state)

    assert clip.total_visual_tokens == 50
    assert state.pending_frames == ()
    assert state.next_clip_index == 2


def test_flush_after_exact_boundary_has_nothing_to_emit():
    state, closed = ingest_frame(SegmenterState(), FrameRecord(0, 0, 100), 100)

    _, clip = flush(state)

    assert closed is not None
    assert clip is None


def test_oversized_frame_forms_its_own_clip():
    clips = segment_stream(_frames([10, 500, 10]), 100)

    assert [c.frame_range for c in clips] == [(0, 1), (2, 2)]


def test_non_increasing_index_is_rejected():
    state, _ = ingest_frame(SegmenterState(), FrameRecord(3, 0, 10), 100)

    with pytest.raises(RejectedFrameError) as excinfo:
        ingest_frame(state, FrameRecord(3, 10, 10), 100)

    assert excinfo.value.field == "frame_index"


def test_timestamp_regression_is_rejected_after_clip_close():
    state, clip = ingest_frame(SegmenterState(), FrameRecord(0, 1000, 100), 100)
    assert clip is not None

    with pytest.raises(RejectedFrameError, match="precedes") as excinfo:
        ingest_frame(state, FrameRecord(1, 500, 10), 100)

    assert excinfo.value.field == "timestamp"


def test_zero_capacity_is_a_parameter_error():
    with pytest.raises(ParameterError):
        ingest_frame(SegmenterState(), FrameRecord(0, 0, 1), 0)


def test_random_streams_partition_frames_and_respect_capacity():
    rng = random.Random(20240601)
    for _ in range(500):
        L = rng.randint(1, 1024)
        frames = _random_stream(rng, rng.randint(1, 40))

        clips = segment_stream(frames, L)

        covered = [i for c in clips for i in range(c.first_frame, c.last_frame + 1)]
        assert covered == [f.frame_index for f in frames]
        assert [c.clip_index for c in clips] == list(range(1, len(clips) + 1))
        assert sum(c.total_visual_tokens for c in clips) == sum(f.visual_token_count for f in frames)
        for clip in clips[:-1]:
            members = frames[clip.first_frame : clip.last_frame + 1]
            assert clip.total_visual_tokens >= L
            # the clip closed on its last frame and not earlier
            assert clip.total_visual_tokens - members[-1].visual_token_count < L
        if clips:
            last = clips[-1]
            members = frames[last.first_frame : last.last_frame + 1]
            assert last.total_visual_tokens - members[-1].visual_token_count < L


def test_fit_clip_to_cap_keeps_latest_frames():
    clip = fit_clip_to_cap(_frames([40, 40, 40]), cap=90, clip_index=5)

    assert clip.frame_range == (1, 2)
    assert clip.total_visual_tokens == 80
    assert clip.clip_index == 5


def test_fit_clip_to_cap_clamps_single_oversized_frame():
    clip = fit_clip_to_cap(_frames([10, 300]), cap=100, clip_index=1)

    assert clip.frame_range == (1, 1)
    assert clip.total_visual_tokens == 100


def test_fit_clip_to_cap_without_frames():
    assert fit_clip_to_cap([], cap=10, clip_index=1) is None
