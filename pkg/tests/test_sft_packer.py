import os
import random
import sys

import pytest

# Ensure project root is on sys.path so we can import streamthink modules
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from streamthink.attention_mask import build_streaming_mask  # noqa: E402
from streamthink.exceptions import (  # noqa: E402
    AttributionError,
    InfeasibleSegmentError,
    StructureError,
)
from streamthink.memory import MemoryState, update  # noqa: E402
from streamthink.sft_packer import (  # noqa: E402
    ElementKind,
    RenderedToken,
    SegmentRendering,
    WordCountEstimator,
    _head_pieces,
    _pieces_cost,
    _tail_pieces,
    build_sequence,
    loss_mask,
    pack_episode,
    render_segment,
    segment_sequence,
    segment_token_types,
)
from streamthink.stream_model import Clip, QueryEvent, ThoughtEntry  # noqa: E402

WORDS = WordCountEstimator(1.0)
VOCAB = ["man", "door", "opens", "red", "car", "stops", "dog", "runs", "light", "turns"]


def _clips(token_counts):
    return [
        Clip(k, k - 1, k - 1, (k - 1) * 2000, (k - 1) * 2000 + 1500, tokens)
        for k, tokens in enumerate(token_counts, start=1)
    ]


def _query():
    return QueryEvent(30000, "What did the man do?")


def _kinds(seq):
    return [e.kind for e in seq.elements]


def test_build_sequence_interleaves_clips_and_thoughts():
    seq = build_sequence(_clips([10, 10, 10]), ["one", "two"], _query(), "\\boxed{A}")

    assert len(seq) == 8
    assert _kinds(seq) == [
        ElementKind.INITIAL_MEMORY,
        ElementKind.CLIP,
        ElementKind.THOUGHT,
        ElementKind.CLIP,
        ElementKind.THOUGHT,
        ElementKind.FINAL_CLIP,
        ElementKind.QUERY,
        ElementKind.ANSWER,
    ]


def test_build_sequence_single_clip():
    seq = build_sequence(_clips([10]), [], _query(), "y")

    assert _kinds(seq) == [
        ElementKind.INITIAL_MEMORY,
        ElementKind.FINAL_CLIP,
        ElementKind.QUERY,
        ElementKind.ANSWER,
    ]


def test_build_sequence_rejects_misaligned_thoughts():
    with pytest.raises(StructureError, match="2 clips need 1 thoughts"):
        build_sequence(_clips([10, 10]), ["one", "two"], _query(), "y")


def test_sequence_fitting_cap_is_one_segment_with_initial_memory():
    initial = update(MemoryState(), [ThoughtEntry(1, 0, 500, "earlier")])
    seq = build_sequence(_clips([5, 5, 5]), ["a", "b"], _query(), "y", initial_memory=initial)

    segments = segment_sequence(seq, 10_000, WORDS)

    assert len(segments) == 1
    assert segments[0].carried_memory == initial
    assert segments[0].is_last
    assert segments[0].cut_off == 2


def test_two_pairs_split_and_memory_is_carried():
    seq = build_sequence(_clips([100, 100, 1]), ["a man enters", "he sits"], _query(), "y")
    first_memory = update(MemoryState(), [ThoughtEntry(1, 0, 1500, "a man enters")])
    pair_cost = 2 + 100 + 3
    cap = (
        _pieces_cost(_head_pieces(first_memory), WORDS)
        + 2
        + 100
        + 2
        + _pieces_cost(_tail_pieces(seq.tail), WORDS)
    )
    assert _pieces_cost(_head_pieces(MemoryState()), WORDS) + 2 * pair_cost > cap

    segments = segment_sequence(seq, cap, WORDS)

    assert len(segments) == 2
    assert segments[0].carried_memory == MemoryState()
    assert segments[0].cut_off == 1 and not segments[0].is_last
    assert segments[1].carried_memory == first_memory
    assert segments[1].cut_off == 2 and segments[1].is_last


def test_cap_below_single_pair_is_infeasible():
    seq = build_sequence(_clips([100, 1]), ["thought"], _query(), "y")

    with pytest.raises(InfeasibleSegmentError) as excinfo:
        segment_sequence(seq, 50, WORDS)

    assert excinfo.value.clip_index == 1


def test_final_group_too_large_is_infeasible():
    seq = build_sequence(_clips([500]), [], _query(), "y")

    with pytest.raises(InfeasibleSegmentError, match="final clip 1"):
        segment_sequence(seq, 100, WORDS)


def test_memory_and_clip_only_segment_has_no_supervision():
    seq = build_sequence(_clips([50, 1]), [""], _query(), "y")
    cap = _pieces_cost(_head_pieces(MemoryState()), WORDS) + 2 + 50
    tail_fits = cap >= _pieces_cost(_head_pieces(MemoryState()), WORDS) + _pieces_cost(
        _tail_pieces(seq.tail), WORDS
    )
    assert tail_fits

    first = segment_sequence(seq, cap, WORDS)[0]
    rendering = render_segment(first)
    mask = loss_mask(first, rendering)

    assert not first.is_last
    assert mask.supervised_tokens == 0
    assert len(mask) == len(rendering.tokens)


def test_last_segment_supervises_thoughts_and_answer_only():
    seq = build_sequence(
        _clips([20, 20, 20]), ["a man enters", ""], _query(), "he sits \\boxed{B}"
    )
    segment = segment_sequence(seq, 10_000, WORDS)[-1]

    rendering = render_segment(segment)
    mask = loss_mask(segment, rendering)

    supervised = [t.text for t, flag in zip(rendering.tokens, mask.values) if flag]
    assert supervised == ["a", "man", "enters", "he", "sits", "\\boxed{B}"]
    assert sum(t.is_visual for t in rendering.tokens) == 60


def test_unattributed_token_is_reported():
    seq = build_sequence(_clips([1]), [], _query(), "y")
    segment = segment_sequence(seq, 10_000, WORDS)[0]
    rendering = SegmentRendering("x", (), (RenderedToken("ok", None),))

    with pytest.raises(AttributionError) as excinfo:
        loss_mask(segment, rendering)

    assert excinfo.value.position == 0


def test_token_types_feed_the_streaming_mask():
    seq = build_sequence(_clips([3, 2]), ["seen"], _query(), "y")
    rendering = render_segment(segment_sequence(seq, 10_000, WORDS)[0])

    types = segment_token_types(rendering)
    mask = build_streaming_mask(types, 3)

    assert len(types) == len(rendering.tokens)
    last = len(types) - 1
    visible = [j for j in range(len(types)) if mask.allowed(last, j) and types.is_visual[j]]
    assert len(visible) == 3


def test_pack_episode_writes_loss_spans(tmp_path):
    episode = {
        "clips": [c.to_record() for c in _clips([10, 10])],
        "thoughts": ["a man enters"],
        "query": {"query_time_s": 4.0, "question": "Who entered?"},
        "answer": "\\boxed{the man}",
    }

    records = pack_episode(episode, 10_000, WORDS)

    assert len(records) == 1
    record = records[0]
    spans = [record["text"][a:b] for a, b in record["loss_spans"]]
    assert spans == ["a man enters", "\\boxed{the man}"]
    assert record["carried_memory"] == []


def test_pack_episode_requires_keys():
    with pytest.raises(StructureError, match="answer"):
        pack_episode({"clips": [], "thoughts": [], "query": {}}, 100)


def test_random_episodes_respect_cap_and_carry_memory():
    rng = random.Random(200)
    feasible = 0
    for _ in range(200):
        k = rng.randint(1, 8)
        clips = _clips([rng.randint(1, 50) for _ in range(k)])
        thoughts = [" ".join(rng.choices(VOCAB, k=rng.randint(0, 6))) for _ in range(k - 1)]
        answer = " ".join(rng.choices(VOCAB, k=rng.randint(1, 4)))
        seq = build_sequence(clips, thoughts, _query(), answer)
        cap = rng.randint(60, 400)
        try:
            segments = segment_sequence(seq, cap, WORDS)
        except InfeasibleSegmentError:
            continue
        feasible += 1

        assert [s.segment_index for s in segments] == list(range(1, len(segments) + 1))
        assert segments[-1].is_last and not any(s.is_last for s in segments[:-1])
        pair_clips = [p[0].clip_index for s in segments for p in s.pairs]
        assert pair_clips == list(range(1, k))

        memory = MemoryState()
        supervised = 0
        for segment in segments:
            assert segment.carried_memory == memory
            rendering = render_segment(segment)
            assert len(rendering.tokens) <= cap
            supervised += loss_mask(segment, rendering).supervised_tokens
            memory = update(memory, segment.thought_entries())
        assert supervised == sum(len(t.split()) for t in thoughts) + len(answer.split())
    assert feasible > 50
