"""Interleaved SFT sequences, segment slicing with memory carry, and loss masks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from streamthink.attention_mask import TokenTypeSequence
from streamthink.exceptions import (
    AttributionError,
    InfeasibleSegmentError,
    ParameterError,
    StructureError,
)
from streamthink.memory import MemoryState, memory_from_records, memory_to_records, render, update
from streamthink.stream_model import Clip, QueryEvent, ThoughtEntry
from streamthink.types import PackedSegmentDict
from streamthink.utils.constants import (
    ANSWER_CUE,
    ANSWER_INSTRUCTION,
    BOXED_INSTRUCTION,
    DEFAULT_MEMORY_BUDGET_CHARS,
    DEFAULT_MEMORY_BUDGET_ENTRIES,
    DEFAULT_TOKENS_PER_WORD,
    SYSTEM_PREAMBLE,
)
from streamthink.utils.string_utils import format_seconds, format_time_span

TokenEstimator = Callable[[str], int]


class WordCountEstimator:
    """Estimate tokens as ceil(whitespace words x factor)."""

    def __init__(self, factor: float = DEFAULT_TOKENS_PER_WORD):
        if factor <= 0:
            raise ParameterError("Invalid input: tokens-per-word factor must be positive")
        self.factor = factor

    def __call__(self, text: str) -> int:
        words = len(text.split())
        return math.ceil(words * self.factor) if words else 0


class ElementKind(str, Enum):
    INITIAL_MEMORY = "initial_memory"
    CLIP = "clip"
    THOUGHT = "thought"
    FINAL_CLIP = "final_clip"
    QUERY = "query"
    ANSWER = "answer"


@dataclass(frozen=True)
class SftElement:
    kind: ElementKind
    clip: Optional[Clip] = None
    text: str = ""
    memory: Optional[MemoryState] = None
    query: Optional[QueryEvent] = None
    clip_index: Optional[int] = None

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"kind": self.kind.value}
        if self.kind is ElementKind.INITIAL_MEMORY and self.memory is not None:
            record["entries"] = memory_to_records(self.memory)
        elif self.clip is not None:
            record.update(self.clip.to_record())
        elif self.kind is ElementKind.THOUGHT:
            record["clip_index"] = self.clip_index
            record["text"] = self.text
        elif self.query is not None:
            record.update(self.query.to_record())
        else:
            record["text"] = self.text
        return record


@dataclass(frozen=True)
class SftSequence:
    """
    The full interleaved sequence m^0, (c^1, z^1), ..., (c^{K-1}, z^{K-1}), c^K, q, y.
    """

    elements: Tuple[SftElement, ...]

    def __post_init__(self) -> None:
        kinds = [e.kind for e in self.elements]
        if len(kinds) < 4 or kinds[0] is not ElementKind.INITIAL_MEMORY:
            raise StructureError("Invalid input: sequence must start with the initial memory")
        if kinds[-3:] != [ElementKind.FINAL_CLIP, ElementKind.QUERY, ElementKind.ANSWER]:
            raise StructureError(
                "Invalid input: sequence must end with the final clip, query and answer"
            )
        middle = kinds[1:-3]
        if len(middle) % 2:
            raise StructureError("Invalid input: clips and thoughts must alternate")
        expected_index = 1
        for position in range(0, len(middle), 2):
            clip_el = self.elements[1 + position]
            thought_el = self.elements[2 + position]
            if clip_el.kind is not ElementKind.CLIP or thought_el.kind is not ElementKind.THOUGHT:
                raise StructureError("Invalid input: clips and thoughts must alternate")
            assert clip_el.clip is not None
            if clip_el.clip.clip_index != expected_index or thought_el.clip_index != expected_index:
                raise StructureError(
                    f"Invalid input: expected clip index {expected_index} in pair "
                    f"{position // 2 + 1}"
                )
            expected_index += 1
        final = self.elements[-3].clip
        if final is None or final.clip_index != expected_index:
            raise StructureError(
                f"Invalid input: final clip must carry index {expected_index}"
            )

    @property
    def initial_memory(self) -> MemoryState:
        memory = self.elements[0].memory
        assert memory is not None
        return memory

    @property
    def pairs(self) -> List[Tuple[SftElement, SftElement]]:
        middle = self.elements[1:-3]
        return [(middle[i], middle[i + 1]) for i in range(0, len(middle), 2)]

    @property
    def tail(self) -> Tuple[SftElement, SftElement, SftElement]:
        final_clip, query, answer = self.elements[-3:]
        return final_clip, query, answer

    def __len__(self) -> int:
        return len(self.elements)


def build_sequence(
    clips: Sequence[Clip],
    thoughts: Sequence[str],
    query: QueryEvent,
    answer: str,
    initial_memory: Optional[MemoryState] = None,
) -> SftSequence:
    """
    Assemble the interleaved sequence.

    Args:
        clips: Clips c^1..c^K, K >= 1
        thoughts: Thought texts z^1..z^{K-1}; texts may be empty
        query: The user query q
        answer: The target answer y
        initial_memory: m^0; empty memory when None

    Returns:
        The sequence in interleaved order.

    Raises:
        StructureError: If there is not exactly one thought per non-final clip.
    """
    if not clips:
        raise StructureError("Invalid input: at least one clip is required")
    if len(thoughts) != len(clips) - 1:
        raise StructureError(
            f"Invalid input: {len(clips)} clips need {len(clips) - 1} thoughts, got {len(thoughts)}"
        )
    memory = initial_memory if initial_memory is not None else MemoryState()
    elements: List[SftElement] = [SftElement(ElementKind.INITIAL_MEMORY, memory=memory)]
    for clip, thought in zip(clips[:-1], thoughts):
        elements.append(SftElement(ElementKind.CLIP, clip=clip, clip_index=clip.clip_index))
        elements.append(
            SftElement(ElementKind.THOUGHT, text=thought, clip_index=clip.clip_index)
        )
    final = clips[-1]
    elements.append(SftElement(ElementKind.FINAL_CLIP, clip=final, clip_index=final.clip_index))
    elements.append(SftElement(ElementKind.QUERY, query=query, text=query.question))
    elements.append(SftElement(ElementKind.ANSWER, text=answer))
    return SftSequence(tuple(elements))


@dataclass(frozen=True)
class SftSegment:
    """
    One training segment s_n.

    Attributes:
        segment_index: 1-based segment number n
        carried_memory: m^{n-1}, the memory the segment starts from
        elements: Clip/thought pairs, then the final clip, query and answer
            in the last segment only
        cut_off: Clip index of the segment's last pair (T_n), None if the
            segment holds no pair
    """

    segment_index: int
    carried_memory: MemoryState
    elements: Tuple[SftElement, ...]
    cut_off: Optional[int]

    @property
    def is_last(self) -> bool:
        return bool(self.elements) and self.elements[-1].kind is ElementKind.ANSWER

    @property
    def pairs(self) -> List[Tuple[SftElement, SftElement]]:
        body = [e for e in self.elements if e.kind in (ElementKind.CLIP, ElementKind.THOUGHT)]
        return [(body[i], body[i + 1]) for i in range(0, len(body), 2)]

    def thought_entries(self) -> List[ThoughtEntry]:
        return _thought_entries(self.pairs)


class SpanSource(str, Enum):
    TEMPLATE = "template"
    MEMORY = "memory"
    CLIP = "clip"
    THOUGHT = "thought"
    QUERY = "query"
    ANSWER = "answer"


@dataclass(frozen=True)
class RenderedSpan:
    source: SpanSource
    text: str
    char_start: int
    char_end: int
    visual_tokens: int = 0


@dataclass(frozen=True)
class RenderedToken:
    text: str
    source: Optional[SpanSource]
    is_visual: bool = False


@dataclass(frozen=True)
class SegmentRendering:
    """Rendered text of a segment with every token attributed to a source."""

    text: str
    spans: Tuple[RenderedSpan, ...]
    tokens: Tuple[RenderedToken, ...]


@dataclass(frozen=True)
class LossMask:
    values: Tuple[bool, ...]

    @property
    def supervised_tokens(self) -> int:
        return sum(self.values)

    def __len__(self) -> int:
        return len(self.values)


# A piece is (source, text, visual tokens, separator placed before it).
_Piece = Tuple[SpanSource, str, int, str]


def _clip_placeholder(clip: Clip) -> str:
    return f"<clip {clip.clip_index}: {clip.total_visual_tokens} visual tokens>"


def _head_pieces(memory: MemoryState) -> List[_Piece]:
    return [
        (SpanSource.TEMPLATE, SYSTEM_PREAMBLE, 0, ""),
        (SpanSource.MEMORY, render(memory), 0, "\n"),
    ]


def _clip_pieces(clip: Clip) -> List[_Piece]:
    return [
        (SpanSource.TEMPLATE, format_time_span(clip.start_ms, clip.end_ms), 0, "\n"),
        (SpanSource.CLIP, _clip_placeholder(clip), clip.total_visual_tokens, " "),
    ]


def _pair_pieces(pair: Tuple[SftElement, SftElement]) -> List[_Piece]:
    clip_el, thought_el = pair
    assert clip_el.clip is not None
    return _clip_pieces(clip_el.clip) + [(SpanSource.THOUGHT, thought_el.text, 0, "\n")]


def _tail_pieces(tail: Sequence[SftElement]) -> List[_Piece]:
    final_el, query_el, answer_el = tail
    assert final_el.clip is not None and query_el.query is not None
    query_time = format_seconds(query_el.query.query_time_ms)
    return _clip_pieces(final_el.clip) + [
        (SpanSource.TEMPLATE, f"Time {query_time}s {ANSWER_INSTRUCTION}", 0, "\n"),
        (SpanSource.QUERY, query_el.query.question, 0, "\n"),
        (SpanSource.TEMPLATE, f"{BOXED_INSTRUCTION}\n{ANSWER_CUE}", 0, "\n"),
        (SpanSource.ANSWER, answer_el.text, 0, "\n"),
    ]


def _pieces_cost(pieces: Sequence[_Piece], estimate: TokenEstimator) -> int:
    return sum(
        visual if source is SpanSource.CLIP else estimate(text)
        for source, text, visual, _ in pieces
    )


def _thought_entries(pairs: Sequence[Tuple[SftElement, SftElement]]) -> List[ThoughtEntry]:
    entries = []
    for clip_el, thought_el in pairs:
        if thought_el.text.strip():
            assert clip_el.clip is not None
            entries.append(ThoughtEntry.for_clip(clip_el.clip, thought_el.text))
    return entries


def _make_segment(
    index: int,
    memory: MemoryState,
    pairs: Sequence[Tuple[SftElement, SftElement]],
    tail: Sequence[SftElement] = (),
) -> SftSegment:
    elements: List[SftElement] = []
    for clip_el, thought_el in pairs:
        elements.extend((clip_el, thought_el))
    elements.extend(tail)
    cut_off = pairs[-1][0].clip_index if pairs else None
    return SftSegment(index, memory, tuple(elements), cut_off)


def segment_sequence(
    seq: SftSequence,
    max_tokens_per_segment: int,
    tokenizer_estimate: Optional[TokenEstimator] = None,
) -> List[SftSegment]:
    """
    Slice a sequence into segments under a token cap.

    Cut-offs are greedy-maximal: each segment takes as many consecutive
    pairs as fit after its carried memory. The final clip, query and answer
    always close the last segment, which may then hold no pair.

    Args:
        seq: Interleaved sequence
        max_tokens_per_segment: Estimated token cap per segment
        tokenizer_estimate: Text token estimator; WordCountEstimator() if None

    Returns:
        Segments in order; segment n carries the memory updated with every
        thought of the segments before it.

    Raises:
        InfeasibleSegmentError: If a pair, or the final group, does not fit
            in an otherwise empty segment.
        ParameterError: If the cap is not positive.
    """
    if max_tokens_per_segment < 1:
        raise ParameterError("Invalid input: max_tokens_per_segment must be >= 1")
    estimate = tokenizer_estimate or WordCountEstimator()
    final_clip_index = seq.tail[0].clip_index or 0

    segments: List[SftSegment] = []
    memory = seq.initial_memory
    current: List[Tuple[SftElement, SftElement]] = []
    cost = _pieces_cost(_head_pieces(memory), estimate)

    def close_current() -> None:
        nonlocal memory, current, cost
        segments.append(_make_segment(len(segments) + 1, memory, current))
        memory = update(memory, _thought_entries(current))
        current = []
        cost = _pieces_cost(_head_pieces(memory), estimate)

    for pair in seq.pairs:
        pair_cost = _pieces_cost(_pair_pieces(pair), estimate)
        if cost + pair_cost <= max_tokens_per_segment:
            current.append(pair)
            cost += pair_cost
            continue
        clip_index = pair[0].clip_index or 0
        if not current:
            raise InfeasibleSegmentError(
                f"Invalid input: pair for clip {clip_index} needs {cost + pair_cost} tokens, "
                f"cap is {max_tokens_per_segment}",
                clip_index=clip_index,
            )
        close_current()
        if cost + pair_cost > max_tokens_per_segment:
            raise InfeasibleSegmentError(
                f"Invalid input: pair for clip {clip_index} needs {cost + pair_cost} tokens, "
                f"cap is {max_tokens_per_segment}",
                clip_index=clip_index,
            )
        current.append(pair)
        cost += pair_cost

    tail = seq.tail
    tail_cost = _pieces_cost(_tail_pieces(tail), estimate)
    if cost + tail_cost > max_tokens_per_segment and current:
        close_current()
    if cost + tail_cost > max_tokens_per_segment:
        raise InfeasibleSegmentError(
            f"Invalid input: final clip {final_clip_index} with query and answer needs "
            f"{cost + tail_cost} tokens, cap is {max_tokens_per_segment}",
            clip_index=final_clip_index,
        )
    segments.append(_make_segment(len(segments) + 1, memory, current, tail))
    return segments


def render_segment(segment: SftSegment) -> SegmentRendering:
    """
    Render a segment to text with per-span and per-token attribution.

    Clip placeholders expand to one visual token per clip visual token; every
    other span is tokenized on whitespace.
    """
    pieces = _head_pieces(segment.carried_memory)
    for pair in segment.pairs:
        pieces += _pair_pieces(pair)
    if segment.is_last:
        pieces += _tail_pieces(segment.elements[-3:])

    text_parts: List[str] = []
    spans: List[RenderedSpan] = []
    tokens: List[RenderedToken] = []
    offset = 0
    for source, text, visual, separator in pieces:
        if text_parts:
            text_parts.append(separator)
            offset += len(separator)
        text_parts.append(text)
        spans.append(RenderedSpan(source, text, offset, offset + len(text), visual))
        offset += len(text)
        if source is SpanSource.CLIP:
            tokens.extend(RenderedToken("<v>", source, True) for _ in range(visual))
        else:
            tokens.extend(RenderedToken(word, source) for word in text.split())
    return SegmentRendering("".join(text_parts), tuple(spans), tuple(tokens))


def loss_mask(segment: SftSegment, rendering: SegmentRendering) -> LossMask:
    """
    Per-token supervision flags: true on thought and answer tokens only.

    Raises:
        AttributionError: If a token has no source.
    """
    values: List[bool] = []
    for position, token in enumerate(rendering.tokens):
        if token.source is None:
            raise AttributionError(
                f"Invalid input: token {position} ({token.text!r}) has no source element",
                position=position,
            )
        values.append(token.source in (SpanSource.THOUGHT, SpanSource.ANSWER))
    return LossMask(tuple(values))


def loss_spans(rendering: SegmentRendering) -> List[List[int]]:
    """Character spans of supervised, non-empty text."""
    return [
        [span.char_start, span.char_end]
        for span in rendering.spans
        if span.source in (SpanSource.THOUGHT, SpanSource.ANSWER) and span.text
    ]


def segment_token_types(rendering: SegmentRendering) -> TokenTypeSequence:
    """Token types of a rendering, ready for the streaming attention mask."""
    return TokenTypeSequence.from_flags(t.is_visual for t in rendering.tokens)


def segment_to_record(segment: SftSegment) -> PackedSegmentDict:
    rendering = render_segment(segment)
    record: Dict[str, Any] = {
        "segment_index": segment.segment_index,
        "carried_memory": memory_to_records(segment.carried_memory),
        "elements": [e.to_record() for e in segment.elements],
        "loss_spans": loss_spans(rendering),
        "text": rendering.text,
    }
    return record  # type: ignore[return-value]


def sequence_from_episode(
    episode: Mapping[str, Any],
    budget_entries: int = DEFAULT_MEMORY_BUDGET_ENTRIES,
    budget_chars: int = DEFAULT_MEMORY_BUDGET_CHARS,
) -> SftSequence:
    """
    Build a sequence from an episode record.

    The record holds ``clips`` (clip records), ``thoughts`` (strings),
    ``query`` (a query record), ``answer`` and optional ``initial_memory``
    (memory records).
    """
    for key in ("clips", "thoughts", "query", "answer"):
        if key not in episode:
            raise StructureError(f"Invalid input: episode record is missing '{key}'")
    memory = memory_from_records(
        episode.get("initial_memory", []),
        budget_entries=budget_entries,
        budget_chars=budget_chars,
    )
    return build_sequence(
        clips=[Clip.from_record(c) for c in episode["clips"]],
        thoughts=[str(t) for t in episode["thoughts"]],
        query=QueryEvent.from_record(episode["query"]),
        answer=str(episode["answer"]),
        initial_memory=memory,
    )


def pack_episode(
    episode: Mapping[str, Any],
    max_tokens_per_segment: int,
    tokenizer_estimate: Optional[TokenEstimator] = None,
    **budgets: int,
) -> List[PackedSegmentDict]:
    seq = sequence_from_episode(episode, **budgets)
    return [
        segment_to_record(segment)
        for segment in segment_sequence(seq, max_tokens_per_segment, tokenizer_estimate)
    ]
