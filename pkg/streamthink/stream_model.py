"""Core domain values shared by the runtime, the simulator and the packers.

Every type is an immutable value. Instants are held as integer milliseconds
and rendered as seconds with one decimal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, List, Mapping, Optional, Sequence, Tuple, Union

from streamthink.exceptions import (
    ParameterError,
    RejectedFrameError,
    StructureError,
)
from streamthink.types import (
    AnswerRecordDict,
    ClipRecordDict,
    FrameRecordDict,
    MemoryEntryDict,
    QueryRecordDict,
)
from streamthink.utils.constants import (
    DEFAULT_ANSWER_MAX_NEW_TOKENS,
    DEFAULT_CLIP_CAPACITY_L,
    DEFAULT_MAX_THINKING_TIMES,
    DEFAULT_MEMORY_BUDGET_CHARS,
    DEFAULT_MEMORY_BUDGET_ENTRIES,
    DEFAULT_PER_STEP_VIDEO_TOKEN_CAP,
    DEFAULT_THOUGHT_MAX_NEW_TOKENS,
)
from streamthink.utils.file_utils import read_jsonl
from streamthink.utils.string_utils import seconds_to_ms


def _require_key(record: Mapping[str, Any], key: str, kind: str) -> Any:
    if key not in record:
        raise StructureError(f"Invalid input: {kind} record is missing '{key}'")
    return record[key]


@dataclass(frozen=True)
class FrameRecord:
    """
    One sampled frame, abstracted to its visual-token count.

    Attributes:
        frame_index: Non-negative position in the stream
        timestamp_ms: Capture instant in milliseconds
        visual_token_count: Encoder tokens produced for the frame (>= 1)
        caption: Optional caption, read only by the mock backend
    """

    frame_index: int
    timestamp_ms: int
    visual_token_count: int
    caption: Optional[str] = None

    def __post_init__(self) -> None:
        if not isinstance(self.frame_index, int) or self.frame_index < 0:
            raise RejectedFrameError(
                f"Invalid input: frame_index must be a non-negative integer, got {self.frame_index!r}",
                field="frame_index",
            )
        if not isinstance(self.timestamp_ms, int) or self.timestamp_ms < 0:
            raise RejectedFrameError(
                f"Invalid input: timestamp must be non-negative, got {self.timestamp_ms!r} ms",
                field="timestamp",
            )
        if not isinstance(self.visual_token_count, int) or self.visual_token_count < 1:
            raise RejectedFrameError(
                f"Invalid input: visual_token_count must be >= 1, got {self.visual_token_count!r}",
                field="visual_token_count",
            )

    @property
    def timestamp(self) -> float:
        """Capture instant in seconds."""
        return self.timestamp_ms / 1000

    def to_record(self) -> FrameRecordDict:
        record: FrameRecordDict = {
            "frame_index": self.frame_index,
            "timestamp_s": self.timestamp_ms / 1000,
            "visual_tokens": self.visual_token_count,
        }
        if self.caption is not None:
            record["caption"] = self.caption
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> FrameRecord:
        return cls(
            frame_index=_require_key(record, "frame_index", "frame"),
            timestamp_ms=seconds_to_ms(_require_key(record, "timestamp_s", "frame")),
            visual_token_count=_require_key(record, "visual_tokens", "frame"),
            caption=record.get("caption"),
        )


@dataclass(frozen=True)
class Clip:
    """
    A contiguous run of frames closed by the token-capacity rule.

    Attributes:
        clip_index: 1-based clip number k
        first_frame: Index of the first member frame
        last_frame: Index of the last member frame (inclusive)
        start_ms: Timestamp of the first member frame
        end_ms: Timestamp of the last member frame
        total_visual_tokens: Sum of member frames' visual tokens
        captions: Member captions in frame order (mock backend input)
    """

    clip_index: int
    first_frame: int
    last_frame: int
    start_ms: int
    end_ms: int
    total_visual_tokens: int
    captions: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.clip_index < 1:
            raise StructureError("Invalid input: clip_index must be >= 1")
        if self.last_frame < self.first_frame:
            raise StructureError("Invalid input: clip frame range is reversed")
        if self.end_ms < self.start_ms:
            raise StructureError("Invalid input: clip end precedes clip start")
        if self.total_visual_tokens < 1:
            raise StructureError("Invalid input: clip must hold at least one visual token")

    @property
    def frame_range(self) -> Tuple[int, int]:
        return (self.first_frame, self.last_frame)

    @property
    def start_time(self) -> float:
        return self.start_ms / 1000

    @property
    def end_time(self) -> float:
        return self.end_ms / 1000

    @classmethod
    def from_frames(cls, clip_index: int, frames: Sequence[FrameRecord]) -> Clip:
        """Build a clip from its member frames, which must be non-empty."""
        if not frames:
            raise StructureError("Invalid input: a clip needs at least one frame")
        return cls(
            clip_index=clip_index,
            first_frame=frames[0].frame_index,
            last_frame=frames[-1].frame_index,
            start_ms=frames[0].timestamp_ms,
            end_ms=frames[-1].timestamp_ms,
            total_visual_tokens=sum(f.visual_token_count for f in frames),
            captions=tuple(f.caption for f in frames if f.caption),
        )

    def to_record(self) -> ClipRecordDict:
        return {
            "clip_index": self.clip_index,
            "first_frame": self.first_frame,
            "last_frame": self.last_frame,
            "start_s": self.start_ms / 1000,
            "end_s": self.end_ms / 1000,
            "visual_tokens": self.total_visual_tokens,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> Clip:
        return cls(
            clip_index=_require_key(record, "clip_index", "clip"),
            first_frame=_require_key(record, "first_frame", "clip"),
            last_frame=_require_key(record, "last_frame", "clip"),
            start_ms=seconds_to_ms(_require_key(record, "start_s", "clip")),
            end_ms=seconds_to_ms(_require_key(record, "end_s", "clip")),
            total_visual_tokens=_require_key(record, "visual_tokens", "clip"),
            captions=tuple(record.get("captions", ())),
        )


@dataclass(frozen=True)
class ThoughtEntry:
    """
    A streaming thought z^k summarizing clip k.

    Attributes:
        clip_index: Index of the summarized clip
        start_ms: Clip start instant
        end_ms: Clip end instant
        text: Non-empty thought text
        generation_ms: Time spent generating the thought
    """

    clip_index: int
    start_ms: int
    end_ms: int
    text: str
    generation_ms: int = 0

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise StructureError("Invalid input: thought text must be non-empty")
        if self.end_ms < self.start_ms:
            raise StructureError("Invalid input: thought time span is reversed")
        if self.generation_ms < 0:
            raise StructureError("Invalid input: generation duration must be non-negative")

    @property
    def time_span(self) -> Tuple[float, float]:
        return (self.start_ms / 1000, self.end_ms / 1000)

    @property
    def generation_duration(self) -> float:
        return self.generation_ms / 1000

    @classmethod
    def for_clip(cls, clip: Clip, text: str, generation_ms: int = 0) -> ThoughtEntry:
        return cls(clip.clip_index, clip.start_ms, clip.end_ms, text, generation_ms)

    def to_record(self) -> MemoryEntryDict:
        return {
            "clip_index": self.clip_index,
            "start_s": self.start_ms / 1000,
            "end_s": self.end_ms / 1000,
            "text": self.text,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> ThoughtEntry:
        return cls(
            clip_index=_require_key(record, "clip_index", "memory"),
            start_ms=seconds_to_ms(_require_key(record, "start_s", "memory")),
            end_ms=seconds_to_ms(_require_key(record, "end_s", "memory")),
            text=_require_key(record, "text", "memory"),
        )


@dataclass(frozen=True)
class QueryEvent:
    """
    A user question arriving at a stream instant.

    Attributes:
        query_time_ms: Arrival instant
        question: Question text
        gold_answer: Optional reference answer
        gold_kind: Reward kind for gold_answer (multiple_choice, numeric_count, free_text)
        gold_tolerance: Numeric tolerance for numeric_count golds
    """

    query_time_ms: int
    question: str
    gold_answer: Optional[str] = None
    gold_kind: Optional[str] = None
    gold_tolerance: float = 0.0

    def __post_init__(self) -> None:
        if self.query_time_ms < 0:
            raise StructureError("Invalid input: query_time must be non-negative")

    @property
    def query_time(self) -> float:
        return self.query_time_ms / 1000

    def to_record(self) -> QueryRecordDict:
        record: QueryRecordDict = {
            "query_time_s": self.query_time_ms / 1000,
            "question": self.question,
        }
        if self.gold_answer is not None:
            record["gold"] = self.gold_answer
        if self.gold_kind is not None:
            record["gold_kind"] = self.gold_kind
        if self.gold_tolerance:
            record["gold_tolerance"] = self.gold_tolerance
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> QueryEvent:
        gold = record.get("gold")
        return cls(
            query_time_ms=seconds_to_ms(_require_key(record, "query_time_s", "query")),
            question=_require_key(record, "question", "query"),
            gold_answer=None if gold is None else str(gold),
            gold_kind=record.get("gold_kind"),
            gold_tolerance=float(record.get("gold_tolerance", 0.0)),
        )


@dataclass(frozen=True)
class AnswerRecord:
    """
    The direct answer y produced for one query.

    Attributes:
        text: Raw backend output
        boxed_answer: Interior of the last boxed span, if any
        start_ms: Instant the answer generation started
        end_ms: Instant the answer generation completed
        query_index: Position of the query in the session
        query_time_ms: Submission instant of the query
    """

    text: str
    boxed_answer: Optional[str]
    start_ms: int
    end_ms: int
    query_index: int = 0
    query_time_ms: int = 0

    def __post_init__(self) -> None:
        if self.end_ms < self.start_ms:
            raise StructureError("Invalid input: answer ends before it starts")

    @property
    def answer_start_time(self) -> float:
        return self.start_ms / 1000

    @property
    def answer_end_time(self) -> float:
        return self.end_ms / 1000

    def to_record(self) -> AnswerRecordDict:
        return {
            "query_index": self.query_index,
            "query_time_s": self.query_time_ms / 1000,
            "text": self.text,
            "boxed": self.boxed_answer,
            "start_s": self.start_ms / 1000,
            "end_s": self.end_ms / 1000,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> AnswerRecord:
        return cls(
            text=_require_key(record, "text", "answer"),
            boxed_answer=record.get("boxed"),
            start_ms=seconds_to_ms(_require_key(record, "start_s", "answer")),
            end_ms=seconds_to_ms(_require_key(record, "end_s", "answer")),
            query_index=int(record.get("query_index", 0)),
            query_time_ms=seconds_to_ms(record.get("query_time_s", 0.0)),
        )


class SessionMode(str, Enum):
    VIRTUAL_CLOCK = "virtual_clock"
    REAL_TIME = "real_time"


class DeadlinePolicy(str, Enum):
    """What to do when a clip closes while the previous thought is still generating."""

    BLOCK = "block"
    DROP = "drop"
    DEFER = "defer"


@dataclass(frozen=True)
class SessionConfig:
    """
    Configuration of one streaming session.

    Attributes:
        clip_capacity_L: Visual tokens that close a clip
        max_thinking_times: Maximum thought generations per session
        per_step_video_token_cap: Maximum visual tokens in one inference step
        memory_budget_entries: Long-term memory entry budget
        memory_budget_chars: Long-term memory rendered-character budget
        mode: Virtual clock or wall clock
        deadline_policy: Policy for overlapping thoughts; None picks the
            mode default (block for virtual clock, drop for real time)
        thought_max_new_tokens: Generation cap for thought requests
        answer_max_new_tokens: Generation cap for answer requests
    """

    clip_capacity_L: int = DEFAULT_CLIP_CAPACITY_L
    max_thinking_times: int = DEFAULT_MAX_THINKING_TIMES
    per_step_video_token_cap: int = DEFAULT_PER_STEP_VIDEO_TOKEN_CAP
    memory_budget_entries: int = DEFAULT_MEMORY_BUDGET_ENTRIES
    memory_budget_chars: int = DEFAULT_MEMORY_BUDGET_CHARS
    mode: SessionMode = SessionMode.VIRTUAL_CLOCK
    deadline_policy: Optional[DeadlinePolicy] = None
    thought_max_new_tokens: int = DEFAULT_THOUGHT_MAX_NEW_TOKENS
    answer_max_new_tokens: int = DEFAULT_ANSWER_MAX_NEW_TOKENS

    def __post_init__(self) -> None:
        for name in (
            "clip_capacity_L",
            "max_thinking_times",
            "per_step_video_token_cap",
            "memory_budget_entries",
            "memory_budget_chars",
            "thought_max_new_tokens",
            "answer_max_new_tokens",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ParameterError(
                    f"Invalid input: {name} must be a positive integer, got {value!r}"
                )
        if self.clip_capacity_L > self.per_step_video_token_cap:
            raise ParameterError(
                "Invalid input: clip_capacity_L must not exceed per_step_video_token_cap "
                f"({self.clip_capacity_L} > {self.per_step_video_token_cap})"
            )
        object.__setattr__(self, "mode", SessionMode(self.mode))
        if self.deadline_policy is not None:
            object.__setattr__(self, "deadline_policy", DeadlinePolicy(self.deadline_policy))

    @property
    def effective_deadline_policy(self) -> DeadlinePolicy:
        if self.deadline_policy is not None:
            return self.deadline_policy
        if self.mode is SessionMode.REAL_TIME:
            return DeadlinePolicy.DROP
        return DeadlinePolicy.BLOCK


@dataclass(frozen=True)
class StreamViolation:
    position: int
    frame_index: Optional[int]
    field: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    """Every invariant violation found in a frame stream."""

    violations: Tuple[StreamViolation, ...] = field(default_factory=tuple)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)


def validate_stream(
    frames: Sequence[Union[FrameRecord, Mapping[str, Any]]],
) -> ValidationReport:
    """
    Report every invariant a frame stream violates.

    Accepts constructed frames or raw trace records. Raw records that fail
    field validation are reported and excluded from the ordering checks.

    Args:
        frames: Frames in stream order.

    Returns:
        A report that is empty iff the stream is well-formed.
    """
    violations: List[StreamViolation] = []
    previous: Optional[FrameRecord] = None
    for position, item in enumerate(frames):
        if isinstance(item, FrameRecord):
            frame = item
        else:
            try:
                frame = FrameRecord.from_record(item)
            except RejectedFrameError as e:
                violations.append(
                    StreamViolation(position, item.get("frame_index"), e.field, str(e))
                )
                continue
            except (StructureError, TypeError, ValueError) as e:
                violations.append(
                    StreamViolation(position, item.get("frame_index"), "record", str(e))
                )
                continue
        if previous is not None:
            if frame.frame_index == previous.frame_index:
                violations.append(
                    StreamViolation(
                        position,
                        frame.frame_index,
                        "frame_index",
                        f"duplicate frame index {frame.frame_index}",
                    )
                )
            elif frame.frame_index < previous.frame_index:
                violations.append(
                    StreamViolation(
                        position,
                        frame.frame_index,
                        "frame_index",
                        f"frame index {frame.frame_index} follows {previous.frame_index}",
                    )
                )
            if frame.timestamp_ms < previous.timestamp_ms:
                violations.append(
                    StreamViolation(
                        position,
                        frame.frame_index,
                        "timestamp",
                        f"timestamp {frame.timestamp} s precedes {previous.timestamp} s",
                    )
                )
        previous = frame
    return ValidationReport(tuple(violations))


def read_frame_trace(path: str | Path) -> List[FrameRecord]:
    """Load a frame trace file; errors name the offending line."""
    frames: List[FrameRecord] = []
    for line_number, record in read_jsonl(path):
        try:
            frames.append(FrameRecord.from_record(record))
        except RejectedFrameError as e:
            raise RejectedFrameError(f"{path}:{line_number}: {e}", field=e.field) from e
    return frames


def read_query_trace(path: str | Path) -> List[QueryEvent]:
    return [QueryEvent.from_record(record) for _, record in read_jsonl(path)]
