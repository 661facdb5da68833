"""Event-driven streaming session: think on closed clips, answer on queries.

All session state changes go through :func:`step`, a pure function of the
current state and one event. Drivers feed events on a virtual clock
(:class:`SessionDriver`) or on the wall clock (:class:`RealTimeSessionDriver`)
and execute the generation actions ``step`` returns.
"""

from __future__ import annotations

import heapq
import itertools
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import (
    Any,
    Callable,
    Deque,
    Dict,
    Iterable,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

from streamthink.backends.base import GenerationBackend, GenerationRequest, GenerationResult
from streamthink.backends.prompts import render_answer_prompt, render_thought_prompt
from streamthink.exceptions import (
    ClockError,
    MeasurementError,
    ParameterError,
    ProtocolError,
    RejectedFrameError,
    SessionAbortedError,
    StreamthinkError,
)
from streamthink.memory import MemoryState, update
from streamthink.rl_objective import GoldAnswer, GoldKind, verify_reward
from streamthink.segmenter import SegmenterState, fit_clip_to_cap, flush, ingest_frame
from streamthink.stream_model import (
    AnswerRecord,
    Clip,
    DeadlinePolicy,
    FrameRecord,
    QueryEvent,
    SessionConfig,
    ThoughtEntry,
    validate_stream,
)
from streamthink.utils.file_utils import dump_jsonl
from streamthink.utils.logging_config import logger
from streamthink.utils.string_utils import extract_boxed


class EventKind(str, Enum):
    CLIP_CLOSED = "clip_closed"
    THOUGHT_STARTED = "thought_started"
    THOUGHT_COMPLETED = "thought_completed"
    THOUGHT_SKIPPED = "thought_skipped"
    THOUGHT_DEFERRED = "thought_deferred"
    DEADLINE_MISSED = "deadline_missed"
    QUERY_ARRIVED = "query_arrived"
    ANSWER_STARTED = "answer_started"
    ANSWER_COMPLETED = "answer_completed"
    ANSWER_FAILED = "answer_failed"
    SESSION_ENDED = "session_ended"


class SkipReason(str, Enum):
    CAP = "cap"
    DEADLINE = "deadline"
    QUERY_PENDING = "query_pending"
    EMPTY_OUTPUT = "empty_output"
    BACKEND_ERROR = "backend_error"


@dataclass(frozen=True)
class TranscriptEvent:
    """One transcript entry; optional fields are omitted from the record form."""

    kind: EventKind
    at_ms: int
    clip_index: Optional[int] = None
    query_index: Optional[int] = None
    reason: Optional[SkipReason] = None
    text: Optional[str] = None
    span_start_ms: Optional[int] = None
    span_end_ms: Optional[int] = None
    visual_tokens: Optional[int] = None
    duration_ms: Optional[int] = None
    token_count: Optional[int] = None
    submitted_at_ms: Optional[int] = None
    final: Optional[bool] = None

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"event": self.kind.value, "t_s": self.at_ms / 1000}
        optional: List[Tuple[str, Any]] = [
            ("clip_index", self.clip_index),
            ("query_index", self.query_index),
            ("reason", None if self.reason is None else self.reason.value),
            ("start_s", None if self.span_start_ms is None else self.span_start_ms / 1000),
            ("end_s", None if self.span_end_ms is None else self.span_end_ms / 1000),
            ("visual_tokens", self.visual_tokens),
            ("duration_s", None if self.duration_ms is None else self.duration_ms / 1000),
            ("token_count", self.token_count),
            ("submitted_s", None if self.submitted_at_ms is None else self.submitted_at_ms / 1000),
            ("final", self.final),
            ("text", self.text),
        ]
        record.update((key, value) for key, value in optional if value is not None)
        return record


@dataclass(frozen=True)
class SessionTranscript:
    events: Tuple[TranscriptEvent, ...] = ()

    def __iter__(self):  # type: ignore[no-untyped-def]
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, kind: EventKind) -> List[TranscriptEvent]:
        return [e for e in self.events if e.kind is kind]

    def to_records(self) -> List[Dict[str, Any]]:
        return [e.to_record() for e in self.events]

    def dumps(self) -> str:
        return dump_jsonl(self.to_records())


# Input events


@dataclass(frozen=True)
class FrameArrived:
    at_ms: int
    frame: FrameRecord


@dataclass(frozen=True)
class QueryArrived:
    at_ms: int
    query: QueryEvent


@dataclass(frozen=True)
class GenerationCompleted:
    at_ms: int
    handle_id: int
    result: GenerationResult


@dataclass(frozen=True)
class GenerationFailed:
    at_ms: int
    handle_id: int
    message: str


@dataclass(frozen=True)
class Tick:
    at_ms: int


@dataclass(frozen=True)
class SessionEnded:
    at_ms: int


SessionEvent = Union[
    FrameArrived, QueryArrived, GenerationCompleted, GenerationFailed, Tick, SessionEnded
]


@dataclass(frozen=True)
class GenerationHandle:
    handle_id: int
    purpose: str
    request: GenerationRequest
    started_at_ms: int
    clip: Optional[Clip] = None
    query_index: Optional[int] = None


# Actions returned by step


@dataclass(frozen=True)
class StartGeneration:
    handle: GenerationHandle


@dataclass(frozen=True)
class AnswerReady:
    answer: AnswerRecord


SessionAction = Union[StartGeneration, AnswerReady]


@dataclass(frozen=True)
class _QueuedThought:
    clip: Clip
    frames: Tuple[FrameRecord, ...]


@dataclass(frozen=True)
class _PendingQuery:
    query_index: int
    query: QueryEvent
    submitted_at_ms: int
    clip: Optional[Clip]


@dataclass(frozen=True)
class SessionState:
    """
    Complete state of one session.

    Attributes:
        config: Session configuration
        session_id: Identifier bound to logs and requests
        segmenter: Clip segmentation state
        memory: Long-term memory
        clip_buffer: Frames of closed clips that got no thought since the
            last clip that did; they feed the answer-time clip
        clip_buffer_index: Clip index of the latest buffered clip
        last_clip_frames: Member frames of the last closed clip
        last_clip_index: Index of the last closed clip
        thoughts_emitted: Thoughts started or queued so far
        clock_ms: Session clock
        in_flight: The running generation, if any
        queued_thoughts: Thoughts waiting for the running generation
        pending_queries: Queries waiting to be answered, oldest first
        held_events: Events held back while a blocked clip waits
        holding: Whether ingestion is blocked
        transcript: Event log
        answers: Completed answers
        next_handle_id: Id for the next generation handle
        next_query_index: Index for the next query
        closed: Whether the session has ended
    """

    config: SessionConfig
    session_id: str = "session-0"
    segmenter: SegmenterState = field(default_factory=SegmenterState)
    memory: MemoryState = field(default_factory=MemoryState)
    clip_buffer: Tuple[FrameRecord, ...] = ()
    clip_buffer_index: Optional[int] = None
    last_clip_frames: Tuple[FrameRecord, ...] = ()
    last_clip_index: Optional[int] = None
    thoughts_emitted: int = 0
    clock_ms: int = 0
    in_flight: Optional[GenerationHandle] = None
    queued_thoughts: Tuple[_QueuedThought, ...] = ()
    pending_queries: Tuple[_PendingQuery, ...] = ()
    held_events: Tuple[SessionEvent, ...] = ()
    holding: bool = False
    transcript: Tuple[TranscriptEvent, ...] = ()
    answers: Tuple[AnswerRecord, ...] = ()
    next_handle_id: int = 1
    next_query_index: int = 0
    closed: bool = False


def initial_state(config: SessionConfig, session_id: str = "session-0") -> SessionState:
    return SessionState(
        config=config,
        session_id=session_id,
        memory=MemoryState(
            budget_entries=config.memory_budget_entries,
            budget_chars=config.memory_budget_chars,
        ),
    )


class _Draft:
    """Mutable working copy of a SessionState for the duration of one step."""

    def __init__(self, state: SessionState):
        self.state = state
        self.config = state.config
        self.segmenter = state.segmenter
        self.memory = state.memory
        self.clip_buffer = state.clip_buffer
        self.clip_buffer_index = state.clip_buffer_index
        self.last_clip_frames = state.last_clip_frames
        self.last_clip_index = state.last_clip_index
        self.thoughts_emitted = state.thoughts_emitted
        self.clock_ms = state.clock_ms
        self.in_flight = state.in_flight
        self.queued: List[_QueuedThought] = list(state.queued_thoughts)
        self.pending: List[_PendingQuery] = list(state.pending_queries)
        self.held: List[SessionEvent] = list(state.held_events)
        self.holding = state.holding
        self.transcript: List[TranscriptEvent] = list(state.transcript)
        self.answers: List[AnswerRecord] = list(state.answers)
        self.next_handle_id = state.next_handle_id
        self.next_query_index = state.next_query_index
        self.closed = state.closed
        self.actions: List[SessionAction] = []
        self.log = logger.bind(session=state.session_id)

    def freeze(self) -> SessionState:
        return replace(
            self.state,
            segmenter=self.segmenter,
            memory=self.memory,
            clip_buffer=self.clip_buffer,
            clip_buffer_index=self.clip_buffer_index,
            last_clip_frames=self.last_clip_frames,
            last_clip_index=self.last_clip_index,
            thoughts_emitted=self.thoughts_emitted,
            clock_ms=self.clock_ms,
            in_flight=self.in_flight,
            queued_thoughts=tuple(self.queued),
            pending_queries=tuple(self.pending),
            held_events=tuple(self.held),
            holding=self.holding,
            transcript=tuple(self.transcript),
            answers=tuple(self.answers),
            next_handle_id=self.next_handle_id,
            next_query_index=self.next_query_index,
            closed=self.closed,
        )

    def record(self, kind: EventKind, **fields: Any) -> None:
        self.transcript.append(TranscriptEvent(kind=kind, at_ms=self.clock_ms, **fields))

    # Frames and clips

    def on_frame(self, frame: FrameRecord) -> None:
        pending_before = self.segmenter.pending_frames
        self.segmenter, clip = ingest_frame(self.segmenter, frame, self.config.clip_capacity_L)
        if clip is None:
            return
        frames = pending_before + (frame,)
        self._log_clip(clip, final=False)
        self.last_clip_frames = frames
        self.last_clip_index = clip.clip_index
        self._on_clip_closed(clip, frames)

    def _log_clip(self, clip: Clip, final: bool) -> None:
        self.record(
            EventKind.CLIP_CLOSED,
            clip_index=clip.clip_index,
            span_start_ms=clip.start_ms,
            span_end_ms=clip.end_ms,
            visual_tokens=clip.total_visual_tokens,
            final=final or None,
        )
        self.log.debug(f"Clip {clip.clip_index} closed with {clip.total_visual_tokens} visual tokens")

    def _buffer(self, clip: Clip, frames: Tuple[FrameRecord, ...]) -> None:
        self.clip_buffer = self.clip_buffer + frames
        self.clip_buffer_index = clip.clip_index

    def _skip(self, clip_index: int, reason: SkipReason) -> None:
        self.record(EventKind.THOUGHT_SKIPPED, clip_index=clip_index, reason=reason)
        self.log.debug(f"Thought for clip {clip_index} skipped ({reason.value})")

    def _on_clip_closed(self, clip: Clip, frames: Tuple[FrameRecord, ...]) -> None:
        if self.pending:
            self._skip(clip.clip_index, SkipReason.QUERY_PENDING)
            self._buffer(clip, frames)
            return
        if self.thoughts_emitted >= self.config.max_thinking_times:
            self._skip(clip.clip_index, SkipReason.CAP)
            self._buffer(clip, frames)
            return
        if self.in_flight is not None:
            self._apply_deadline_policy(clip, frames)
            return
        self.thoughts_emitted += 1
        self.clip_buffer, self.clip_buffer_index = (), None
        self._start_thought(_QueuedThought(clip, frames))

    def _apply_deadline_policy(self, clip: Clip, frames: Tuple[FrameRecord, ...]) -> None:
        policy = self.config.effective_deadline_policy
        self.record(EventKind.DEADLINE_MISSED, clip_index=clip.clip_index)
        self.log.info(
            f"Clip {clip.clip_index} closed while a thought is generating ({policy.value})"
        )
        if policy is DeadlinePolicy.DROP:
            self._skip(clip.clip_index, SkipReason.DEADLINE)
            self._buffer(clip, frames)
            return
        self.thoughts_emitted += 1
        self.clip_buffer, self.clip_buffer_index = (), None
        self.queued.append(_QueuedThought(clip, frames))
        if policy is DeadlinePolicy.DEFER:
            self.record(EventKind.THOUGHT_DEFERRED, clip_index=clip.clip_index)
        else:
            self.holding = True

    def _new_handle_id(self) -> int:
        handle_id = self.next_handle_id
        self.next_handle_id += 1
        return handle_id

    def _start_thought(self, queued: _QueuedThought) -> None:
        clip = queued.clip
        cap = self.config.per_step_video_token_cap
        if clip.total_visual_tokens > cap:
            fitted = fit_clip_to_cap(queued.frames, cap, clip.clip_index)
            assert fitted is not None
            clip = fitted
        request = render_thought_prompt(
            self.memory,
            clip,
            max_new_tokens=self.config.thought_max_new_tokens,
            issued_at_ms=self.clock_ms,
            session_id=self.state.session_id,
        )
        handle = GenerationHandle(
            self._new_handle_id(), "thought", request, self.clock_ms, clip=queued.clip
        )
        self.in_flight = handle
        self.record(EventKind.THOUGHT_STARTED, clip_index=clip.clip_index)
        self.actions.append(StartGeneration(handle))

    # Queries and answers

    def on_query(self, query: QueryEvent, submitted_at_ms: int) -> None:
        query_index = self.next_query_index
        self.next_query_index += 1
        self.record(
            EventKind.QUERY_ARRIVED,
            query_index=query_index,
            submitted_at_ms=submitted_at_ms,
            text=query.question,
        )
        tail_frames = self.segmenter.pending_frames
        self.segmenter, tail = flush(self.segmenter)
        if tail is not None:
            self._log_clip(tail, final=True)
            self.last_clip_frames = tail_frames
            self.last_clip_index = tail.clip_index

        self._cancel_queued_thoughts()
        cap = self.config.per_step_video_token_cap
        candidate = self.clip_buffer + tail_frames
        if candidate:
            index = tail.clip_index if tail is not None else self.clip_buffer_index
            final_clip = fit_clip_to_cap(candidate, cap, index or 1)
        elif self.last_clip_frames:
            final_clip = fit_clip_to_cap(self.last_clip_frames, cap, self.last_clip_index or 1)
        else:
            final_clip = None
        self.clip_buffer, self.clip_buffer_index = (), None

        self.pending.append(_PendingQuery(query_index, query, submitted_at_ms, final_clip))
        if self.in_flight is None:
            self._start_next_answer()

    def _cancel_queued_thoughts(self) -> None:
        # Cancelled clips come before any frames buffered after them.
        cancelled: Tuple[FrameRecord, ...] = ()
        for queued in self.queued:
            self._skip(queued.clip.clip_index, SkipReason.QUERY_PENDING)
            self.thoughts_emitted -= 1
            cancelled += queued.frames
        if cancelled:
            self.clip_buffer = cancelled + self.clip_buffer
            if self.clip_buffer_index is None:
                self.clip_buffer_index = self.queued[-1].clip.clip_index
        self.queued = []

    def _start_next_answer(self) -> None:
        pending = self.pending[0]
        request = render_answer_prompt(
            self.memory,
            pending.clip,
            pending.query,
            max_new_tokens=self.config.answer_max_new_tokens,
            issued_at_ms=self.clock_ms,
            session_id=self.state.session_id,
        )
        handle = GenerationHandle(
            self._new_handle_id(),
            "answer",
            request,
            self.clock_ms,
            clip=pending.clip,
            query_index=pending.query_index,
        )
        self.in_flight = handle
        self.record(EventKind.ANSWER_STARTED, query_index=pending.query_index)
        self.actions.append(StartGeneration(handle))

    # Completions

    def _take_in_flight(self, handle_id: int) -> GenerationHandle:
        handle = self.in_flight
        if handle is None or handle.handle_id != handle_id:
            raise ProtocolError(f"No generation {handle_id} is in flight")
        self.in_flight = None
        return handle

    def on_completed(self, event: GenerationCompleted) -> None:
        handle = self._take_in_flight(event.handle_id)
        result = event.result
        duration = event.at_ms - handle.started_at_ms
        if handle.purpose == "thought":
            assert handle.clip is not None
            text = result.text.strip()
            self.record(
                EventKind.THOUGHT_COMPLETED,
                clip_index=handle.clip.clip_index,
                duration_ms=duration,
                token_count=result.token_count,
                text=text,
            )
            if text:
                entry = ThoughtEntry.for_clip(handle.clip, text, duration)
                self.memory = update(self.memory, [entry])
            else:
                self._skip(handle.clip.clip_index, SkipReason.EMPTY_OUTPUT)
        else:
            pending = self.pending.pop(0)
            answer = AnswerRecord(
                text=result.text,
                boxed_answer=extract_boxed(result.text),
                start_ms=handle.started_at_ms,
                end_ms=event.at_ms,
                query_index=pending.query_index,
                query_time_ms=pending.submitted_at_ms,
            )
            self.record(
                EventKind.ANSWER_COMPLETED,
                query_index=pending.query_index,
                duration_ms=duration,
                token_count=result.token_count,
                text=result.text,
            )
            self.answers.append(answer)
            self.actions.append(AnswerReady(answer))
        self._continue()

    def on_failed(self, event: GenerationFailed) -> None:
        handle = self._take_in_flight(event.handle_id)
        self.log.warning(f"Generation {event.handle_id} failed: {event.message}")
        if handle.purpose == "thought":
            assert handle.clip is not None
            self._skip(handle.clip.clip_index, SkipReason.BACKEND_ERROR)
        else:
            pending = self.pending.pop(0)
            self.record(
                EventKind.ANSWER_FAILED, query_index=pending.query_index, text=event.message
            )
        self._continue()

    def _continue(self) -> None:
        if self.pending:
            self._cancel_queued_thoughts()
            self._start_next_answer()
        elif self.queued:
            self._start_thought(self.queued.pop(0))
        if self.holding:
            self._release_held()

    def _release_held(self) -> None:
        self.holding = False
        held, self.held = self.held, []
        for position, event in enumerate(held):
            if self.holding:
                self.held.extend(held[position:])
                return
            self.dispatch(event, submitted_at_ms=event.at_ms)

    def dispatch(self, event: SessionEvent, submitted_at_ms: int) -> None:
        if isinstance(event, GenerationCompleted):
            self.on_completed(event)
        elif isinstance(event, GenerationFailed):
            self.on_failed(event)
        elif isinstance(event, (FrameArrived, QueryArrived)) and self.holding:
            self.held.append(event)
        elif isinstance(event, FrameArrived):
            self.on_frame(event.frame)
        elif isinstance(event, QueryArrived):
            self.on_query(event.query, submitted_at_ms)
        elif isinstance(event, SessionEnded):
            if self.in_flight is not None or self.pending or self.held:
                raise ProtocolError("Cannot end a session with work outstanding")
            self.closed = True
            self.record(EventKind.SESSION_ENDED)


def step(state: SessionState, event: SessionEvent) -> Tuple[SessionState, List[SessionAction]]:
    """
    Apply one event to the session.

    A closed clip starts a thought while no query is pending and fewer than
    ``max_thinking_times`` thoughts were emitted; otherwise the skip is
    logged and the clip's frames join the answer-time clip. A query flushes
    the partial clip and requests an answer over the memory and that clip.
    A clip closing while a thought runs is handled by the deadline policy.

    Args:
        state: Current state
        event: Event stamped at or after the state clock

    Returns:
        Tuple of the new state and the actions the driver must execute.

    Raises:
        ClockError: If the event lies before the session clock.
        ProtocolError: If the session is closed or a completion does not
            match the running generation.
    """
    if event.at_ms < state.clock_ms:
        raise ClockError(
            f"Event at {event.at_ms} ms precedes the session clock ({state.clock_ms} ms)"
        )
    if state.closed:
        raise ProtocolError(f"Session {state.session_id} is closed; {type(event).__name__} rejected")
    draft = _Draft(state)
    draft.clock_ms = event.at_ms
    draft.dispatch(event, submitted_at_ms=event.at_ms)
    return draft.freeze(), draft.actions


def apply_deadline_policy(
    state: SessionState, clip: Clip, frames: Sequence[FrameRecord] = ()
) -> Tuple[SessionState, List[SessionAction]]:
    """
    Apply the configured deadline policy to a clip closing at the state clock.

    With no thought in flight this is a no-op. Otherwise ``block`` holds
    further ingestion until the running thought completes, ``defer`` queues
    the clip's thought, and ``drop`` skips it; each counts one deadline miss.
    """
    if state.in_flight is None or state.in_flight.purpose != "thought":
        return state, []
    draft = _Draft(state)
    draft._apply_deadline_policy(clip, tuple(frames))
    return draft.freeze(), draft.actions


@dataclass(frozen=True)
class SessionResult:
    transcript: SessionTranscript
    answers: Tuple[AnswerRecord, ...]


class SessionDriver:
    """
    Virtual-clock driver.

    Frames, queries and generation completions are processed in clock order;
    at equal instants completions come first, then frames, then queries.
    Generation time is whatever the backend reports.
    """

    def __init__(
        self,
        config: SessionConfig,
        backend: GenerationBackend,
        frames: Iterable[FrameRecord] = (),
        session_id: str = "session-0",
        abort_on_failure: bool = True,
    ):
        self.state = initial_state(config, session_id)
        self.backend = backend
        self.abort_on_failure = abort_on_failure
        self._frames: Deque[FrameRecord] = deque(frames)
        self._completions: List[Tuple[int, int, SessionEvent]] = []
        self._sequence = itertools.count()
        self._log = logger.bind(session=session_id)

    @property
    def transcript(self) -> SessionTranscript:
        return SessionTranscript(self.state.transcript)

    @property
    def answers(self) -> Tuple[AnswerRecord, ...]:
        return self.state.answers

    def _apply(self, event: SessionEvent) -> None:
        self.state, actions = step(self.state, event)
        for action in actions:
            if isinstance(action, StartGeneration):
                self._run_generation(action.handle)

    def _run_generation(self, handle: GenerationHandle) -> None:
        try:
            result = self.backend.generate(handle.request)
        except Exception as e:
            if self.abort_on_failure:
                self._log.error(f"Backend failure, aborting session: {e}")
                raise SessionAbortedError(
                    f"Session aborted at {self.state.clock_ms} ms: {e}",
                    transcript=self.state.transcript,
                    answers=self.state.answers,
                ) from e
            event: SessionEvent = GenerationFailed(self.state.clock_ms, handle.handle_id, str(e))
            heapq.heappush(self._completions, (self.state.clock_ms, next(self._sequence), event))
            return
        at_ms = max(result.completed_at_ms, self.state.clock_ms)
        completed = GenerationCompleted(at_ms, handle.handle_id, result)
        heapq.heappush(self._completions, (at_ms, next(self._sequence), completed))

    def _next_time(self) -> Optional[int]:
        times = []
        if self._completions:
            times.append(self._completions[0][0])
        if self._frames:
            times.append(self._frames[0].timestamp_ms)
        return min(times) if times else None

    def _process_next(self) -> None:
        if self._completions and (
            not self._frames or self._completions[0][0] <= self._frames[0].timestamp_ms
        ):
            _, _, event = heapq.heappop(self._completions)
            self._apply(event)
        else:
            frame = self._frames.popleft()
            self._apply(FrameArrived(frame.timestamp_ms, frame))

    def push_frame(self, frame: FrameRecord) -> None:
        if self._frames and frame.timestamp_ms < self._frames[-1].timestamp_ms:
            raise RejectedFrameError("Invalid input: frames must be pushed in time order", "timestamp")
        self._frames.append(frame)

    def advance_to(self, at_ms: int) -> None:
        """Process every frame and completion up to and including ``at_ms``."""
        while True:
            next_time = self._next_time()
            if next_time is None or next_time > at_ms:
                break
            self._process_next()
        if at_ms > self.state.clock_ms:
            self._apply(Tick(at_ms))

    def submit_query(self, query: QueryEvent) -> int:
        """Deliver a query at its own instant; returns its query index."""
        self.advance_to(query.query_time_ms)
        query_index = self.state.next_query_index
        self._apply(QueryArrived(query.query_time_ms, query))
        return query_index

    def run_until_answered(self, query_index: int) -> Optional[AnswerRecord]:
        """Advance until the query is answered or fails; None on failure."""
        while not self._settled(query_index):
            if self._next_time() is None:
                break
            self._process_next()
        for answer in self.state.answers:
            if answer.query_index == query_index:
                return answer
        return None

    def _settled(self, query_index: int) -> bool:
        return not any(p.query_index == query_index for p in self.state.pending_queries) and (
            not any(
                isinstance(e, QueryArrived) for e in self.state.held_events
            )
        )

    def close(self) -> SessionResult:
        """Process everything left, end the session and return its result."""
        while self._next_time() is not None:
            self._process_next()
        self._apply(SessionEnded(self.state.clock_ms))
        return SessionResult(self.transcript, self.state.answers)


def run_session(
    config: SessionConfig,
    frames: Sequence[FrameRecord],
    queries: Sequence[QueryEvent],
    backend: GenerationBackend,
    session_id: str = "session-0",
) -> SessionResult:
    """
    Run a whole session on the virtual clock.

    Deterministic for a deterministic backend.

    Args:
        config: Session configuration
        frames: Frame stream
        queries: Query schedule, at least one query
        backend: Generation backend
        session_id: Session identifier

    Returns:
        The transcript and one answer per query.

    Raises:
        RejectedFrameError: If the stream is malformed.
        ParameterError: If no query is scheduled.
        SessionAbortedError: If the backend fails; carries the partial transcript.
    """
    report = validate_stream(frames)
    if not report.is_valid:
        violation = report.violations[0]
        raise RejectedFrameError(
            f"Invalid input: frame at position {violation.position}: {violation.message}",
            field=violation.field,
        )
    if not queries:
        raise ParameterError("Invalid input: a session needs at least one query")
    driver = SessionDriver(config, backend, frames=frames, session_id=session_id)
    for query in sorted(queries, key=lambda q: q.query_time_ms):
        driver.submit_query(query)
    return driver.close()


class RealTimeSessionDriver:
    """
    Wall-clock driver.

    A playback thread delivers frames at their timestamps (scaled by
    ``time_scale``), one worker thread runs generations, and a dispatcher
    thread applies every event through :func:`step` under a lock.
    """

    def __init__(
        self,
        config: SessionConfig,
        backend: GenerationBackend,
        frames: Sequence[FrameRecord] = (),
        session_id: str = "session-0",
        time_scale: float = 1.0,
        clock: Callable[[], float] = time.monotonic,
    ):
        if time_scale <= 0:
            raise ParameterError("Invalid input: time_scale must be positive")
        self.state = initial_state(config, session_id)
        self.backend = backend
        self.time_scale = time_scale
        self._clock = clock
        self._frames = list(frames)
        self._events: "queue.Queue[Optional[Tuple[str, Any]]]" = queue.Queue()
        self._jobs: "queue.Queue[Optional[GenerationHandle]]" = queue.Queue()
        self._condition = threading.Condition()
        self._stop = threading.Event()
        self._threads: List[threading.Thread] = []
        self._started_at = 0.0
        self.errors: List[BaseException] = []
        self._log = logger.bind(session=session_id)

    def now_ms(self) -> int:
        return int((self._clock() - self._started_at) * 1000 / self.time_scale)

    def start(self) -> None:
        self._started_at = self._clock()
        for target in (self._playback, self._worker, self._dispatch):
            thread = threading.Thread(target=target, daemon=True)
            thread.start()
            self._threads.append(thread)

    def _playback(self) -> None:
        for frame in self._frames:
            delay = frame.timestamp_ms * self.time_scale / 1000 - (self._clock() - self._started_at)
            if delay > 0 and self._stop.wait(delay):
                return
            self._events.put(("frame", frame))

    def _worker(self) -> None:
        while True:
            handle = self._jobs.get()
            if handle is None:
                return
            try:
                result = self.backend.generate(handle.request)
            except Exception as e:
                self._events.put(("failed", (handle.handle_id, str(e))))
            else:
                self._events.put(("completed", (handle.handle_id, result)))

    def _dispatch(self) -> None:
        while True:
            item = self._events.get()
            if item is None:
                return
            kind, payload = item
            with self._condition:
                at_ms = max(self.now_ms(), self.state.clock_ms)
                event: SessionEvent
                if kind == "frame":
                    event = FrameArrived(at_ms, payload)
                elif kind == "query":
                    question, gold = payload
                    event = QueryArrived(at_ms, QueryEvent(at_ms, question, gold))
                elif kind == "completed":
                    event = GenerationCompleted(at_ms, payload[0], payload[1])
                else:
                    event = GenerationFailed(at_ms, payload[0], payload[1])
                try:
                    self.state, actions = step(self.state, event)
                except StreamthinkError as e:
                    self._log.error(f"Dropped {kind} event: {e}")
                    self.errors.append(e)
                    actions = []
                for action in actions:
                    if isinstance(action, StartGeneration):
                        self._jobs.put(action.handle)
                self._condition.notify_all()

    def submit_query(self, question: str, gold: Optional[str] = None) -> int:
        """Queue a question at the current wall-clock instant; returns its index."""
        with self._condition:
            submitted = self.state.next_query_index + sum(
                1 for item in list(self._events.queue) if item is not None and item[0] == "query"
            )
        self._events.put(("query", (question, gold)))
        return submitted

    def wait_for_answer(self, query_index: int, timeout: Optional[float] = None) -> Optional[AnswerRecord]:
        """Block until the query is answered or failed; None on failure or timeout."""

        def settled() -> bool:
            if any(a.query_index == query_index for a in self.state.answers):
                return True
            return any(
                e.kind is EventKind.ANSWER_FAILED and e.query_index == query_index
                for e in self.state.transcript
            )

        with self._condition:
            self._condition.wait_for(settled, timeout=timeout)
            for answer in self.state.answers:
                if answer.query_index == query_index:
                    return answer
        return None

    def stop(self) -> SessionTranscript:
        self._stop.set()
        self._jobs.put(None)
        self._events.put(None)
        for thread in self._threads:
            thread.join(timeout=5.0)
        return SessionTranscript(self.state.transcript)


@dataclass(frozen=True)
class QaLatencyReport:
    """
    Latency accounting for one query.

    Attributes:
        qa_latency_ms: Answer completion minus query submission
        thinking_time_total_ms: Generation time of the thoughts before the query
        thinking_time_overlapped_ms: Part of that time spent before the next
            clip closed or the query arrived
        deadline_misses: Deadline misses up to the answer
        tokens_generated: Thought tokens counted above plus answer tokens
        thought_count: Number of thoughts counted above
    """

    qa_latency_ms: int
    thinking_time_total_ms: int = 0
    thinking_time_overlapped_ms: int = 0
    deadline_misses: int = 0
    tokens_generated: int = 0
    thought_count: int = 0

    @property
    def qa_latency(self) -> float:
        return self.qa_latency_ms / 1000

    @property
    def thinking_time_total(self) -> float:
        return self.thinking_time_total_ms / 1000

    @property
    def thinking_time_overlapped(self) -> float:
        return self.thinking_time_overlapped_ms / 1000


def measure_latency(
    transcript: Union[SessionTranscript, Sequence[TranscriptEvent]],
    query_index: Optional[int] = None,
) -> QaLatencyReport:
    """
    Compute the QA latency report for one query.

    QA latency runs from query submission to answer completion, so thinking
    done before the query never counts towards it.

    Args:
        transcript: Session transcript
        query_index: Query to report on; the first answered query if None

    Returns:
        The latency report.

    Raises:
        MeasurementError: If the query has no matching answer completion.
    """
    events = list(transcript)
    arrivals = {e.query_index: e for e in events if e.kind is EventKind.QUERY_ARRIVED}
    completions = {e.query_index: e for e in events if e.kind is EventKind.ANSWER_COMPLETED}
    answered = [q for q in sorted(arrivals, key=lambda k: k or 0) if q in completions]
    if query_index is None:
        if not answered:
            raise MeasurementError("Transcript has no answered query")
        query_index = answered[0]
    if query_index not in arrivals or query_index not in completions:
        raise MeasurementError(f"Query {query_index} has no QueryArrived/AnswerCompleted pair")

    arrival = arrivals[query_index]
    completion = completions[query_index]
    submitted = arrival.submitted_at_ms if arrival.submitted_at_ms is not None else arrival.at_ms
    previous_submissions = [
        (a.submitted_at_ms if a.submitted_at_ms is not None else a.at_ms)
        for q, a in arrivals.items()
        if q is not None and q < query_index
    ]
    window_start = max(previous_submissions, default=-1)

    boundaries = sorted(
        [e.at_ms for e in events if e.kind is EventKind.CLIP_CLOSED and not e.final]
        + [
            (a.submitted_at_ms if a.submitted_at_ms is not None else a.at_ms)
            for a in arrivals.values()
        ]
    )

    starts: Dict[int, int] = {}
    total = overlapped = tokens = count = 0
    for event in events:
        if event.kind is EventKind.THOUGHT_STARTED and event.clip_index is not None:
            starts[event.clip_index] = event.at_ms
        elif event.kind is EventKind.THOUGHT_COMPLETED and event.clip_index in starts:
            started = starts.pop(event.clip_index)  # type: ignore[arg-type]
            if not window_start < started <= submitted:
                continue
            ended = event.at_ms
            total += ended - started
            boundary = next((b for b in boundaries if b > started), None)
            limit = ended if boundary is None else min(ended, boundary)
            overlapped += max(0, limit - started)
            tokens += event.token_count or 0
            count += 1

    misses = sum(
        1
        for e in events
        if e.kind is EventKind.DEADLINE_MISSED and window_start < e.at_ms <= completion.at_ms
    )
    return QaLatencyReport(
        qa_latency_ms=completion.at_ms - submitted,
        thinking_time_total_ms=total,
        thinking_time_overlapped_ms=overlapped,
        deadline_misses=misses,
        tokens_generated=tokens + (completion.token_count or 0),
        thought_count=count,
    )


def score_answers(
    answers: Sequence[AnswerRecord], queries: Sequence[QueryEvent]
) -> List[Optional[float]]:
    """Verifiable reward per answer; None where the query has no gold answer."""
    ordered = sorted(queries, key=lambda q: q.query_time_ms)
    scores: List[Optional[float]] = []
    for answer in answers:
        if answer.query_index >= len(ordered):
            scores.append(None)
            continue
        query = ordered[answer.query_index]
        if query.gold_answer is None:
            scores.append(None)
            continue
        gold = GoldAnswer(
            kind=GoldKind(query.gold_kind or GoldKind.FREE_TEXT.value),
            value=query.gold_answer,
            numeric_tolerance=query.gold_tolerance,
        )
        scores.append(verify_reward(answer, gold))
    return scores


def transcript_to_records(
    transcript: Union[SessionTranscript, Sequence[TranscriptEvent]],
) -> List[Dict[str, Any]]:
    """Line-delimited record form of a transcript, one dict per event."""
    return [event.to_record() for event in transcript]
