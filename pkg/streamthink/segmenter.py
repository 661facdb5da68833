"""Clip segmentation by the visual-token capacity rule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from streamthink.exceptions import ParameterError, RejectedFrameError
from streamthink.stream_model import Clip, FrameRecord


@dataclass(frozen=True)
class SegmenterState:
    """
    Running accumulation of frames towards the next clip boundary.

    Attributes:
        pending_frames: Frames of the clip under construction
        accumulated_tokens: Sum of the pending frames' visual tokens
        next_clip_index: Index the next emitted clip will carry
        last_frame_index: Index of the last ingested frame, kept across resets
        last_timestamp_ms: Timestamp of the last ingested frame
    """

    pending_frames: Tuple[FrameRecord, ...] = ()
    accumulated_tokens: int = 0
    next_clip_index: int = 1
    last_frame_index: Optional[int] = None
    last_timestamp_ms: Optional[int] = None

    def _reset(self) -> SegmenterState:
        return SegmenterState(
            next_clip_index=self.next_clip_index + 1,
            last_frame_index=self.last_frame_index,
            last_timestamp_ms=self.last_timestamp_ms,
        )


def _check_capacity(L: int) -> None:
    if not isinstance(L, int) or L < 1:
        raise ParameterError(f"Invalid input: clip capacity L must be >= 1, got {L!r}")


def ingest_frame(
    state: SegmenterState, frame: FrameRecord, L: int
) -> Tuple[SegmenterState, Optional[Clip]]:
    """
    Append a frame and close the clip once the capacity is reached.

    The frame that brings the running sum to L or beyond is included in the
    closing clip, so a frame larger than L forms a clip on its own.

    Args:
        state: Current segmenter state
        frame: Next frame of the stream
        L: Clip capacity in visual tokens

    Returns:
        Tuple of the new state and the closed clip, or None when the
        capacity has not been reached.

    Raises:
        RejectedFrameError: If the frame index does not increase or the
            timestamp decreases.
        ParameterError: If L < 1.
    """
    _check_capacity(L)
    if state.last_frame_index is not None and frame.frame_index <= state.last_frame_index:
        raise RejectedFrameError(
            f"Invalid input: frame_index {frame.frame_index} does not follow "
            f"{state.last_frame_index}",
            field="frame_index",
        )
    if state.last_timestamp_ms is not None and frame.timestamp_ms < state.last_timestamp_ms:
        raise RejectedFrameError(
            f"Invalid input: timestamp {frame.timestamp} s precedes "
            f"{state.last_timestamp_ms / 1000} s",
            field="timestamp",
        )

    pending = state.pending_frames + (frame,)
    accumulated = state.accumulated_tokens + frame.visual_token_count
    if accumulated >= L:
        clip = Clip.from_frames(state.next_clip_index, pending)
        new_state = SegmenterState(
            next_clip_index=state.next_clip_index + 1,
            last_frame_index=frame.frame_index,
            last_timestamp_ms=frame.timestamp_ms,
        )
        return new_state, clip

    return (
        SegmenterState(
            pending_frames=pending,
            accumulated_tokens=accumulated,
            next_clip_index=state.next_clip_index,
            last_frame_index=frame.frame_index,
            last_timestamp_ms=frame.timestamp_ms,
        ),
        None,
    )


def flush(state: SegmenterState) -> Tuple[SegmenterState, Optional[Clip]]:
    """Emit pending frames as a final, possibly under-capacity, clip."""
    if not state.pending_frames:
        return state, None
    clip = Clip.from_frames(state.next_clip_index, state.pending_frames)
    return state._reset(), clip


def segment_stream(frames: Sequence[FrameRecord], L: int) -> List[Clip]:
    """Segment a whole stream, flushing the trailing partial clip."""
    state = SegmenterState()
    clips: List[Clip] = []
    for frame in frames:
        state, clip = ingest_frame(state, frame, L)
        if clip is not None:
            clips.append(clip)
    _, tail = flush(state)
    if tail is not None:
        clips.append(tail)
    return clips


def fit_clip_to_cap(
    frames: Sequence[FrameRecord], cap: int, clip_index: int
) -> Optional[Clip]:
    """
    Keep the most recent frames whose tokens fit the per-step cap.

    A latest frame larger than the cap on its own yields a single-frame clip
    whose token total is clamped to the cap.

    Args:
        frames: Candidate frames in stream order
        cap: Per-step visual token cap
        clip_index: Index given to the resulting clip

    Returns:
        The fitted clip, or None if there are no frames.
    """
    if not frames:
        return None
    kept: List[FrameRecord] = []
    total = 0
    for frame in reversed(frames):
        if total + frame.visual_token_count > cap:
            break
        kept.append(frame)
        total += frame.visual_token_count
    if not kept:
        last = frames[-1]
        return Clip(
            clip_index=clip_index,
            first_frame=last.frame_index,
            last_frame=last.frame_index,
            start_ms=last.timestamp_ms,
            end_ms=last.timestamp_ms,
            total_visual_tokens=cap,
            captions=(last.caption,) if last.caption else (),
        )
    kept.reverse()
    return Clip.from_frames(clip_index, kept)
