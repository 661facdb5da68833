"""Exception hierarchy for streamthink.

Validation failures derive from ``ValueError`` and runtime failures from
``RuntimeError`` so callers can keep catching the builtin types.
"""

from __future__ import annotations

from typing import Any, Optional, Sequence


class StreamthinkError(Exception):
    """Base class for every error raised by streamthink."""


class ValidationError(StreamthinkError, ValueError):
    """Invalid input supplied by the caller."""


class RejectedFrameError(ValidationError):
    """A frame violates the stream invariants.

    Attributes:
        field: Name of the offending frame field.
    """

    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


class ParameterError(ValidationError):
    """A numeric parameter is outside its allowed range."""


class MemoryOrderError(ValidationError):
    """A thought was appended out of clip order."""


class StructureError(ValidationError):
    """A composite value has the wrong shape."""


class InfeasibleSegmentError(ValidationError):
    """A packing cap is too small for an element group.

    Attributes:
        clip_index: Clip index of the pair (or final clip) that does not fit.
    """

    def __init__(self, message: str, clip_index: int):
        super().__init__(message)
        self.clip_index = clip_index


class AttributionError(ValidationError):
    """A rendered token has no source element.

    Attributes:
        position: Token position inside the rendering.
    """

    def __init__(self, message: str, position: int):
        super().__init__(message)
        self.position = position


class GroupSizeError(ValidationError):
    """A rollout group is too small for advantage computation."""


class GroupError(ValidationError):
    """A rollout group is empty or inconsistent."""


class DomainError(ValidationError):
    """A numeric argument is outside the function domain."""


class MaskIndexError(ValidationError, IndexError):
    """A mask row index is out of range."""


class ConfigError(ValidationError):
    """Invalid configuration key or value.

    Attributes:
        key: Offending configuration key.
    """

    def __init__(self, message: str, key: str):
        super().__init__(message)
        self.key = key


class TimelineError(ValidationError):
    """A scene clip does not extend the video timeline."""


class TripleRejectedError(ValidationError):
    """An extracted triple references an empty entity.

    Attributes:
        index: Position of the triple inside the extraction.
    """

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class RuntimeFailure(StreamthinkError, RuntimeError):
    """Failure while running a session or pipeline."""


class BackendError(RuntimeFailure):
    """A generation backend could not produce a result."""


class TraceExhaustedError(BackendError):
    """A replay trace has no record for the requested call."""


class BackendTransportError(BackendError):
    """Transport-level failure talking to a remote backend.

    Attributes:
        status: HTTP status code, if the server answered.
    """

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class BackendProtocolError(BackendError):
    """A remote backend answered with an unexpected payload."""


class ClockError(RuntimeFailure):
    """An event is timestamped before the session clock."""


class ProtocolError(RuntimeFailure):
    """An event is not acceptable in the current session state."""


class MeasurementError(RuntimeFailure):
    """A transcript lacks the events needed for a latency report."""


class SynthesisError(RuntimeFailure):
    """A synthesis response could not be parsed.

    Attributes:
        raw_text: Backend output that failed to parse.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class SessionAbortedError(RuntimeFailure):
    """A session stopped early; the partial transcript is preserved.

    Attributes:
        transcript: Events recorded before the failure.
        answers: Answers completed before the failure.
    """

    def __init__(
        self,
        message: str,
        transcript: Sequence[Any] = (),
        answers: Sequence[Any] = (),
    ):
        super().__init__(message)
        self.transcript = tuple(transcript)
        self.answers = tuple(answers)


class LatencyDivisionError(StreamthinkError, ZeroDivisionError):
    """A speedup was requested against a zero latency."""


__all__ = [
    "StreamthinkError",
    "ValidationError",
    "RejectedFrameError",
    "ParameterError",
    "MemoryOrderError",
    "StructureError",
    "InfeasibleSegmentError",
    "AttributionError",
    "GroupSizeError",
    "GroupError",
    "DomainError",
    "MaskIndexError",
    "ConfigError",
    "TimelineError",
    "TripleRejectedError",
    "RuntimeFailure",
    "BackendError",
    "TraceExhaustedError",
    "BackendTransportError",
    "BackendProtocolError",
    "ClockError",
    "ProtocolError",
    "MeasurementError",
    "SynthesisError",
    "SessionAbortedError",
    "LatencyDivisionError",
]
