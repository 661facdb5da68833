from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

from streamthink.exceptions import ParameterError, StructureError

VALID_ROLES = ("system", "user", "assistant")


class RequestKind(str, Enum):
    """Purpose of a generation request; deterministic backends dispatch on it."""

    THOUGHT = "thought"
    ANSWER = "answer"
    COT = "cot"
    KG_EXTRACTION = "kg_extraction"
    KG_REFINEMENT = "kg_refinement"
    DELTA_THOUGHT = "delta_thought"
    QA_SYNTHESIS = "qa_synthesis"
    RUBRIC = "rubric"


@dataclass(frozen=True)
class GenerationRequest:
    """
    A chat-style generation request.

    Attributes:
        messages: Ordered (role, content) pairs
        max_new_tokens: Generation cap
        kind: What the request is for
        deadline_ms: Optional virtual-clock instant the result is due by
        issued_at_ms: Clock instant the request is issued at
        session_id: Session the request belongs to
        metadata: Structured inputs read by deterministic backends only
    """

    messages: Tuple[Tuple[str, str], ...]
    max_new_tokens: int
    kind: RequestKind = RequestKind.THOUGHT
    deadline_ms: Optional[int] = None
    issued_at_ms: int = 0
    session_id: str = "default"
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if not self.messages:
            raise StructureError("Invalid input: a request needs at least one message")
        for role, _ in self.messages:
            if role not in VALID_ROLES:
                raise StructureError(f"Invalid input: unknown message role {role!r}")
        if self.max_new_tokens < 1:
            raise ParameterError("Invalid input: max_new_tokens must be >= 1")
        if self.deadline_ms is not None and self.deadline_ms <= self.issued_at_ms:
            raise ParameterError("Invalid input: deadline must lie after the issue instant")
        object.__setattr__(self, "kind", RequestKind(self.kind))

    @property
    def rendered_prompt(self) -> str:
        return "\n".join(f"[{role.capitalize()}]\n{content}" for role, content in self.messages)

    @property
    def role_messages(self) -> Tuple[Tuple[str, str], ...]:
        return self.messages


@dataclass(frozen=True)
class GenerationResult:
    text: str
    issued_at_ms: int
    completed_at_ms: int
    token_count: int
    deadline_missed: bool = False

    def __post_init__(self) -> None:
        if self.completed_at_ms < self.issued_at_ms:
            raise StructureError("Invalid input: result completes before it was issued")
        if self.token_count < 1:
            raise StructureError("Invalid input: token_count must be >= 1")

    @property
    def duration_ms(self) -> int:
        return self.completed_at_ms - self.issued_at_ms


class GenerationBackend(ABC):
    """
    Abstract base class for text-generation backends.

    Subclasses must implement the `generate` method.
    """

    def __init__(self, backend_type: str, backend_name: str):
        if not isinstance(backend_type, str):
            raise TypeError("Invalid input: backend_type must be a string.")
        self._backend_type: str = backend_type
        if not isinstance(backend_name, str):
            raise TypeError("Invalid input: backend_name must be a string.")
        self._backend_name: str = backend_name

    @property
    def backend_type(self) -> str:
        """Return backend_type."""
        return self._backend_type

    @property
    def backend_name(self) -> str:
        """Return backend_name."""
        return self._backend_name

    @abstractmethod
    def generate(self, request: GenerationRequest) -> GenerationResult:
        """
        Generate a completion for a request.

        Args:
            request: The request to serve.

        Returns:
            The result, timed against request.issued_at_ms.
        """
        pass

    @staticmethod
    def _finish(
        request: GenerationRequest, text: str, duration_ms: int, token_count: int
    ) -> GenerationResult:
        completed = request.issued_at_ms + max(0, int(duration_ms))
        return GenerationResult(
            text=text,
            issued_at_ms=request.issued_at_ms,
            completed_at_ms=completed,
            token_count=max(1, token_count),
            deadline_missed=request.deadline_ms is not None and completed > request.deadline_ms,
        )

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self._backend_name!r})"
