"""Deterministic backends: a caption summarizer and a pure rate model."""

from __future__ import annotations

import json
import re
from typing import Any, Callable, Dict, List, Optional

from streamthink.backends.base import (
    GenerationBackend,
    GenerationRequest,
    GenerationResult,
    RequestKind,
)
from streamthink.exceptions import BackendProtocolError, ParameterError
from streamthink.utils.constants import (
    DEFAULT_TOKENS_PER_SECOND,
    MOCK_FALLBACK_ANSWER,
    REASONING_DIMENSIONS,
)
from streamthink.utils.string_utils import format_seconds, inject_boxed, word_count

_RELATION_CLAUSE = re.compile(r"^\s*(?P<head>.+?)\s+-\[(?P<relation>[^\]]+)\]->\s+(?P<tail>.+?)\s*$")


def parse_relation_clauses(description: str) -> List[Dict[str, str]]:
    """
    Parse ``head -[relation]-> tail`` clauses separated by ``;``.

    Clauses that do not match the pattern are ignored.
    """
    events = []
    for clause in description.split(";"):
        match = _RELATION_CLAUSE.match(clause.strip().rstrip("."))
        if match:
            events.append(
                {
                    "subject": match.group("head").strip(),
                    "relation": match.group("relation").strip(),
                    "object": match.group("tail").strip(),
                    "description": clause.strip(),
                }
            )
    return events


def _plain_description(description: str) -> str:
    """Rewrite relation clauses as plain sentences."""
    events = parse_relation_clauses(description)
    if not events:
        return description.strip()
    return " ".join(f"The {e['subject']} {e['relation']} the {e['object']}." for e in events)


class _RateModel:
    def __init__(self, tokens_per_second: float, prefill_s: float):
        if tokens_per_second <= 0:
            raise ParameterError("Invalid input: tokens_per_second must be positive")
        if prefill_s < 0:
            raise ParameterError("Invalid input: prefill_s must be >= 0")
        self.tokens_per_second = float(tokens_per_second)
        self.prefill_s = float(prefill_s)

    def duration_ms(self, tokens: int) -> int:
        return int(round((self.prefill_s + tokens / self.tokens_per_second) * 1000))


class MockSummarizer(GenerationBackend):
    """
    Deterministic backend driven by request metadata.

    Thoughts concatenate the clip captions; answers box the gold answer when
    it appears in the clip captions or in memory, otherwise a fixed fallback.
    Durations follow a constant token rate plus an optional prefill.
    """

    def __init__(
        self,
        backend_name: str = "mock",
        tokens_per_second: float = DEFAULT_TOKENS_PER_SECOND,
        prefill_s: float = 0.0,
        max_thought_chars: Optional[int] = None,
        fallback_answer: str = MOCK_FALLBACK_ANSWER,
    ):
        super().__init__("mock", backend_name)
        self._rate = _RateModel(tokens_per_second, prefill_s)
        if max_thought_chars is not None and max_thought_chars < 1:
            raise ParameterError("Invalid input: max_thought_chars must be >= 1")
        self.max_thought_chars = max_thought_chars
        self.fallback_answer = fallback_answer

    def generate(self, request: GenerationRequest) -> GenerationResult:
        text = self._get_handler(request.kind)(request.metadata)
        tokens = word_count(text)
        return self._finish(request, text, self._rate.duration_ms(tokens), tokens)

    def _get_handler(self, kind: RequestKind) -> Callable[[Dict[str, Any]], str]:
        handlers: Dict[RequestKind, Callable[[Dict[str, Any]], str]] = {
            RequestKind.THOUGHT: self._thought,
            RequestKind.ANSWER: self._answer,
            RequestKind.COT: self._cot,
            RequestKind.KG_EXTRACTION: self._extraction,
            RequestKind.KG_REFINEMENT: self._refinement,
            RequestKind.DELTA_THOUGHT: self._delta_thought,
            RequestKind.QA_SYNTHESIS: self._qa_synthesis,
            RequestKind.RUBRIC: self._rubric,
        }
        if kind not in handlers:
            raise BackendProtocolError(f"Unknown request kind: {kind}")
        return handlers[kind]

    def _thought(self, metadata: Dict[str, Any]) -> str:
        text = " ".join(metadata.get("captions", []))
        if self.max_thought_chars is not None:
            text = text[: self.max_thought_chars].rstrip()
        return text

    def _answer(self, metadata: Dict[str, Any]) -> str:
        gold = metadata.get("gold")
        if gold:
            candidates = list(metadata.get("captions", [])) + list(
                metadata.get("memory_texts", [])
            )
            for candidate in candidates:
                if str(gold).casefold() in candidate.casefold():
                    return f"The answer is {inject_boxed(str(gold))}"
        return self.fallback_answer

    def _cot(self, metadata: Dict[str, Any]) -> str:
        evidence = list(metadata.get("memory_texts", [])) + list(metadata.get("captions", []))
        return " ".join(["Reviewing the video:", *evidence, self._answer(metadata)])

    def _extraction(self, metadata: Dict[str, Any]) -> str:
        return json.dumps({"events": parse_relation_clauses(metadata.get("description", ""))})

    def _refinement(self, metadata: Dict[str, Any]) -> str:
        return json.dumps({"merge": {}, "remove": []})

    def _delta_thought(self, metadata: Dict[str, Any]) -> str:
        return _plain_description(metadata.get("description", ""))

    def _qa_synthesis(self, metadata: Dict[str, Any]) -> str:
        edges = metadata.get("chain", {}).get("edges", [])
        if not edges:
            return json.dumps({})
        first, last = edges[0], edges[-1]

        def span(edge: Dict[str, Any]) -> str:
            return (
                f"{format_seconds(int(round(edge['start_s'] * 1000)))}-"
                f"{format_seconds(int(round(edge['end_s'] * 1000)))}s"
            )

        cot = [
            f"At {span(e)}, the {e['head']} {e['relation']} the {e['tail']}." for e in edges
        ]
        return json.dumps(
            {
                "question": (
                    f"How is the {first['head']} seen at {span(first)} connected to the "
                    f"{last['tail']} seen at {span(last)}?"
                ),
                "cot": cot,
                "answer": f"Through the {last['head']}, which {last['relation']} the {last['tail']}.",
                "reasoning_type": REASONING_DIMENSIONS[len(edges) % len(REASONING_DIMENSIONS)],
            }
        )

    def _rubric(self, metadata: Dict[str, Any]) -> str:
        return "PASS"


class RateModelBackend(GenerationBackend):
    """
    Backend with fixed token counts per request kind and a constant token rate.

    Attributes:
        thought_tokens: Tokens per streaming thought
        answer_tokens: Tokens per direct answer
        cot_tokens: Reasoning tokens preceding the answer of a COT request
    """

    def __init__(
        self,
        thought_tokens: int,
        answer_tokens: int,
        cot_tokens: int = 0,
        tokens_per_second: float = DEFAULT_TOKENS_PER_SECOND,
        prefill_s: float = 0.0,
        backend_name: str = "rate",
    ):
        super().__init__("rate", backend_name)
        if thought_tokens < 1 or answer_tokens < 1 or cot_tokens < 0:
            raise ParameterError("Invalid input: token counts must be positive")
        self.thought_tokens = thought_tokens
        self.answer_tokens = answer_tokens
        self.cot_tokens = cot_tokens
        self._rate = _RateModel(tokens_per_second, prefill_s)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        gold = request.metadata.get("gold") or "A"
        if request.kind is RequestKind.THOUGHT:
            text = f"Summary of clip {request.metadata.get('clip_index')}."
            tokens = self.thought_tokens
        elif request.kind is RequestKind.ANSWER:
            text = inject_boxed(str(gold))
            tokens = self.answer_tokens
        elif request.kind is RequestKind.COT:
            text = f"Reasoning over the video. {inject_boxed(str(gold))}"
            tokens = self.cot_tokens + self.answer_tokens
        else:
            raise BackendProtocolError(f"Rate model does not serve {request.kind.value} requests")
        return self._finish(request, text, self._rate.duration_ms(tokens), tokens)
