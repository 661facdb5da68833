"""Prompt templates for streaming thoughts, direct answers and data generation."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template
from typing import Any, Dict, Mapping, Optional

from streamthink.backends.base import GenerationRequest, RequestKind
from streamthink.memory import MemoryState, render
from streamthink.stream_model import Clip, QueryEvent
from streamthink.utils.constants import (
    ANSWER_CUE,
    ANSWER_INSTRUCTION,
    BOXED_INSTRUCTION,
    DEFAULT_ANSWER_MAX_NEW_TOKENS,
    DEFAULT_THOUGHT_MAX_NEW_TOKENS,
    NO_CLIP_MARKER,
    SYSTEM_PREAMBLE,
)
from streamthink.utils.string_utils import format_seconds, format_time_span

COT_INSTRUCTION = "Reason step by step about the video before giving the final answer."


@lru_cache(maxsize=None)
def load_prompt_template(name: str) -> str:
    """Load a packaged prompt template from ``datafiles/prompts/<name>.txt``."""
    package = resources.files("streamthink.datafiles")
    resource = package.joinpath("prompts").joinpath(f"{name}.txt")
    return resource.read_text(encoding="utf-8")


def render_clip_block(clip: Optional[Clip]) -> str:
    """``Time a-bs <clip k: N visual tokens>`` followed by captions, if any."""
    if clip is None:
        return NO_CLIP_MARKER
    block = (
        f"{format_time_span(clip.start_ms, clip.end_ms)} "
        f"<clip {clip.clip_index}: {clip.total_visual_tokens} visual tokens>"
    )
    if clip.captions:
        block += "\nCaptions: " + " ".join(clip.captions)
    return block


def render_thought_prompt(
    memory: MemoryState,
    clip: Clip,
    max_new_tokens: int = DEFAULT_THOUGHT_MAX_NEW_TOKENS,
    issued_at_ms: int = 0,
    session_id: str = "default",
) -> GenerationRequest:
    """
    Build the streaming-thought request for a closed clip.

    Args:
        memory: Long-term memory before the thought
        clip: The clip to think about
        max_new_tokens: Generation cap
        issued_at_ms: Issue instant
        session_id: Owning session

    Returns:
        A request whose system message is the analyst preamble and whose user
        message holds the memory block followed by the clip block.
    """
    content = f"{render(memory)}\n{render_clip_block(clip)}"
    return GenerationRequest(
        messages=(("system", SYSTEM_PREAMBLE), ("user", content)),
        max_new_tokens=max_new_tokens,
        kind=RequestKind.THOUGHT,
        issued_at_ms=issued_at_ms,
        session_id=session_id,
        metadata={
            "clip_index": clip.clip_index,
            "captions": list(clip.captions),
            "visual_tokens": clip.total_visual_tokens,
        },
    )


def _question_block(query: QueryEvent, instruction: str) -> str:
    return (
        f"Time {format_seconds(query.query_time_ms)}s {instruction}\n"
        f"{query.question}\n"
        f"{BOXED_INSTRUCTION}\n"
        f"{ANSWER_CUE}"
    )


def render_answer_prompt(
    memory: MemoryState,
    clip: Optional[Clip],
    query: QueryEvent,
    max_new_tokens: int = DEFAULT_ANSWER_MAX_NEW_TOKENS,
    issued_at_ms: int = 0,
    session_id: str = "default",
    kind: RequestKind = RequestKind.ANSWER,
) -> GenerationRequest:
    """
    Build the direct-answer request for a query.

    The user message ends with the boxed-answer instruction and ``Your answer:``.
    A post-query chain-of-thought request (kind COT) extends the instruction
    line with a request to reason step by step.
    """
    instruction = ANSWER_INSTRUCTION
    if kind is RequestKind.COT:
        instruction = f"{ANSWER_INSTRUCTION} {COT_INSTRUCTION}"
    content = (
        f"{render(memory)}\n{render_clip_block(clip)}\n{_question_block(query, instruction)}"
    )
    return GenerationRequest(
        messages=(("system", SYSTEM_PREAMBLE), ("user", content)),
        max_new_tokens=max_new_tokens,
        kind=kind,
        issued_at_ms=issued_at_ms,
        session_id=session_id,
        metadata={
            "clip_index": None if clip is None else clip.clip_index,
            "captions": [] if clip is None else list(clip.captions),
            "memory_texts": memory.texts,
            "question": query.question,
            "gold": query.gold_answer,
        },
    )


def render_template_request(
    name: str,
    fields: Mapping[str, Any],
    kind: RequestKind,
    max_new_tokens: int = 512,
    metadata: Optional[Dict[str, Any]] = None,
    session_id: str = "synthesis",
) -> GenerationRequest:
    """
    Fill a packaged template and wrap it as a single user message.

    Placeholders use ``$name`` syntax; unknown placeholders are left as is.
    """
    content = Template(load_prompt_template(name)).safe_substitute(
        {key: str(value) for key, value in fields.items()}
    )
    return GenerationRequest(
        messages=(("user", content),),
        max_new_tokens=max_new_tokens,
        kind=kind,
        session_id=session_id,
        metadata=dict(metadata or {}),
    )
