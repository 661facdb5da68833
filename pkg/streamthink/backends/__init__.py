from streamthink.backends.base import (
    GenerationBackend,
    GenerationRequest,
    GenerationResult,
    RequestKind,
)
from streamthink.backends.http_chat_backend import HttpChatBackend
from streamthink.backends.mock_backend import MockSummarizer, RateModelBackend
from streamthink.backends.prompts import render_answer_prompt, render_thought_prompt
from streamthink.backends.replay_backend import ReplayBackend
from streamthink.utils.string_utils import extract_boxed

__all__ = [
    "GenerationBackend",
    "GenerationRequest",
    "GenerationResult",
    "RequestKind",
    "HttpChatBackend",
    "MockSummarizer",
    "RateModelBackend",
    "ReplayBackend",
    "render_answer_prompt",
    "render_thought_prompt",
    "extract_boxed",
]
