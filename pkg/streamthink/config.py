"""Flat ``key = value`` configuration for sessions and backends."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Sequence

from streamthink.backends.base import GenerationBackend
from streamthink.backends.http_chat_backend import HttpChatBackend
from streamthink.backends.mock_backend import MockSummarizer, RateModelBackend
from streamthink.backends.replay_backend import ReplayBackend
from streamthink.exceptions import ConfigError, ValidationError
from streamthink.stream_model import DeadlinePolicy, SessionConfig, SessionMode
from streamthink.utils.constants import (
    DEFAULT_API_KEY_ENV,
    DEFAULT_HTTP_MODEL,
    DEFAULT_TOKENS_PER_SECOND,
)
from streamthink.utils.file_utils import parse_key_value_lines, read_key_value_file

BACKEND_KINDS = ("mock", "replay", "http", "rate")


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise ValueError("must be a positive integer")
    return value


def _non_negative_int(raw: str) -> int:
    value = int(raw)
    if value < 0:
        raise ValueError("must be >= 0")
    return value


def _non_negative_float(raw: str) -> float:
    value = float(raw)
    if value < 0:
        raise ValueError("must be >= 0")
    return value


def _backend_kind(raw: str) -> str:
    if raw not in BACKEND_KINDS:
        raise ValueError(f"must be one of {', '.join(BACKEND_KINDS)}")
    return raw


KNOWN_KEYS: Dict[str, Callable[[str], Any]] = {
    "clip_capacity_L": _positive_int,
    "max_thinking_times": _positive_int,
    "per_step_video_token_cap": _positive_int,
    "deadline_policy": DeadlinePolicy,
    "mode": SessionMode,
    "thought_max_new_tokens": _positive_int,
    "answer_max_new_tokens": _positive_int,
    "memory.budget_entries": _positive_int,
    "memory.budget_chars": _positive_int,
    "backend.kind": _backend_kind,
    "backend.url": str,
    "backend.model": str,
    "backend.api_key_env": str,
    "backend.timeout_s": _non_negative_float,
    "backend.max_retries": _non_negative_int,
    "backend.trace": str,
    "backend.tokens_per_second": float,
    "backend.prefill_s": _non_negative_float,
    "backend.max_thought_chars": _positive_int,
    "backend.thought_tokens": _positive_int,
    "backend.answer_tokens": _positive_int,
    "backend.cot_tokens": _non_negative_int,
}

_SESSION_FIELDS = {
    "clip_capacity_L": "clip_capacity_L",
    "max_thinking_times": "max_thinking_times",
    "per_step_video_token_cap": "per_step_video_token_cap",
    "deadline_policy": "deadline_policy",
    "mode": "mode",
    "thought_max_new_tokens": "thought_max_new_tokens",
    "answer_max_new_tokens": "answer_max_new_tokens",
    "memory.budget_entries": "memory_budget_entries",
    "memory.budget_chars": "memory_budget_chars",
}


@dataclass
class BackendConfig:
    """
    Backend selection and settings.

    Attributes:
        kind: One of mock, replay, http, rate
        url: HTTP endpoint base URL
        model: Model name sent to the HTTP endpoint
        api_key_env: Environment variable holding the bearer token
        timeout_s: HTTP timeout
        max_retries: HTTP transport retries
        trace: Replay trace path
        tokens_per_second: Modelled generation rate (mock, rate)
        prefill_s: Modelled fixed latency per call (mock, rate)
        max_thought_chars: Truncation of mock thoughts
        thought_tokens: Tokens per thought (rate)
        answer_tokens: Tokens per answer (rate)
        cot_tokens: Reasoning tokens before a reasoned answer (rate)
    """

    kind: str = "mock"
    url: Optional[str] = None
    model: str = DEFAULT_HTTP_MODEL
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout_s: float = 60.0
    max_retries: int = 2
    trace: Optional[str] = None
    tokens_per_second: float = DEFAULT_TOKENS_PER_SECOND
    prefill_s: float = 0.0
    max_thought_chars: Optional[int] = None
    thought_tokens: int = 64
    answer_tokens: int = 28
    cot_tokens: int = 412


@dataclass
class CliConfig:
    session: SessionConfig = field(default_factory=SessionConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    values: Dict[str, Any] = field(default_factory=dict)


def convert_values(raw: Mapping[str, str]) -> Dict[str, Any]:
    """
    Check keys and convert raw string values.

    Raises:
        ConfigError: On an unknown key or an unconvertible value, naming the key.
    """
    converted: Dict[str, Any] = {}
    for key, value in raw.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"Invalid input: unknown configuration key '{key}'", key=key)
        try:
            converted[key] = KNOWN_KEYS[key](value)
        except ValueError as e:
            raise ConfigError(
                f"Invalid input: bad value {value!r} for '{key}': {e}", key=key
            ) from e
    return converted


def parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    """Parse repeated ``key=value`` flag values."""
    return parse_key_value_lines(pairs, source="--set")


def build_config(values: Mapping[str, Any]) -> CliConfig:
    session_kwargs = {
        _SESSION_FIELDS[key]: value for key, value in values.items() if key in _SESSION_FIELDS
    }
    backend_kwargs = {
        key.split(".", 1)[1]: value for key, value in values.items() if key.startswith("backend.")
    }
    try:
        session = SessionConfig(**session_kwargs)
    except ValidationError as e:
        raise ConfigError(str(e), key="session") from e
    return CliConfig(session=session, backend=BackendConfig(**backend_kwargs), values=dict(values))


def load_config(
    path: Optional[str | Path] = None, overrides: Optional[Mapping[str, str]] = None
) -> CliConfig:
    """
    Read a configuration file and apply overrides on top.

    Args:
        path: Optional ``key = value`` file
        overrides: Raw values that win over the file

    Returns:
        The converted configuration.
    """
    raw: Dict[str, str] = {}
    if path is not None:
        raw.update(read_key_value_file(path))
    raw.update(overrides or {})
    return build_config(convert_values(raw))


def _mock(config: BackendConfig) -> GenerationBackend:
    return MockSummarizer(
        tokens_per_second=config.tokens_per_second,
        prefill_s=config.prefill_s,
        max_thought_chars=config.max_thought_chars,
    )


def _replay(config: BackendConfig) -> GenerationBackend:
    if not config.trace:
        raise ConfigError("Invalid input: the replay backend needs backend.trace", key="backend.trace")
    return ReplayBackend.from_file(config.trace)


def _http(config: BackendConfig) -> GenerationBackend:
    return HttpChatBackend(
        endpoint=config.url,
        model=config.model,
        api_key_env=config.api_key_env,
        timeout_s=config.timeout_s,
        max_retries=config.max_retries,
    )


def _rate(config: BackendConfig) -> GenerationBackend:
    return RateModelBackend(
        thought_tokens=config.thought_tokens,
        answer_tokens=config.answer_tokens,
        cot_tokens=config.cot_tokens,
        tokens_per_second=config.tokens_per_second,
        prefill_s=config.prefill_s,
    )


def _get_backend_factory(kind: str) -> Callable[[BackendConfig], GenerationBackend]:
    factories: Dict[str, Callable[[BackendConfig], GenerationBackend]] = {
        "mock": _mock,
        "replay": _replay,
        "http": _http,
        "rate": _rate,
    }
    if kind not in factories:
        raise ConfigError(f"Invalid input: unknown backend kind '{kind}'", key="backend.kind")
    return factories[kind]


def make_backend(config: BackendConfig) -> GenerationBackend:
    return _get_backend_factory(config.kind)(config)
