from __future__ import annotations

import json
import os
import ssl
import time
from typing import Any, Dict, Optional
from urllib.error import HTTPError, URLError
from urllib.request import Request, urlopen

from streamthink.backends.base import GenerationBackend, GenerationRequest, GenerationResult
from streamthink.exceptions import (
    BackendProtocolError,
    BackendTransportError,
    ConfigError,
)
from streamthink.utils.constants import (
    BACKEND_URL_ENV,
    DEFAULT_API_KEY_ENV,
    DEFAULT_HTTP_MODEL,
)
from streamthink.utils.logging_config import logger
from streamthink.utils.string_utils import word_count

_CA_FILE = os.getenv("STREAMTHINK_CA_BUNDLE") or os.getenv("REQUESTS_CA_BUNDLE")
if not _CA_FILE:
    try:
        import certifi

        _CA_FILE = certifi.where()
    except ImportError:
        _CA_FILE = None

CHAT_COMPLETIONS_PATH = "/v1/chat/completions"


def resolve_endpoint(endpoint: Optional[str]) -> str:
    """Pick the backend endpoint; the environment override wins."""
    resolved = (os.getenv(BACKEND_URL_ENV) or "").strip() or (endpoint or "").strip()
    if not resolved:
        raise ConfigError(
            f"Invalid input: no HTTP backend endpoint configured (set backend.url or {BACKEND_URL_ENV})",
            key="backend.url",
        )
    return resolved.rstrip("/")


def build_payload(request: GenerationRequest, model: str) -> Dict[str, Any]:
    """Request body: ``model``, ``messages`` and ``max_tokens``."""
    return {
        "model": model,
        "messages": [{"role": role, "content": content} for role, content in request.messages],
        "max_tokens": request.max_new_tokens,
    }


def parse_completion(body: bytes) -> tuple[str, Optional[int]]:
    """
    Read ``choices[0].message.content`` and, when present, the completion tokens.

    Raises:
        BackendProtocolError: If the body is not the expected JSON shape.
    """
    try:
        payload = json.loads(body.decode("utf-8"))
        content = payload["choices"][0]["message"]["content"]
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BackendProtocolError(f"Backend returned invalid JSON: {e}") from e
    except (KeyError, IndexError, TypeError) as e:
        raise BackendProtocolError(f"Backend response lacks choices[0].message.content: {e!r}") from e
    if not isinstance(content, str):
        raise BackendProtocolError("Backend message content is not a string")
    usage = payload.get("usage") if isinstance(payload, dict) else None
    completion_tokens = usage.get("completion_tokens") if isinstance(usage, dict) else None
    return content, completion_tokens if isinstance(completion_tokens, int) else None


class HttpChatBackend(GenerationBackend):
    """
    Client for an OpenAI-compatible chat-completions endpoint.

    Instances hold configuration only and can be shared across sessions.
    Transport failures are retried with a linearly growing pause; HTTP 4xx
    answers are not retried.
    """

    def __init__(
        self,
        endpoint: Optional[str] = None,
        model: str = DEFAULT_HTTP_MODEL,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout_s: float = 60.0,
        max_retries: int = 2,
        retry_delay_s: float = 1.0,
        backend_name: str = "http",
    ):
        super().__init__("http", backend_name)
        self.endpoint = resolve_endpoint(endpoint)
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.max_retries = max(0, int(max_retries))
        self.retry_delay_s = retry_delay_s

    @property
    def url(self) -> str:
        return f"{self.endpoint}{CHAT_COMPLETIONS_PATH}"

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json", "Accept": "application/json"}
        api_key = (os.getenv(self.api_key_env) or "").strip()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def post_chat_completion(self, payload: Dict[str, Any]) -> bytes:
        """
        POST a payload once.

        Raises:
            BackendTransportError: On HTTP or network errors.
        """
        data = json.dumps(payload).encode("utf-8")
        http_request = Request(self.url, data=data, headers=self._headers(), method="POST")
        context = ssl.create_default_context(cafile=_CA_FILE) if self.url.startswith("https") else None
        try:
            with urlopen(http_request, timeout=self.timeout_s, context=context) as response:
                return response.read()
        except HTTPError as e:
            raise BackendTransportError(f"HTTP Error {e.code}: {e.msg}", status=e.code) from e
        except URLError as e:
            raise BackendTransportError(f"URL Error: {e.reason}") from e
        except TimeoutError as e:
            raise BackendTransportError(f"Timeout after {self.timeout_s} s") from e

    def generate(self, request: GenerationRequest) -> GenerationResult:
        payload = build_payload(request, self.model)
        started = time.perf_counter()
        last_error: Optional[BackendTransportError] = None
        for attempt in range(self.max_retries + 1):
            try:
                body = self.post_chat_completion(payload)
                break
            except BackendTransportError as e:
                last_error = e
                if e.status is not None and 400 <= e.status < 500:
                    raise
                logger.warning(
                    f"Backend attempt {attempt + 1}/{self.max_retries + 1} failed: {e}"
                )
                if attempt < self.max_retries:
                    time.sleep(self.retry_delay_s * (attempt + 1))
        else:
            assert last_error is not None
            raise last_error
        text, completion_tokens = parse_completion(body)
        elapsed_ms = int(round((time.perf_counter() - started) * 1000))
        tokens = completion_tokens if completion_tokens is not None else word_count(text)
        return self._finish(request, text, elapsed_ms, tokens)
