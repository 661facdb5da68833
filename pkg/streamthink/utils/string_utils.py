import json
import re
import unicodedata
from typing import Any, Dict, List, Optional

_WHITESPACE = re.compile(r"\s+")
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+|\n+")
_BOXED_OPEN = "\\boxed{"


def format_seconds(ms: int) -> str:
    """Render an integer millisecond instant as seconds with one decimal."""
    return f"{ms / 1000:.1f}"


def seconds_to_ms(seconds: float) -> int:
    """Convert a seconds value to the nearest integer millisecond."""
    return int(round(float(seconds) * 1000))


def format_time_span(start_ms: int, end_ms: int) -> str:
    """Render a span in the prompt form ``Time a-bs``."""
    return f"Time {format_seconds(start_ms)}-{format_seconds(end_ms)}s"


def normalize_whitespace(text: str) -> str:
    """Collapse runs of whitespace and strip the ends."""
    return _WHITESPACE.sub(" ", text).strip()


def normalize_answer(text: str) -> str:
    """
    Normalize free text for exact-match comparison.

    Applies NFKC, case folding, whitespace collapsing and strips surrounding
    punctuation.

    Args:
        text: Text to normalize.

    Returns:
        The normalized text.
    """
    text = unicodedata.normalize("NFKC", text).casefold()
    text = normalize_whitespace(text)
    return text.strip(" .,:;!?\"'()[]")


def extract_boxed(text: str) -> Optional[str]:
    """
    Return the interior of the last ``\\boxed{...}`` span in text.

    Braces inside the span are matched by depth, so nested groups such as
    ``\\boxed{\\frac{1}{2}}`` are returned whole. An unterminated span is
    ignored.

    Args:
        text: Model output.

    Returns:
        The interior of the last complete boxed span, or None if absent.
    """
    result: Optional[str] = None
    search_from = 0
    while True:
        start = text.find(_BOXED_OPEN, search_from)
        if start == -1:
            return result
        depth = 1
        pos = start + len(_BOXED_OPEN)
        while pos < len(text) and depth:
            if text[pos] == "{":
                depth += 1
            elif text[pos] == "}":
                depth -= 1
            pos += 1
        if depth == 0:
            result = text[start + len(_BOXED_OPEN) : pos - 1]
            search_from = pos
        else:
            search_from = start + len(_BOXED_OPEN)


def inject_boxed(value: str) -> str:
    return f"{_BOXED_OPEN}{value}}}"


def split_sentences(text: str) -> List[str]:
    """Split text into stripped, non-empty sentences."""
    return [s.strip() for s in _SENTENCE_SPLIT.split(text) if s and s.strip()]


def word_count(text: str) -> int:
    return len(text.split())


def parse_json_object(text: str) -> Dict[str, Any]:
    """
    Parse the JSON object in a model response.

    Surrounding prose and code fences are ignored: the object is taken from
    the first ``{`` to the last ``}``.

    Raises:
        ValueError: If no JSON object can be decoded.
    """
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end < start:
        raise ValueError("no JSON object in response")
    payload = json.loads(text[start : end + 1])
    if not isinstance(payload, dict):
        raise ValueError("response JSON is not an object")
    return payload
