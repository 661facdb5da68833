from __future__ import annotations

import re
from typing import Any, Dict, List, Optional, Sequence, Tuple

import networkx as nx

from streamthink.backends.base import GenerationBackend, RequestKind
from streamthink.backends.prompts import render_template_request
from streamthink.exceptions import SynthesisError
from streamthink.kg_synthesis.dataclasses import CotSpan, EvidenceChain, SynthesizedQA
from streamthink.utils.constants import BANNED_QA_TOKENS, REASONING_DIMENSIONS
from streamthink.utils.string_utils import (
    format_seconds,
    parse_json_object,
    seconds_to_ms,
    split_sentences,
)

REQUIRED_QA_KEYS = ("question", "cot", "answer", "reasoning_type")

_CITED_INTERVAL = re.compile(r"(\d+(?:\.\d+)?)\s*s?\s*(?:-|–|to)\s*(\d+(?:\.\d+)?)\s*s")


def render_reasoning_path(chain: EvidenceChain) -> str:
    """One line per edge: its interval, the relation, and the scene context."""
    lines = []
    for edge in chain.edges:
        line = f"[{edge.interval_label}] {edge.head} {edge.relation} {edge.tail}."
        if edge.description:
            line += f" {edge.description}"
        if edge.scene_description and edge.scene_description != edge.description:
            line += f" Scene: {edge.scene_description}"
        lines.append(line)
    return "\n".join(lines)


def _cot_texts(raw: Any, text: str) -> List[str]:
    if isinstance(raw, str):
        return split_sentences(raw)
    if isinstance(raw, list) and all(isinstance(item, str) for item in raw):
        return [item.strip() for item in raw if item.strip()]
    raise SynthesisError("QA response 'cot' is neither a string nor a list of strings", raw_text=text)


def align_cot_spans(
    texts: Sequence[str], chain: EvidenceChain, raw_text: str = ""
) -> Tuple[CotSpan, ...]:
    """
    Tie each rationale to an interval of the chain.

    A rationale citing an interval (``12.0-14.5s``) takes that interval; an
    uncited one takes the interval of the edge at the same position, or of
    the last edge.

    Raises:
        SynthesisError: If a cited interval is not in the chain.
    """
    intervals = {edge.interval for edge in chain.edges}
    spans = []
    for position, text in enumerate(texts):
        match = _CITED_INTERVAL.search(text)
        if match:
            interval = (seconds_to_ms(float(match.group(1))), seconds_to_ms(float(match.group(2))))
            if interval not in intervals:
                raise SynthesisError(
                    f"Rationale {position} cites {format_seconds(interval[0])}-"
                    f"{format_seconds(interval[1])}s, which is not in {chain.chain_id}",
                    raw_text=raw_text,
                )
        else:
            interval = chain.edges[min(position, len(chain.edges) - 1)].interval
        spans.append(CotSpan(text, interval[0], interval[1]))
    return tuple(spans)


def synthesize_qa(
    chain: EvidenceChain,
    graph: Optional[nx.MultiDiGraph],
    backend: GenerationBackend,
    dimensions: Sequence[str] = REASONING_DIMENSIONS,
    banned_tokens: Sequence[str] = BANNED_QA_TOKENS,
) -> SynthesizedQA:
    """
    Generate a multi-hop QA item with a streaming chain of thought for a chain.

    Args:
        chain: Evidence chain; must have at least one edge
        graph: Graph the chain was sampled from; adds entity first-seen times
        backend: Generation backend
        dimensions: Logic types offered to the generator
        banned_tokens: Words the generator is told to avoid

    Returns:
        The parsed QA item.

    Raises:
        SynthesisError: If the response lacks a required key, is not JSON, or
            cites an interval outside the chain. The raw response is attached.
    """
    if not chain.edges:
        raise SynthesisError(f"Chain {chain.chain_id} has no edges")
    metadata: Dict[str, Any] = {"chain": chain.to_record()}
    if graph is not None:
        metadata["first_seen_s"] = {
            node: graph.nodes[node]["first_seen_ms"] / 1000
            for node in chain.nodes
            if node in graph.nodes
        }
    request = render_template_request(
        "qa_generation",
        {
            "banned_tokens": ", ".join(f'"{token}"' for token in banned_tokens),
            "dimensions": ", ".join(dimensions),
            "path": render_reasoning_path(chain),
        },
        kind=RequestKind.QA_SYNTHESIS,
        max_new_tokens=1024,
        metadata=metadata,
    )
    text = backend.generate(request).text
    try:
        payload = parse_json_object(text)
    except ValueError as e:
        raise SynthesisError(f"QA response for {chain.chain_id} is not JSON: {e}", raw_text=text) from e
    missing = [key for key in REQUIRED_QA_KEYS if key not in payload]
    if missing:
        raise SynthesisError(f"QA response for {chain.chain_id} is missing {missing}", raw_text=text)
    texts = _cot_texts(payload["cot"], text)
    if not texts:
        raise SynthesisError(f"QA response for {chain.chain_id} has an empty cot", raw_text=text)
    return SynthesizedQA(
        question=str(payload["question"]).strip(),
        streaming_cot=align_cot_spans(texts, chain, raw_text=text),
        answer=str(payload["answer"]).strip(),
        reasoning_type=str(payload["reasoning_type"]).strip(),
        chain_id=chain.chain_id,
    )
