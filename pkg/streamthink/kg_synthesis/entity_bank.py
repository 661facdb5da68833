"""Sliding-window entity bank: extraction, registration and noise refinement."""

from __future__ import annotations

import re
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set

from Levenshtein import ratio as levenshtein_ratio

from streamthink.backends.base import GenerationBackend, RequestKind
from streamthink.backends.prompts import render_template_request
from streamthink.exceptions import (
    ParameterError,
    SynthesisError,
    TimelineError,
    TripleRejectedError,
)
from streamthink.kg_synthesis.dataclasses import (
    EntityBank,
    EntityRecord,
    EntityTriple,
    RefinementProposal,
    SceneClip,
)
from streamthink.utils.constants import DEFAULT_NEAR_DUPLICATE_RATIO
from streamthink.utils.logging_config import logger
from streamthink.utils.string_utils import (
    format_seconds,
    normalize_whitespace,
    parse_json_object,
)

_LEADING_ARTICLE = re.compile(r"^(the|a|an)\s+", re.IGNORECASE)
_SUBTITLE_PREFIXES = ("subtitle", "caption", "on-screen text", "text overlay", "watermark")


def update_entity_bank(
    bank: EntityBank,
    clip: SceneClip,
    extraction: Sequence[EntityTriple],
    W: Optional[int] = None,
) -> EntityBank:
    """
    Register a scene's triples and slide the window.

    Args:
        bank: Current bank
        clip: Scene that extends the timeline
        extraction: Triples extracted from the scene
        W: Window size; the bank's own size when None

    Returns:
        A new bank. Triples already present (same head, relation, tail and
        time span) are stored once.

    Raises:
        TimelineError: If the scene does not extend the timeline.
        TripleRejectedError: If a triple has an empty head or tail.
        ParameterError: If W < 1.
    """
    window_size = bank.window_size if W is None else W
    if window_size < 1:
        raise ParameterError(f"Invalid input: window size must be >= 1, got {window_size}")
    if bank.window and clip.clip_id <= bank.window[-1]:
        raise TimelineError(
            f"Invalid input: scene {clip.clip_id} does not follow scene {bank.window[-1]}"
        )
    if bank.last_end_ms is not None and clip.start_ms < bank.last_end_ms:
        raise TimelineError(
            f"Invalid input: scene {clip.clip_id} starts at {clip.start_ms} ms, "
            f"before the previous scene ended ({bank.last_end_ms} ms)"
        )
    for index, triple in enumerate(extraction):
        if not triple.head or not triple.tail:
            raise TripleRejectedError(
                f"Invalid input: triple {index} of scene {clip.clip_id} has an empty entity",
                index=index,
            )

    entities: Dict[str, EntityRecord] = dict(bank.entities)
    triples = list(bank.triples)
    seen = {t.identity for t in triples}
    for triple in extraction:
        if triple.clip_id is None:
            triple = EntityTriple(
                triple.head,
                triple.relation,
                triple.tail,
                triple.start_ms,
                triple.end_ms,
                triple.description,
                clip.clip_id,
            )
        for name in (triple.head, triple.tail):
            record = entities.get(name)
            if record is None:
                entities[name] = EntityRecord(name, triple.start_ms, triple.end_ms)
            else:
                entities[name] = EntityRecord(
                    name,
                    min(record.first_seen_ms, triple.start_ms),
                    max(record.last_seen_ms, triple.end_ms),
                )
        if triple.identity not in seen:
            seen.add(triple.identity)
            triples.append(triple)

    window = (bank.window + (clip.clip_id,))[-window_size:]
    return EntityBank(
        entities=entities,
        triples=tuple(triples),
        window=window,
        window_size=window_size,
        last_end_ms=clip.end_ms,
    )


def triples_from_events(clip: SceneClip, events: Iterable[Mapping[str, Any]]) -> List[EntityTriple]:
    """Convert ``{subject, relation, object, description}`` events into triples of a scene."""
    triples = []
    for event in events:
        triples.append(
            EntityTriple(
                head=str(event.get("subject", "")),
                relation=str(event.get("relation", "")),
                tail=str(event.get("object", "")),
                start_ms=clip.start_ms,
                end_ms=clip.end_ms,
                description=str(event.get("description", "")),
                clip_id=clip.clip_id,
            )
        )
    return triples


def _registry_text(bank: EntityBank) -> str:
    names = bank.window_entities() or bank.entity_names
    return ", ".join(names) if names else "None"


def extract_triples(
    clip: SceneClip, bank: EntityBank, backend: GenerationBackend
) -> List[EntityTriple]:
    """
    Ask the backend for the relations visible in a scene.

    Raises:
        SynthesisError: If the response is not an ``{"events": [...]}`` object.
    """
    request = render_template_request(
        "kg_extraction",
        {
            "step_index": clip.clip_id,
            "start_time": format_seconds(clip.start_ms),
            "end_time": format_seconds(clip.end_ms),
            "known_entities": _registry_text(bank),
            "description": clip.description,
        },
        kind=RequestKind.KG_EXTRACTION,
        metadata={"description": clip.description, "clip_id": clip.clip_id},
    )
    text = backend.generate(request).text
    try:
        events = parse_json_object(text)["events"]
    except (ValueError, KeyError) as e:
        raise SynthesisError(f"Extraction for scene {clip.clip_id} is unreadable: {e}", raw_text=text) from e
    if not isinstance(events, list):
        raise SynthesisError(f"Extraction for scene {clip.clip_id} has no event list", raw_text=text)
    return triples_from_events(clip, (e for e in events if isinstance(e, dict)))


def _comparable(name: str) -> str:
    return _LEADING_ARTICLE.sub("", name.casefold()).strip()


def _looks_like_subtitle(name: str) -> bool:
    lowered = name.casefold()
    if lowered.startswith(_SUBTITLE_PREFIXES):
        return True
    return len(name) > 2 and name[0] in "\"'“" and name[-1] in "\"'”"


def propose_local_refinement(
    bank: EntityBank, ratio_threshold: float = DEFAULT_NEAR_DUPLICATE_RATIO
) -> RefinementProposal:
    """
    Propose merges of near-duplicate names and removal of subtitle-like entities.

    Two names merge when their Levenshtein ratio, ignoring case and a leading
    article, reaches the threshold. The name used by more triples (then the
    earlier seen, then the shorter) is kept.
    """
    usage: Dict[str, int] = {name: 0 for name in bank.entities}
    for triple in bank.triples:
        usage[triple.head] = usage.get(triple.head, 0) + 1
        usage[triple.tail] = usage.get(triple.tail, 0) + 1

    def rank(name: str) -> tuple:
        record = bank.entities.get(name)
        first_seen = record.first_seen_ms if record else 0
        return (-usage.get(name, 0), first_seen, len(name), name)

    proposal = RefinementProposal()
    removed = [name for name in bank.entity_names if _looks_like_subtitle(name)]
    proposal.remove.extend(removed)
    names = sorted((n for n in bank.entity_names if n not in removed), key=rank)
    for position, canonical in enumerate(names):
        if canonical in proposal.merge:
            continue
        for alias in names[position + 1 :]:
            if alias in proposal.merge:
                continue
            if levenshtein_ratio(_comparable(canonical), _comparable(alias)) >= ratio_threshold:
                proposal.merge[alias] = canonical
    return proposal


def _resolve(name: str, merge: Mapping[str, str]) -> str:
    visited: Set[str] = set()
    while name in merge and name not in visited:
        visited.add(name)
        name = merge[name]
    return name


def apply_refinement(
    bank: EntityBank,
    proposal: RefinementProposal,
    reflexive_relations: Iterable[str] = (),
) -> EntityBank:
    """
    Apply merges and removals while keeping every triple valid.

    Merged triples are re-pointed to the canonical name. Triples touching a
    removed entity and self-loops created by a merge are dropped.
    """
    if proposal.is_empty:
        return bank
    merge = {normalize_whitespace(k): normalize_whitespace(v) for k, v in proposal.merge.items()}
    removed = {_resolve(normalize_whitespace(name), merge) for name in proposal.remove}
    reflexive = set(reflexive_relations)

    triples: List[EntityTriple] = []
    seen = set()
    dangling = loops = 0
    for triple in bank.triples:
        head, tail = _resolve(triple.head, merge), _resolve(triple.tail, merge)
        if head in removed or tail in removed:
            dangling += 1
            continue
        if head == tail and triple.head != triple.tail and triple.relation not in reflexive:
            loops += 1
            continue
        updated = triple.with_entities(head, tail)
        if updated.identity not in seen:
            seen.add(updated.identity)
            triples.append(updated)
    if dangling:
        logger.info(f"Refinement dropped {dangling} dangling triples")
    if loops:
        logger.info(f"Refinement dropped {loops} triples that became self-loops")

    entities: Dict[str, EntityRecord] = {}
    for record in bank.entities.values():
        name = _resolve(record.name, merge)
        if name in removed:
            continue
        current = entities.get(name)
        if current is None:
            entities[name] = EntityRecord(name, record.first_seen_ms, record.last_seen_ms)
        else:
            entities[name] = EntityRecord(
                name,
                min(current.first_seen_ms, record.first_seen_ms),
                max(current.last_seen_ms, record.last_seen_ms),
            )
    return EntityBank(
        entities=entities,
        triples=tuple(triples),
        window=bank.window,
        window_size=bank.window_size,
        last_end_ms=bank.last_end_ms,
    )


def request_refinement(bank: EntityBank, backend: GenerationBackend) -> RefinementProposal:
    """
    Ask the backend which entities are duplicates or subtitles.

    Raises:
        SynthesisError: If the response is not a ``{"merge", "remove"}`` object.
    """
    request = render_template_request(
        "kg_refinement",
        {"entities": "\n".join(f"- {name}" for name in bank.entity_names)},
        kind=RequestKind.KG_REFINEMENT,
        metadata={"entities": bank.entity_names},
    )
    text = backend.generate(request).text
    try:
        payload = parse_json_object(text)
    except ValueError as e:
        raise SynthesisError(f"Refinement response is unreadable: {e}", raw_text=text) from e
    merge = payload.get("merge", {})
    remove = payload.get("remove", [])
    if not isinstance(merge, dict) or not isinstance(remove, list):
        raise SynthesisError("Refinement response has the wrong shape", raw_text=text)
    return RefinementProposal(
        merge={str(k): str(v) for k, v in merge.items()},
        remove=[str(name) for name in remove],
    )


def refine_bank(
    bank: EntityBank,
    filter_backend: Optional[GenerationBackend] = None,
    local: bool = True,
    ratio_threshold: float = DEFAULT_NEAR_DUPLICATE_RATIO,
    reflexive_relations: Iterable[str] = (),
) -> EntityBank:
    """
    Filter noise entities from the bank.

    Backend proposals win over local ones for the same alias. When the
    backend fails the bank is returned unmodified.

    Args:
        bank: Bank to refine
        filter_backend: Backend proposing merges and removals
        local: Also apply the local near-duplicate and subtitle heuristics
        ratio_threshold: Levenshtein ratio for local merges
        reflexive_relations: Relations allowed to form self-loops

    Returns:
        The refined bank.
    """
    proposal = RefinementProposal()
    if local:
        proposal = propose_local_refinement(bank, ratio_threshold)
    if filter_backend is not None:
        try:
            remote = request_refinement(bank, filter_backend)
        except Exception as e:
            logger.warning(f"Entity refinement failed, bank left unmodified: {e}")
            return bank
        proposal.merge.update(remote.merge)
        proposal.remove.extend(name for name in remote.remove if name not in proposal.remove)
    return apply_refinement(bank, proposal, reflexive_relations)


def generate_delta_thought(
    clip: SceneClip, focused_entities: Sequence[str], backend: GenerationBackend
) -> str:
    """Incremental-progress thought for one scene, focused on the given entities."""
    request = render_template_request(
        "delta_thought",
        {
            "time_range": f"{format_seconds(clip.start_ms)}-{format_seconds(clip.end_ms)}s",
            "entities": ", ".join(focused_entities) if focused_entities else "None",
            "description": clip.description,
        },
        kind=RequestKind.DELTA_THOUGHT,
        max_new_tokens=256,
        metadata={"description": clip.description, "clip_id": clip.clip_id},
    )
    return backend.generate(request).text.strip()
