from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Tuple

from streamthink.exceptions import StructureError, TimelineError
from streamthink.types import QaRecordDict, SceneClipDict
from streamthink.utils.constants import (
    BANNED_QA_TOKENS,
    DEFAULT_CHAIN_COUNT,
    DEFAULT_ENTITY_WINDOW,
    DEFAULT_MAX_CHAIN_OVERLAP,
    DEFAULT_MAX_HOPS,
    DEFAULT_MIN_HOPS,
    DEFAULT_NEAR_DUPLICATE_RATIO,
    DEFAULT_RESTARTS_PER_CHAIN,
    REASONING_DIMENSIONS,
)
from streamthink.utils.string_utils import format_seconds, normalize_whitespace, seconds_to_ms


@dataclass
class KgSynthesisConfig:
    """
    Configuration for the knowledge-graph QA synthesis pipeline.

    Attributes:
        window_size: Scene clips kept in the entity bank window (W)
        min_hops: Shortest evidence chain
        max_hops: Longest evidence chain
        max_overlap: Entity overlap every accepted chain pair stays below
        chain_count: Evidence chains requested per video
        restarts_per_chain: DFS restarts before a chain slot is given up
        near_duplicate_ratio: Levenshtein ratio at which two entity names are merged
        reflexive_relations: Relations allowed to form self-loops
        banned_tokens: Tokens an accepted QA item must not contain
        reasoning_dimensions: Logic types offered to the QA generator
        seed: Chain sampling seed
    """

    window_size: int = DEFAULT_ENTITY_WINDOW
    min_hops: int = DEFAULT_MIN_HOPS
    max_hops: int = DEFAULT_MAX_HOPS
    max_overlap: float = DEFAULT_MAX_CHAIN_OVERLAP
    chain_count: int = DEFAULT_CHAIN_COUNT
    restarts_per_chain: int = DEFAULT_RESTARTS_PER_CHAIN
    near_duplicate_ratio: float = DEFAULT_NEAR_DUPLICATE_RATIO
    reflexive_relations: List[str] = field(default_factory=list)
    banned_tokens: List[str] = field(default_factory=lambda: list(BANNED_QA_TOKENS))
    reasoning_dimensions: List[str] = field(default_factory=lambda: list(REASONING_DIMENSIONS))
    seed: int = 0


@dataclass(frozen=True)
class SceneClip:
    """
    A scene clip with a known time span and description.

    Attributes:
        clip_id: Position of the scene in the video, from 1
        start_ms: Scene start
        end_ms: Scene end
        description: Scene description
    """

    clip_id: int
    start_ms: int
    end_ms: int
    description: str

    def __post_init__(self) -> None:
        if self.end_ms < self.start_ms:
            raise TimelineError(
                f"Invalid input: scene {self.clip_id} ends before it starts "
                f"({self.end_ms} < {self.start_ms})"
            )

    @property
    def time_span(self) -> Tuple[float, float]:
        return self.start_ms / 1000, self.end_ms / 1000

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> SceneClip:
        for key in ("clip_id", "start_s", "end_s", "description"):
            if key not in record:
                raise StructureError(f"Invalid input: scene record is missing '{key}'")
        return cls(
            clip_id=int(record["clip_id"]),
            start_ms=seconds_to_ms(record["start_s"]),
            end_ms=seconds_to_ms(record["end_s"]),
            description=str(record["description"]),
        )

    def to_record(self) -> SceneClipDict:
        return {
            "clip_id": self.clip_id,
            "start_s": self.start_ms / 1000,
            "end_s": self.end_ms / 1000,
            "description": self.description,
        }


@dataclass(frozen=True)
class EntityTriple:
    head: str
    relation: str
    tail: str
    start_ms: int
    end_ms: int
    description: str = ""
    clip_id: Optional[int] = None

    def __post_init__(self) -> None:
        for name in ("head", "relation", "tail", "description"):
            object.__setattr__(self, name, normalize_whitespace(getattr(self, name)))

    @property
    def identity(self) -> Tuple[str, str, str, int, int]:
        return self.head, self.relation, self.tail, self.start_ms, self.end_ms

    def with_entities(self, head: str, tail: str) -> EntityTriple:
        return EntityTriple(
            head, self.relation, tail, self.start_ms, self.end_ms, self.description, self.clip_id
        )


@dataclass(frozen=True)
class EntityRecord:
    name: str
    first_seen_ms: int
    last_seen_ms: int


@dataclass(frozen=True)
class EntityBank:
    """
    Sliding-window accumulator of entities and triples.

    Triples stay in the bank after their scene leaves the window; the window
    only tracks which scenes are recent.

    Attributes:
        entities: Registered entities by name
        triples: Distinct triples in insertion order
        window: Ids of the most recent scenes, oldest first
        window_size: Maximum window length (W)
        last_end_ms: End of the latest scene, None before the first
    """

    entities: Mapping[str, EntityRecord] = field(default_factory=dict)
    triples: Tuple[EntityTriple, ...] = ()
    window: Tuple[int, ...] = ()
    window_size: int = DEFAULT_ENTITY_WINDOW
    last_end_ms: Optional[int] = None

    @property
    def entity_names(self) -> List[str]:
        return sorted(self.entities)

    def window_entities(self) -> List[str]:
        """Entities mentioned by triples of scenes still in the window."""
        recent = set(self.window)
        names: List[str] = []
        for triple in self.triples:
            if triple.clip_id in recent:
                for name in (triple.head, triple.tail):
                    if name not in names:
                        names.append(name)
        return names


@dataclass
class RefinementProposal:
    """
    Entity-level edits to an entity bank.

    Attributes:
        merge: Alias to canonical name
        remove: Entities to drop with their triples
    """

    merge: Dict[str, str] = field(default_factory=dict)
    remove: List[str] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not self.merge and not self.remove


@dataclass(frozen=True)
class ChainEdge:
    head: str
    relation: str
    tail: str
    start_ms: int
    end_ms: int
    description: str = ""
    scene_description: str = ""

    @property
    def interval(self) -> Tuple[int, int]:
        return self.start_ms, self.end_ms

    @property
    def interval_label(self) -> str:
        return f"{format_seconds(self.start_ms)}-{format_seconds(self.end_ms)}s"

    def to_record(self) -> Dict[str, Any]:
        return {
            "head": self.head,
            "relation": self.relation,
            "tail": self.tail,
            "start_s": self.start_ms / 1000,
            "end_s": self.end_ms / 1000,
            "description": self.description,
            "scene_description": self.scene_description,
        }


@dataclass(frozen=True)
class EvidenceChain:
    """
    A simple path through the knowledge graph.

    Attributes:
        chain_id: Identifier referenced by synthesized QA items
        edges: Consecutive edges; each tail is the next head
    """

    chain_id: str
    edges: Tuple[ChainEdge, ...]

    @property
    def nodes(self) -> List[str]:
        if not self.edges:
            return []
        return [self.edges[0].head] + [edge.tail for edge in self.edges]

    @property
    def entities(self) -> FrozenSet[str]:
        return frozenset(self.nodes)

    @property
    def hops(self) -> int:
        return len(self.edges)

    def to_record(self) -> Dict[str, Any]:
        return {
            "chain_id": self.chain_id,
            "nodes": self.nodes,
            "edges": [edge.to_record() for edge in self.edges],
        }


@dataclass(frozen=True)
class CotSpan:
    text: str
    start_ms: int
    end_ms: int


@dataclass(frozen=True)
class SynthesizedQA:
    """
    A multi-hop QA item with a streaming chain of thought.

    Attributes:
        question: The question
        streaming_cot: Rationale spans, each tied to an interval of the chain
        answer: The answer
        reasoning_type: Logic type named by the generator
        chain_id: Source evidence chain
    """

    question: str
    streaming_cot: Tuple[CotSpan, ...]
    answer: str
    reasoning_type: str
    chain_id: str

    def to_record(self) -> QaRecordDict:
        return {
            "question": self.question,
            "cot": [span.text for span in self.streaming_cot],
            "answer": self.answer,
            "reasoning_type": self.reasoning_type,
            "chain_id": self.chain_id,
        }


class CheckName(str, Enum):
    WORLD_KNOWLEDGE = "world_knowledge"
    FORMAT_ALIGNMENT = "format_alignment"
    LOGICAL_CONSISTENCY = "logical_consistency"
    REPETITION = "repetition"
    THOUGHT_VALIDATION = "thought_validation"


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INDETERMINATE = "INDETERMINATE"


@dataclass(frozen=True)
class CheckVerdict:
    check: CheckName
    verdict: Verdict
    detail: str = ""


@dataclass(frozen=True)
class FilterResult:
    """Outcome of the five-check rubric for one QA item."""

    qa: SynthesizedQA
    verdicts: Tuple[CheckVerdict, ...]

    @property
    def accepted(self) -> bool:
        return all(v.verdict is Verdict.PASS for v in self.verdicts)

    @property
    def quarantined(self) -> bool:
        verdicts = {v.verdict for v in self.verdicts}
        return Verdict.INDETERMINATE in verdicts and Verdict.FAIL not in verdicts

    def verdict_for(self, check: CheckName) -> Verdict:
        for verdict in self.verdicts:
            if verdict.check is check:
                return verdict.verdict
        raise KeyError(check)

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = dict(self.qa.to_record())
        record["verdicts"] = {v.check.value: v.verdict.value for v in self.verdicts}
        failed = [v.detail for v in self.verdicts if v.verdict is not Verdict.PASS and v.detail]
        if failed:
            record["details"] = failed
        return record
