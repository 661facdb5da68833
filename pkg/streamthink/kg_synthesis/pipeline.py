"""End-to-end Stream-Thought QA synthesis for one video."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

from streamthink.backends.base import GenerationBackend
from streamthink.exceptions import StructureError, SynthesisError
from streamthink.kg_synthesis.dataclasses import (
    EntityBank,
    KgSynthesisConfig,
    SceneClip,
)
from streamthink.kg_synthesis.entity_bank import (
    extract_triples,
    generate_delta_thought,
    refine_bank,
    triples_from_events,
    update_entity_bank,
)
from streamthink.kg_synthesis.graph import build_graph, graph_to_record, sample_chains
from streamthink.kg_synthesis.qa_filter import filter_qa
from streamthink.kg_synthesis.qa_synthesis import synthesize_qa
from streamthink.types import ExtractedEventDict
from streamthink.utils.file_utils import read_jsonl, write_json, write_jsonl
from streamthink.utils.logging_config import logger

OUTPUT_FILES = {
    "graph": "graph.json",
    "chains": "chains.jsonl",
    "qa": "qa.jsonl",
    "rejected": "rejected.jsonl",
    "quarantine": "quarantine.jsonl",
    "thoughts": "thoughts.jsonl",
}


def read_scene_clips(path: str | Path) -> List[SceneClip]:
    """Load ``{clip_id, start_s, end_s, description}`` lines."""
    scenes = []
    for line_no, record in read_jsonl(path):
        try:
            scenes.append(SceneClip.from_record(record))
        except (StructureError, ValueError, TypeError) as e:
            raise StructureError(f"Invalid input: {path}:{line_no}: {e}") from e
    return scenes


def read_extraction_trace(path: str | Path) -> Dict[int, List[ExtractedEventDict]]:
    """Load ``{clip_id, events}`` lines into events per scene id."""
    trace: Dict[int, List[ExtractedEventDict]] = {}
    for line_no, record in read_jsonl(path):
        if "clip_id" not in record or not isinstance(record.get("events"), list):
            raise StructureError(f"Invalid input: {path}:{line_no}: need clip_id and an events list")
        trace[int(record["clip_id"])] = list(record["events"])
    return trace


@dataclass(frozen=True)
class DatasetSummary:
    scenes: int
    entities: int
    triples: int
    chains: int
    accepted: int
    rejected: int
    quarantined: int

    def to_record(self) -> Dict[str, int]:
        return dict(self.__dict__)


def synthesize_dataset(
    scenes: Sequence[SceneClip],
    backend: GenerationBackend,
    out_dir: str | Path,
    config: Optional[KgSynthesisConfig] = None,
    extractions: Optional[Mapping[int, Sequence[Mapping[str, Any]]]] = None,
    rubric_backend: Optional[GenerationBackend] = None,
) -> DatasetSummary:
    """
    Build the entity bank, graph, chains and filtered QA items for one video.

    Scenes are processed in order: triples come from the extraction trace
    when it has the scene, otherwise from the backend. Every scene also gets
    an incremental-progress thought. After refinement the graph is built,
    chains are sampled, and each chain yields one QA item that goes through
    the rubric. Outputs are written to ``out_dir`` (see ``OUTPUT_FILES``).

    Args:
        scenes: Scene clips in time order
        backend: Backend for extraction, thoughts, refinement and QA
        out_dir: Output directory, created if needed
        config: Pipeline configuration
        extractions: Recorded events per scene id
        rubric_backend: Backend for the delegated checks; defaults to backend

    Returns:
        Counts of what was produced.
    """
    config = config or KgSynthesisConfig()
    rubric_backend = rubric_backend or backend
    extractions = extractions or {}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    bank = EntityBank(window_size=config.window_size)
    thoughts: List[Dict[str, Any]] = []
    for clip in scenes:
        if clip.clip_id in extractions:
            triples = triples_from_events(clip, extractions[clip.clip_id])
        else:
            triples = extract_triples(clip, bank, backend)
        bank = update_entity_bank(bank, clip, triples, config.window_size)
        thought = generate_delta_thought(clip, bank.window_entities(), backend)
        thoughts.append(
            {
                "clip_id": clip.clip_id,
                "start_s": clip.start_ms / 1000,
                "end_s": clip.end_ms / 1000,
                "thought": thought,
            }
        )

    bank = refine_bank(
        bank,
        backend,
        ratio_threshold=config.near_duplicate_ratio,
        reflexive_relations=config.reflexive_relations,
    )
    graph = build_graph(
        bank,
        reflexive_relations=config.reflexive_relations,
        scene_descriptions={clip.clip_id: clip.description for clip in scenes},
    )
    chains = (
        sample_chains(
            graph,
            config.chain_count,
            min_hops=config.min_hops,
            max_hops=config.max_hops,
            max_overlap=config.max_overlap,
            seed=config.seed,
            restarts_per_chain=config.restarts_per_chain,
        )
        if graph.number_of_nodes()
        else []
    )

    accepted: List[Dict[str, Any]] = []
    rejected: List[Dict[str, Any]] = []
    quarantined: List[Dict[str, Any]] = []
    for chain in chains:
        try:
            qa = synthesize_qa(
                chain,
                graph,
                backend,
                dimensions=config.reasoning_dimensions,
                banned_tokens=config.banned_tokens,
            )
        except SynthesisError as e:
            logger.warning(f"QA synthesis failed for {chain.chain_id}: {e}")
            rejected.append(
                {"chain_id": chain.chain_id, "stage": "synthesis", "error": str(e), "raw_text": e.raw_text}
            )
            continue
        result = filter_qa(qa, rubric_backend, config.banned_tokens, chain)
        if result.accepted:
            accepted.append(dict(qa.to_record()))
        elif result.quarantined:
            quarantined.append(result.to_record())
        else:
            record = result.to_record()
            record["stage"] = "filter"
            rejected.append(record)

    write_json(graph_to_record(graph), out / OUTPUT_FILES["graph"])
    write_jsonl([chain.to_record() for chain in chains], out / OUTPUT_FILES["chains"])
    write_jsonl(accepted, out / OUTPUT_FILES["qa"])
    write_jsonl(rejected, out / OUTPUT_FILES["rejected"])
    write_jsonl(quarantined, out / OUTPUT_FILES["quarantine"])
    write_jsonl(thoughts, out / OUTPUT_FILES["thoughts"])

    summary = DatasetSummary(
        scenes=len(scenes),
        entities=len(bank.entities),
        triples=len(bank.triples),
        chains=len(chains),
        accepted=len(accepted),
        rejected=len(rejected),
        quarantined=len(quarantined),
    )
    logger.info(f"Synthesis finished: {summary.to_record()}")
    return summary
