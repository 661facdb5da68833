from streamthink.kg_synthesis.dataclasses import (
    ChainEdge,
    CheckName,
    CheckVerdict,
    CotSpan,
    EntityBank,
    EntityRecord,
    EntityTriple,
    EvidenceChain,
    FilterResult,
    KgSynthesisConfig,
    RefinementProposal,
    SceneClip,
    SynthesizedQA,
    Verdict,
)
from streamthink.kg_synthesis.entity_bank import (
    apply_refinement,
    extract_triples,
    generate_delta_thought,
    propose_local_refinement,
    refine_bank,
    triples_from_events,
    update_entity_bank,
)
from streamthink.kg_synthesis.graph import (
    build_graph,
    chain_is_simple_path,
    chain_overlap,
    graph_to_record,
    sample_chains,
)
from streamthink.kg_synthesis.pipeline import (
    DatasetSummary,
    read_extraction_trace,
    read_scene_clips,
    synthesize_dataset,
)
from streamthink.kg_synthesis.qa_filter import filter_qa
from streamthink.kg_synthesis.qa_synthesis import synthesize_qa
from streamthink.kg_synthesis.scenes import generate_synthetic_scenes

__all__ = [
    "ChainEdge",
    "CheckName",
    "CheckVerdict",
    "CotSpan",
    "DatasetSummary",
    "EntityBank",
    "EntityRecord",
    "EntityTriple",
    "EvidenceChain",
    "FilterResult",
    "KgSynthesisConfig",
    "RefinementProposal",
    "SceneClip",
    "SynthesizedQA",
    "Verdict",
    "apply_refinement",
    "build_graph",
    "chain_is_simple_path",
    "chain_overlap",
    "extract_triples",
    "filter_qa",
    "generate_delta_thought",
    "generate_synthetic_scenes",
    "graph_to_record",
    "propose_local_refinement",
    "read_extraction_trace",
    "read_scene_clips",
    "refine_bank",
    "sample_chains",
    "synthesize_dataset",
    "synthesize_qa",
    "triples_from_events",
    "update_entity_bank",
]
