import json
import os
import sys
from itertools import combinations

import pytest

# Ensure project root is on sys.path so we can import streamthink modules
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from streamthink.backends.base import GenerationBackend, RequestKind  # noqa: E402
from streamthink.backends.mock_backend import MockSummarizer, parse_relation_clauses  # noqa: E402
from streamthink.exceptions import (  # noqa: E402
    DomainError,
    ParameterError,
    StructureError,
    SynthesisError,
    TimelineError,
    TripleRejectedError,
)
from streamthink.kg_synthesis import (  # noqa: E402
    ChainEdge,
    CheckName,
    CotSpan,
    EntityBank,
    EntityTriple,
    EvidenceChain,
    KgSynthesisConfig,
    RefinementProposal,
    SceneClip,
    SynthesizedQA,
    Verdict,
    apply_refinement,
    build_graph,
    chain_is_simple_path,
    chain_overlap,
    extract_triples,
    filter_qa,
    generate_synthetic_scenes,
    propose_local_refinement,
    read_scene_clips,
    refine_bank,
    sample_chains,
    synthesize_dataset,
    synthesize_qa,
    triples_from_events,
    update_entity_bank,
)
from streamthink.kg_synthesis.pipeline import OUTPUT_FILES  # noqa: E402
from streamthink.kg_synthesis.qa_filter import check_format_alignment  # noqa: E402
from streamthink.kg_synthesis.qa_synthesis import align_cot_spans  # noqa: E402


class ScriptedBackend(GenerationBackend):
    """Answers each request kind with a fixed text, or raises for kinds mapped to an exception."""

    def __init__(self, replies):
        super().__init__("scripted", "scripted")
        self.replies = replies
        self.kinds = []

    def generate(self, request):
        self.kinds.append(request.kind)
        reply = self.replies[request.kind]
        if isinstance(reply, Exception):
            raise reply
        return self._finish(request, reply, 0, 1)


def _scene(clip_id, description="", span_ms=2000):
    return SceneClip(clip_id, (clip_id - 1) * span_ms, clip_id * span_ms, description)


def _triple(head, relation, tail, clip, description=""):
    return EntityTriple(head, relation, tail, clip.start_ms, clip.end_ms, description, clip.clip_id)


def _bank_from_scenes(scenes, window_size=4):
    bank = EntityBank(window_size=window_size)
    for clip in scenes:
        bank = update_entity_bank(
            bank, clip, triples_from_events(clip, parse_relation_clauses(clip.description))
        )
    return bank


def _synthetic_graph(n=100, seed=0, edges_per_thread=4):
    scenes = generate_synthetic_scenes(n=n, seed=seed, edges_per_thread=edges_per_thread)
    bank = _bank_from_scenes(scenes)
    return build_graph(bank, scene_descriptions={c.clip_id: c.description for c in scenes})


def _chain(intervals):
    edges = tuple(
        ChainEdge(f"n{i}", "holds", f"n{i + 1}", start, end)
        for i, (start, end) in enumerate(intervals)
    )
    return EvidenceChain("chain-test", edges)


def _qa(question="Which object is closest to the door?", cot=None, answer="The red kettle"):
    texts = cot or ["At 0.0-2.0s, the red kettle rests on the table.", "Then it is moved to the door."]
    spans = tuple(CotSpan(text, 0, 2000) for text in texts)
    return SynthesizedQA(question, spans, answer, "Causal Reasoning", "chain-test")


# ----------------------------------------------------------------------------
# Scene clips and the entity bank
# ----------------------------------------------------------------------------


def test_scene_clip_rejects_reversed_span():
    with pytest.raises(TimelineError):
        SceneClip(1, 2000, 1000, "a scene")


def test_scene_clip_record_round_trip():
    clip = SceneClip(3, 4000, 6000, "a dog runs")
    assert SceneClip.from_record(clip.to_record()) == clip
    with pytest.raises(StructureError, match="description"):
        SceneClip.from_record({"clip_id": 1, "start_s": 0, "end_s": 1})


def test_window_keeps_the_most_recent_scenes():
    bank = EntityBank(window_size=3)
    for k in range(1, 5):
        clip = _scene(k)
        bank = update_entity_bank(bank, clip, [_triple(f"e{k}", "holds", f"e{k + 1}", clip)])

    assert bank.window == (2, 3, 4)
    assert bank.window_entities() == ["e2", "e3", "e4", "e5"]
    # Triples of scenes that left the window stay in the bank.
    assert len(bank.triples) == 4
    assert bank.entities["e1"].first_seen_ms == 0


def test_window_size_override_and_validation():
    clip = _scene(1)
    bank = update_entity_bank(EntityBank(window_size=4), clip, [], W=1)
    assert bank.window_size == 1
    with pytest.raises(ParameterError):
        update_entity_bank(EntityBank(), clip, [], W=0)


@pytest.mark.parametrize("window_size", [1, 4, 7])
def test_window_slides_over_synthetic_trace(window_size):
    scenes = generate_synthetic_scenes(n=100, seed=3)
    bank = EntityBank(window_size=window_size)
    for t, clip in enumerate(scenes, start=1):
        assert clip.clip_id == t
        bank = update_entity_bank(
            bank, clip, triples_from_events(clip, parse_relation_clauses(clip.description))
        )
        assert bank.window == tuple(range(max(1, t - window_size + 1), t + 1))


def test_repeated_triples_are_stored_once():
    clip = _scene(1)
    triple = _triple("red kettle", "rests on", "wooden table", clip)
    bank = update_entity_bank(EntityBank(), clip, [triple, triple])
    assert len(bank.triples) == 1

    # Whitespace differences normalize to the same identity.
    clip2 = _scene(2)
    again = _triple("red  kettle", "rests on", " wooden table", clip2)
    bank = update_entity_bank(
        bank, clip2, [again, _triple("red kettle", "rests on", "wooden table", clip2)]
    )
    assert len(bank.triples) == 2
    assert bank.entities["red kettle"].last_seen_ms == 4000


def test_empty_entity_rejects_the_triple_with_its_index():
    clip = _scene(1)
    good = _triple("red kettle", "rests on", "wooden table", clip)
    bad = _triple("red kettle", "rests on", "  ", clip)
    with pytest.raises(TripleRejectedError) as exc_info:
        update_entity_bank(EntityBank(), clip, [good, bad])
    assert exc_info.value.index == 1


@pytest.mark.parametrize(
    "second",
    [
        SceneClip(1, 2000, 4000, "same id again"),
        SceneClip(2, 1000, 3000, "starts before the previous scene ends"),
    ],
)
def test_scenes_must_extend_the_timeline(second):
    bank = update_entity_bank(EntityBank(), _scene(1), [])
    with pytest.raises(TimelineError):
        update_entity_bank(bank, second, [])


def test_extract_triples_uses_backend_events():
    clip = _scene(1, "red kettle -[rests on]-> wooden table; tall ladder -[leans against]-> window")
    triples = extract_triples(clip, EntityBank(), MockSummarizer())
    assert [(t.head, t.relation, t.tail) for t in triples] == [
        ("red kettle", "rests on", "wooden table"),
        ("tall ladder", "leans against", "window"),
    ]
    assert all((t.start_ms, t.end_ms, t.clip_id) == (0, 2000, 1) for t in triples)


def test_extract_triples_rejects_unreadable_response():
    backend = ScriptedBackend({RequestKind.KG_EXTRACTION: "I could not find anything."})
    with pytest.raises(SynthesisError) as exc_info:
        extract_triples(_scene(1, "x"), EntityBank(), backend)
    assert exc_info.value.raw_text == "I could not find anything."


# ----------------------------------------------------------------------------
# Refinement
# ----------------------------------------------------------------------------


def _noisy_bank():
    s1, s2, s3 = _scene(1), _scene(2), _scene(3)
    bank = update_entity_bank(EntityBank(), s1, [_triple("red kettle", "rests on", "wooden table", s1)])
    bank = update_entity_bank(
        bank,
        s2,
        [
            _triple("red kettle", "faces", "tall window", s2),
            _triple("subtitle: welcome home", "covers", "tall window", s2),
        ],
    )
    return update_entity_bank(
        bank,
        s3,
        [
            _triple("The red kettle", "is next to", "green bottle", s3),
            _triple("red kettle", "is next to", "the red kettle", s3),
        ],
    )


def test_local_refinement_merges_near_duplicates_and_drops_subtitles():
    proposal = propose_local_refinement(_noisy_bank())
    assert proposal.merge == {"The red kettle": "red kettle", "the red kettle": "red kettle"}
    assert proposal.remove == ["subtitle: welcome home"]


def test_refinement_keeps_every_triple_valid():
    bank = _noisy_bank()
    refined = refine_bank(bank)

    assert "subtitle: welcome home" not in refined.entities
    assert "The red kettle" not in refined.entities
    names = set(refined.entities)
    for triple in refined.triples:
        assert triple.head in names and triple.tail in names
        assert triple.head != triple.tail
    assert ("red kettle", "is next to", "green bottle") in {
        (t.head, t.relation, t.tail) for t in refined.triples
    }
    assert refined.entities["red kettle"].last_seen_ms == 6000
    assert refined.window == bank.window


def test_reflexive_relations_survive_a_merge():
    refined = refine_bank(_noisy_bank(), reflexive_relations=["is next to"])
    assert ("red kettle", "is next to", "red kettle") in {
        (t.head, t.relation, t.tail) for t in refined.triples
    }


def test_backend_refinement_wins_and_failure_leaves_bank_unmodified():
    bank = _noisy_bank()
    backend = ScriptedBackend(
        {RequestKind.KG_REFINEMENT: json.dumps({"merge": {"green bottle": "tall window"}, "remove": []})}
    )
    refined = refine_bank(bank, backend, local=False)
    assert "green bottle" not in refined.entities
    assert ("The red kettle", "is next to", "tall window") in {
        (t.head, t.relation, t.tail) for t in refined.triples
    }

    failing = ScriptedBackend({RequestKind.KG_REFINEMENT: RuntimeError("timeout")})
    assert refine_bank(bank, failing) is bank


def test_empty_proposal_is_identity():
    bank = _noisy_bank()
    assert apply_refinement(bank, RefinementProposal()) is bank


# ----------------------------------------------------------------------------
# Graph and chains
# ----------------------------------------------------------------------------


def test_graph_keeps_self_loops_only_for_reflexive_relations():
    clip = _scene(1)
    bank = update_entity_bank(
        EntityBank(),
        clip,
        [
            _triple("mirror", "reflects", "mirror", clip),
            _triple("mirror", "hangs above", "sink", clip),
        ],
    )
    plain = build_graph(bank)
    assert plain.number_of_edges() == 1
    assert not plain.has_edge("mirror", "mirror")

    reflexive = build_graph(bank, reflexive_relations=["reflects"])
    assert reflexive.has_edge("mirror", "mirror")
    assert reflexive.nodes["sink"]["first_seen_ms"] == 0


def test_graph_is_a_multigraph():
    s1, s2 = _scene(1), _scene(2)
    bank = update_entity_bank(EntityBank(), s1, [_triple("dog", "chases", "ball", s1)])
    bank = update_entity_bank(bank, s2, [_triple("dog", "chases", "ball", s2)])
    graph = build_graph(bank, scene_descriptions={1: "first", 2: "second"})
    assert graph.number_of_edges("dog", "ball") == 2
    assert {d["scene_description"] for d in graph.get_edge_data("dog", "ball").values()} == {
        "first",
        "second",
    }


def test_synthetic_scenes_yield_twenty_diverse_chains():
    graph = _synthetic_graph()
    chains = sample_chains(graph, 20, min_hops=3, max_hops=8, max_overlap=0.10, seed=7)

    assert len(chains) == 20
    for chain in chains:
        assert 3 <= chain.hops <= 8
        assert chain_is_simple_path(graph, chain)
        for left, right in zip(chain.edges, chain.edges[1:]):
            assert left.tail == right.head
    for a, b in combinations(chains, 2):
        assert chain_overlap(a, b) < 0.10


def test_chain_sampling_is_reproducible():
    graph = _synthetic_graph()
    first = [c.to_record() for c in sample_chains(graph, 10, seed=3)]
    second = [c.to_record() for c in sample_chains(graph, 10, seed=3)]
    assert first == second


def test_chain_sampling_stops_when_restarts_run_out():
    # Every path has at most 2 hops, so no chain of 3 exists.
    graph = _synthetic_graph(n=10, edges_per_thread=2)
    assert sample_chains(graph, 5, min_hops=3, restarts_per_chain=20) == []


def test_chain_sampling_validation():
    graph = _synthetic_graph(n=8)
    with pytest.raises(ParameterError):
        sample_chains(build_graph(EntityBank()), 1)
    with pytest.raises(ParameterError):
        sample_chains(graph, 1, min_hops=5, max_hops=3)


def test_chain_overlap():
    a = _chain([(0, 1000), (1000, 2000)])
    b = EvidenceChain("other", (ChainEdge("n2", "holds", "x", 0, 1000),))
    assert chain_overlap(a, b) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        chain_overlap(a, EvidenceChain("empty", ()))


def test_repeated_node_is_not_a_simple_path():
    clip = _scene(1)
    bank = update_entity_bank(
        EntityBank(),
        clip,
        [_triple("a", "holds", "b", clip), _triple("b", "holds", "a", clip)],
    )
    graph = build_graph(bank)
    looped = EvidenceChain(
        "loop",
        (ChainEdge("a", "holds", "b", 0, 2000), ChainEdge("b", "holds", "a", 0, 2000)),
    )
    assert not chain_is_simple_path(graph, looped)
    assert chain_is_simple_path(graph, EvidenceChain("ok", looped.edges[:1]))


# ----------------------------------------------------------------------------
# QA synthesis and filtering
# ----------------------------------------------------------------------------


def test_cot_spans_follow_cited_or_positional_intervals():
    chain = _chain([(0, 2000), (2000, 4000)])
    spans = align_cot_spans(["At 2.0-4.0s, n1 holds n2.", "n0 holds n1.", "So n2 is last."], chain)
    assert [(s.start_ms, s.end_ms) for s in spans] == [(2000, 4000), (2000, 4000), (2000, 4000)]

    spans = align_cot_spans(["First.", "Second."], chain)
    assert [(s.start_ms, s.end_ms) for s in spans] == [(0, 2000), (2000, 4000)]


def test_cot_citing_an_unknown_interval_is_rejected():
    with pytest.raises(SynthesisError, match="9.0-10.0s"):
        align_cot_spans(["Around 9.0-10.0s something happens."], _chain([(0, 2000)]))


def test_synthesize_qa_with_mock_backend():
    graph = _synthetic_graph()
    chain = sample_chains(graph, 1, seed=1)[0]
    qa = synthesize_qa(chain, graph, MockSummarizer())

    assert qa.chain_id == chain.chain_id
    assert len(qa.streaming_cot) == chain.hops
    assert [(s.start_ms, s.end_ms) for s in qa.streaming_cot] == [e.interval for e in chain.edges]
    assert qa.question and qa.answer and qa.reasoning_type


def test_synthesize_qa_reports_missing_keys_with_raw_text():
    reply = json.dumps({"question": "q", "cot": ["c"]})
    backend = ScriptedBackend({RequestKind.QA_SYNTHESIS: reply})
    with pytest.raises(SynthesisError, match="answer") as exc_info:
        synthesize_qa(_chain([(0, 2000)]), None, backend)
    assert exc_info.value.raw_text == reply


def test_clean_item_passes_all_checks():
    result = filter_qa(_qa(), MockSummarizer())
    assert result.accepted
    assert [v.check for v in result.verdicts] == [
        CheckName.WORLD_KNOWLEDGE,
        CheckName.FORMAT_ALIGNMENT,
        CheckName.LOGICAL_CONSISTENCY,
        CheckName.REPETITION,
        CheckName.THOUGHT_VALIDATION,
    ]


def test_banned_token_fails_format_alignment():
    result = filter_qa(_qa(question="Step 3: which object moved?"), MockSummarizer())
    assert not result.accepted and not result.quarantined
    assert result.verdict_for(CheckName.FORMAT_ALIGNMENT) is Verdict.FAIL
    assert "Step" in result.to_record()["details"][0]


@pytest.mark.parametrize(
    "question, banned",
    [
        ("step 3: which object moved?", True),
        ("Step3 which object moved?", True),
        ("What happened at clip index 4?", True),
        ("Which object did the man step over?", True),
        ("Which object moved after the man steps outside?", False),
    ],
)
def test_banned_tokens_ignore_case_and_trailing_digits(question, banned):
    verdict = check_format_alignment(_qa(question=question))
    assert (verdict.verdict is Verdict.FAIL) is banned


def test_repeated_rationale_fails_repetition():
    cot = ["The kettle is red. The kettle is red.", "It sits on the table."]
    result = filter_qa(_qa(cot=cot), MockSummarizer())
    assert result.verdict_for(CheckName.REPETITION) is Verdict.FAIL
    assert result.verdict_for(CheckName.FORMAT_ALIGNMENT) is Verdict.PASS


def test_delegated_fail_rejects_the_item():
    backend = ScriptedBackend({RequestKind.RUBRIC: "FAIL: the answer needs outside knowledge"})
    result = filter_qa(_qa(), backend)
    assert not result.accepted and not result.quarantined
    assert result.verdict_for(CheckName.WORLD_KNOWLEDGE) is Verdict.FAIL
    assert backend.kinds == [RequestKind.RUBRIC] * 3


@pytest.mark.parametrize("reply", [RuntimeError("rubric backend down"), "I am not sure."])
def test_backend_failure_quarantines_the_item(reply):
    result = filter_qa(_qa(), ScriptedBackend({RequestKind.RUBRIC: reply}))
    assert not result.accepted
    assert result.quarantined
    assert result.verdict_for(CheckName.THOUGHT_VALIDATION) is Verdict.INDETERMINATE
    assert result.verdict_for(CheckName.REPETITION) is Verdict.PASS


def test_indeterminate_with_a_failure_is_rejected():
    result = filter_qa(
        _qa(question="Path node 2 is what?"),
        ScriptedBackend({RequestKind.RUBRIC: RuntimeError("down")}),
    )
    assert not result.accepted
    assert not result.quarantined


# ----------------------------------------------------------------------------
# End-to-end synthesis
# ----------------------------------------------------------------------------


def test_synthesize_dataset_on_synthetic_scenes(tmp_path):
    scenes = generate_synthetic_scenes(n=100, seed=0)
    summary = synthesize_dataset(scenes, MockSummarizer(), tmp_path, KgSynthesisConfig(seed=5))

    assert summary.scenes == 100
    assert summary.chains == 20
    assert summary.accepted == 20
    assert summary.rejected == summary.quarantined == 0
    for name in OUTPUT_FILES.values():
        assert (tmp_path / name).exists()

    qa_lines = (tmp_path / OUTPUT_FILES["qa"]).read_text(encoding="utf-8").splitlines()
    assert len(qa_lines) == 20
    thoughts = (tmp_path / OUTPUT_FILES["thoughts"]).read_text(encoding="utf-8").splitlines()
    assert len(thoughts) == 100
    first = json.loads(thoughts[0])
    assert first["clip_id"] == 1 and first["thought"].startswith("The ")
    graph = json.loads((tmp_path / OUTPUT_FILES["graph"]).read_text(encoding="utf-8"))
    assert len(graph["edges"]) == 100


def test_synthesize_dataset_prefers_recorded_extractions(tmp_path):
    scenes = [_scene(1, "ignored"), _scene(2, "ignored")]
    extractions = {
        1: [{"subject": "dog", "relation": "chases", "object": "ball"}],
        2: [{"subject": "ball", "relation": "hits", "object": "vase"}],
    }
    summary = synthesize_dataset(
        scenes,
        MockSummarizer(),
        tmp_path,
        KgSynthesisConfig(min_hops=1, max_hops=2, chain_count=1),
        extractions=extractions,
    )
    assert summary.entities == 3
    assert summary.triples == 2
    assert summary.chains == 1


def test_synthesis_failures_are_recorded_as_rejected(tmp_path):
    backend = ScriptedBackend(
        {
            RequestKind.KG_EXTRACTION: json.dumps(
                {"events": [{"subject": "dog", "relation": "chases", "object": "ball"}]}
            ),
            RequestKind.DELTA_THOUGHT: "A dog chases a ball.",
            RequestKind.KG_REFINEMENT: json.dumps({"merge": {}, "remove": []}),
            RequestKind.QA_SYNTHESIS: "not json at all",
        }
    )
    summary = synthesize_dataset(
        [_scene(1, "x")], backend, tmp_path, KgSynthesisConfig(min_hops=1, max_hops=1, chain_count=1)
    )
    assert summary.chains == 1
    assert summary.rejected == 1
    record = json.loads((tmp_path / OUTPUT_FILES["rejected"]).read_text(encoding="utf-8"))
    assert record["stage"] == "synthesis"
    assert record["raw_text"] == "not json at all"


def test_read_scene_clips_reports_line(tmp_path):
    path = tmp_path / "scenes.jsonl"
    path.write_text(
        json.dumps({"clip_id": 1, "start_s": 0, "end_s": 2, "description": "a"}) + "\n"
        + json.dumps({"clip_id": 2, "start_s": 2}) + "\n",
        encoding="utf-8",
    )
    with pytest.raises(StructureError, match=":2:"):
        read_scene_clips(path)
