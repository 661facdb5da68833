"""Knowledge graph construction and evidence-chain sampling."""

from __future__ import annotations

import random
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx

from streamthink.exceptions import DomainError, ParameterError
from streamthink.kg_synthesis.dataclasses import ChainEdge, EntityBank, EvidenceChain
from streamthink.utils.constants import (
    DEFAULT_MAX_CHAIN_OVERLAP,
    DEFAULT_MAX_HOPS,
    DEFAULT_MIN_HOPS,
    DEFAULT_RESTARTS_PER_CHAIN,
)
from streamthink.utils.logging_config import logger

# Node expansions allowed in one randomized DFS before it gives up.
DFS_EXPANSION_BUDGET = 5000

_EdgeRef = Tuple[str, str, int]


def build_graph(
    bank: EntityBank,
    reflexive_relations: Iterable[str] = (),
    scene_descriptions: Optional[Dict[int, str]] = None,
) -> nx.MultiDiGraph:
    """
    Build a directed multigraph with one edge per bank triple.

    Nodes carry ``first_seen_ms``/``last_seen_ms``; edges carry ``relation``,
    ``start_ms``, ``end_ms``, ``description`` and ``scene_description``.
    Self-loops are kept only for reflexive relations.
    """
    reflexive = set(reflexive_relations)
    scenes = scene_descriptions or {}
    graph = nx.MultiDiGraph()
    for name, record in sorted(bank.entities.items()):
        graph.add_node(name, first_seen_ms=record.first_seen_ms, last_seen_ms=record.last_seen_ms)
    skipped = 0
    for triple in bank.triples:
        if triple.head == triple.tail and triple.relation not in reflexive:
            skipped += 1
            continue
        graph.add_edge(
            triple.head,
            triple.tail,
            relation=triple.relation,
            start_ms=triple.start_ms,
            end_ms=triple.end_ms,
            description=triple.description,
            scene_description=scenes.get(triple.clip_id, "") if triple.clip_id is not None else "",
        )
    if skipped:
        logger.debug(f"Skipped {skipped} non-reflexive self-loops")
    return graph


def graph_to_record(graph: nx.MultiDiGraph) -> Dict[str, Any]:
    return {
        "nodes": [
            {
                "name": name,
                "first_seen_s": data["first_seen_ms"] / 1000,
                "last_seen_s": data["last_seen_ms"] / 1000,
            }
            for name, data in sorted(graph.nodes(data=True))
        ],
        "edges": [
            {
                "head": head,
                "tail": tail,
                "relation": data["relation"],
                "start_s": data["start_ms"] / 1000,
                "end_s": data["end_ms"] / 1000,
                "description": data["description"],
            }
            for head, tail, data in graph.edges(data=True)
        ],
    }


def chain_overlap(a: EvidenceChain, b: EvidenceChain) -> float:
    """
    Shared entities over the entity count of the smaller chain.

    Raises:
        DomainError: If either chain is empty.
    """
    if not a.edges or not b.edges:
        raise DomainError("Invalid input: overlap is undefined for an empty chain")
    entities_a, entities_b = a.entities, b.entities
    return len(entities_a & entities_b) / min(len(entities_a), len(entities_b))


def chain_is_simple_path(graph: nx.MultiDiGraph, chain: EvidenceChain) -> bool:
    """Whether every chain edge exists in the graph and no node repeats."""
    nodes = chain.nodes
    if len(set(nodes)) != len(nodes):
        return False
    for edge in chain.edges:
        data = graph.get_edge_data(edge.head, edge.tail)
        if not data or not any(
            attrs["relation"] == edge.relation
            and attrs["start_ms"] == edge.start_ms
            and attrs["end_ms"] == edge.end_ms
            for attrs in data.values()
        ):
            return False
    return True


class _RandomizedDfs:
    def __init__(self, graph: nx.MultiDiGraph, rng: random.Random):
        self.graph = graph
        self.rng = rng
        self.expansions = 0
        self.longest: List[_EdgeRef] = []

    def search(self, start: str, target: int) -> List[_EdgeRef]:
        self.expansions = 0
        self.longest = []
        found = self._visit(start, {start}, [], target)
        return found if found is not None else self.longest

    def _visit(
        self, node: str, visited: set, path: List[_EdgeRef], target: int
    ) -> Optional[List[_EdgeRef]]:
        if len(path) == target:
            return list(path)
        self.expansions += 1
        if self.expansions > DFS_EXPANSION_BUDGET:
            return None
        out_edges = sorted(self.graph.out_edges(node, keys=True), key=lambda e: (e[1], e[2]))
        self.rng.shuffle(out_edges)
        for head, tail, key in out_edges:
            if tail in visited:
                continue
            visited.add(tail)
            path.append((head, tail, key))
            if len(path) > len(self.longest):
                self.longest = list(path)
            found = self._visit(tail, visited, path, target)
            if found is not None:
                return found
            path.pop()
            visited.remove(tail)
        return None


def _to_chain(graph: nx.MultiDiGraph, chain_id: str, path: Sequence[_EdgeRef]) -> EvidenceChain:
    edges = []
    for head, tail, key in path:
        data = graph.edges[head, tail, key]
        edges.append(
            ChainEdge(
                head=head,
                relation=data["relation"],
                tail=tail,
                start_ms=data["start_ms"],
                end_ms=data["end_ms"],
                description=data.get("description", ""),
                scene_description=data.get("scene_description", ""),
            )
        )
    return EvidenceChain(chain_id, tuple(edges))


def sample_chains(
    graph: nx.MultiDiGraph,
    count: int,
    min_hops: int = DEFAULT_MIN_HOPS,
    max_hops: int = DEFAULT_MAX_HOPS,
    max_overlap: float = DEFAULT_MAX_CHAIN_OVERLAP,
    seed: int = 0,
    restarts_per_chain: int = DEFAULT_RESTARTS_PER_CHAIN,
) -> List[EvidenceChain]:
    """
    Sample diverse evidence chains with randomized depth-first search.

    Each attempt picks a random start node and a random target length in
    [min_hops, max_hops], then walks out-edges in shuffled order until a
    simple path of that length is found, falling back to the longest path
    seen if it reaches min_hops. A chain is accepted only if its entity
    overlap with every accepted chain stays below max_overlap. Identical
    seeds give identical results.

    Args:
        graph: Knowledge graph
        count: Chains requested
        min_hops: Shortest chain
        max_hops: Longest chain
        max_overlap: Overlap bound for every accepted pair
        seed: Random seed
        restarts_per_chain: Attempts per chain before sampling stops

    Returns:
        Up to ``count`` chains; fewer when the restart budget runs out.

    Raises:
        ParameterError: If the graph is empty or the hop bounds are invalid.
    """
    if graph.number_of_nodes() == 0:
        raise ParameterError("Invalid input: cannot sample chains from an empty graph")
    if not 1 <= min_hops <= max_hops:
        raise ParameterError(
            f"Invalid input: need 1 <= min_hops <= max_hops, got {min_hops}, {max_hops}"
        )
    rng = random.Random(seed)
    nodes = sorted(graph.nodes)
    dfs = _RandomizedDfs(graph, rng)
    chains: List[EvidenceChain] = []
    rejected_overlap = too_short = 0
    for slot in range(count):
        accepted: Optional[EvidenceChain] = None
        for _ in range(restarts_per_chain):
            start = rng.choice(nodes)
            target = rng.randint(min_hops, max_hops)
            path = dfs.search(start, target)
            if len(path) < min_hops:
                too_short += 1
                continue
            candidate = _to_chain(graph, f"chain-{slot:03d}", path)
            if all(chain_overlap(candidate, other) < max_overlap for other in chains):
                accepted = candidate
                break
            rejected_overlap += 1
        if accepted is None:
            logger.warning(
                f"Chain sampling stopped at {len(chains)}/{count} chains after "
                f"{restarts_per_chain} restarts ({too_short} paths shorter than "
                f"{min_hops} hops, {rejected_overlap} rejected for overlap >= {max_overlap})"
            )
            break
        chains.append(accepted)
    return chains
