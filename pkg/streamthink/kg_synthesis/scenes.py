from __future__ import annotations

import random
from itertools import product
from typing import List

from Levenshtein import ratio as levenshtein_ratio

from streamthink.exceptions import ParameterError
from streamthink.kg_synthesis.dataclasses import SceneClip
from streamthink.utils.constants import DEFAULT_NEAR_DUPLICATE_RATIO

ADJECTIVES = [
    "red", "wooden", "silver", "striped", "tall", "dusty", "green", "folded",
    "broken", "shiny", "round", "yellow", "heavy", "open", "plastic", "woven",
]
NOUNS = [
    "kettle", "table", "ladder", "bicycle", "umbrella", "notebook", "lantern",
    "guitar", "window", "suitcase", "camera", "bottle", "helmet", "drawer",
    "bucket", "shelf", "curtain", "scarf",
]
RELATIONS = [
    "rests on", "leans against", "is next to", "hangs above", "holds",
    "is inside", "covers", "faces", "blocks", "is tied to",
]


def _distinct_entities(count: int, rng: random.Random) -> List[str]:
    pool = [f"{adjective} {noun}" for adjective, noun in product(ADJECTIVES, NOUNS)]
    rng.shuffle(pool)
    chosen: List[str] = []
    for name in pool:
        if all(levenshtein_ratio(name, other) < DEFAULT_NEAR_DUPLICATE_RATIO for other in chosen):
            chosen.append(name)
            if len(chosen) == count:
                return chosen
    raise ParameterError(f"Invalid input: cannot draw {count} distinct entity names")


def generate_synthetic_scenes(
    n: int = 100,
    seed: int = 0,
    edges_per_thread: int = 4,
    scene_seconds: float = 2.0,
) -> List[SceneClip]:
    """
    Deterministic scene trace for exercising the synthesis pipeline.

    Scenes are split across ``ceil(n / edges_per_thread)`` threads of
    distinct entities. Scene ``s`` carries edge ``s // threads`` of thread
    ``s % threads`` as a ``head -[relation]-> tail`` clause, so each thread
    forms a path of up to ``edges_per_thread`` hops spread over the video.
    """
    if n < 1 or edges_per_thread < 1:
        raise ParameterError("Invalid input: n and edges_per_thread must be >= 1")
    rng = random.Random(seed)
    threads = -(-n // edges_per_thread)
    names = _distinct_entities(threads * (edges_per_thread + 1), rng)
    paths = [
        names[t * (edges_per_thread + 1) : (t + 1) * (edges_per_thread + 1)] for t in range(threads)
    ]
    span_ms = int(round(scene_seconds * 1000))
    scenes = []
    for s in range(n):
        thread, hop = s % threads, s // threads
        head, tail = paths[thread][hop], paths[thread][hop + 1]
        relation = rng.choice(RELATIONS)
        scenes.append(
            SceneClip(
                clip_id=s + 1,
                start_ms=s * span_ms,
                end_ms=(s + 1) * span_ms,
                description=f"{head} -[{relation}]-> {tail}",
            )
        )
    return scenes
