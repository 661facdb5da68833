from typing import Dict, List, TypedDict


class _FrameRecordRequired(TypedDict):
    frame_index: int
    timestamp_s: float
    visual_tokens: int


class FrameRecordDict(_FrameRecordRequired, total=False):
    caption: str


class ClipRecordDict(TypedDict):
    clip_index: int
    first_frame: int
    last_frame: int
    start_s: float
    end_s: float
    visual_tokens: int


class MemoryEntryDict(TypedDict):
    clip_index: int
    start_s: float
    end_s: float
    text: str


class _QueryRecordRequired(TypedDict):
    query_time_s: float
    question: str


class QueryRecordDict(_QueryRecordRequired, total=False):
    gold: str
    gold_kind: str
    gold_tolerance: float


class AnswerRecordDict(TypedDict):
    query_index: int
    query_time_s: float
    text: str
    boxed: str | None
    start_s: float
    end_s: float


class _ReplayRecordRequired(TypedDict):
    call_index: int
    text: str
    duration_ms: int


class ReplayRecordDict(_ReplayRecordRequired, total=False):
    session: str
    token_count: int


class RolloutRecordDict(TypedDict):
    reward: float
    ratios: List[float]
    logp_cur: List[float]
    logp_ref: List[float]


class SceneClipDict(TypedDict):
    clip_id: int
    start_s: float
    end_s: float
    description: str


class ExtractedEventDict(TypedDict):
    subject: str
    relation: str
    object: str
    description: str


class QaRecordDict(TypedDict):
    question: str
    cot: List[str]
    answer: str
    reasoning_type: str
    chain_id: str


class PackedSegmentDict(TypedDict):
    segment_index: int
    carried_memory: List[MemoryEntryDict]
    elements: List[Dict[str, object]]
    loss_spans: List[List[int]]
