"""streamthink initialization."""

from importlib.metadata import PackageNotFoundError, version

from streamthink.attention_mask import (
    AllowMatrix,
    TokenTypeSequence,
    build_streaming_mask,
    oracle_mask,
    visible_visual_window,
)
from streamthink.backends import (
    GenerationBackend,
    HttpChatBackend,
    MockSummarizer,
    RateModelBackend,
    ReplayBackend,
)
from streamthink.latency_sim import (
    LatencyProfile,
    simulate_postquery_cot,
    simulate_vst,
    speedup_report,
)
from streamthink.memory import MemoryState
from streamthink.orchestrator import (
    QaLatencyReport,
    SessionDriver,
    measure_latency,
    run_session,
    step,
)
from streamthink.rl_objective import (
    RolloutGroup,
    Trajectory,
    group_advantages,
    objective,
    verify_reward,
)
from streamthink.segmenter import flush, ingest_frame
from streamthink.sft_packer import build_sequence, segment_sequence
from streamthink.stream_model import (
    AnswerRecord,
    Clip,
    FrameRecord,
    QueryEvent,
    SessionConfig,
    ThoughtEntry,
    validate_stream,
)

__all__ = [
    "AllowMatrix",
    "AnswerRecord",
    "Clip",
    "FrameRecord",
    "GenerationBackend",
    "HttpChatBackend",
    "LatencyProfile",
    "MemoryState",
    "MockSummarizer",
    "QaLatencyReport",
    "QueryEvent",
    "RateModelBackend",
    "ReplayBackend",
    "RolloutGroup",
    "SessionConfig",
    "SessionDriver",
    "ThoughtEntry",
    "TokenTypeSequence",
    "Trajectory",
    "build_sequence",
    "build_streaming_mask",
    "flush",
    "group_advantages",
    "ingest_frame",
    "measure_latency",
    "objective",
    "oracle_mask",
    "run_session",
    "segment_sequence",
    "simulate_postquery_cot",
    "simulate_vst",
    "speedup_report",
    "step",
    "validate_stream",
    "verify_reward",
]

try:
    __version__ = version("streamthink")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "unknown"
