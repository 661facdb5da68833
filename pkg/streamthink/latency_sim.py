"""Virtual-clock comparison of pre-query streaming thoughts against post-query reasoning."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

from streamthink.backends.base import RequestKind
from streamthink.backends.mock_backend import RateModelBackend
from streamthink.backends.prompts import render_answer_prompt
from streamthink.exceptions import LatencyDivisionError, ParameterError, StructureError
from streamthink.memory import MemoryState
from streamthink.orchestrator import QaLatencyReport, measure_latency, run_session
from streamthink.segmenter import fit_clip_to_cap
from streamthink.stream_model import (
    DeadlinePolicy,
    FrameRecord,
    QueryEvent,
    SessionConfig,
)
from streamthink.utils.logging_config import logger

CALIBRATED_PROFILE_NAME = "calibrated_latency.json"


@dataclass(frozen=True)
class LatencyProfile:
    """
    Generation profile for one latency comparison.

    Attributes:
        frame_interarrival: Seconds between frames
        clip_count: Clips streamed before the query
        thought_tokens: Tokens per streaming thought
        answer_tokens: Tokens per direct answer
        cot_tokens: Reasoning tokens before a post-query answer
        generation_rate: Tokens per second
        prefill_s: Fixed latency added to every generation call
        frames_per_clip: Frames in one clip of the synthetic stream
        clip_capacity_L: Visual tokens per clip
        deadline_policy: Policy applied when a thought overruns its gap
    """

    frame_interarrival: float
    clip_count: int
    thought_tokens: int
    answer_tokens: int
    cot_tokens: int
    generation_rate: float
    prefill_s: float = 0.0
    frames_per_clip: int = 4
    clip_capacity_L: int = 2048
    deadline_policy: DeadlinePolicy = DeadlinePolicy.BLOCK

    def __post_init__(self) -> None:
        for name in ("frame_interarrival", "generation_rate"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"Invalid input: {name} must be positive")
        for name in ("clip_count", "thought_tokens", "answer_tokens", "frames_per_clip"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ParameterError(f"Invalid input: {name} must be a positive integer")
        if not isinstance(self.cot_tokens, int) or self.cot_tokens < 0:
            raise ParameterError("Invalid input: cot_tokens must be a non-negative integer")
        if self.prefill_s < 0:
            raise ParameterError("Invalid input: prefill_s must be >= 0")
        if self.clip_capacity_L < self.frames_per_clip:
            raise ParameterError("Invalid input: clip_capacity_L must be >= frames_per_clip")
        object.__setattr__(self, "deadline_policy", DeadlinePolicy(self.deadline_policy))

    @property
    def thought_seconds(self) -> float:
        return self.prefill_s + self.thought_tokens / self.generation_rate

    @property
    def clip_span_seconds(self) -> float:
        return self.frames_per_clip * self.frame_interarrival

    @property
    def thoughts_fit_gaps(self) -> bool:
        return self.thought_seconds <= self.clip_span_seconds

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record["deadline_policy"] = self.deadline_policy.value
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> LatencyProfile:
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(record) - known)
        if unknown:
            raise StructureError(f"Invalid input: unknown profile keys {unknown}")
        try:
            return cls(**dict(record))
        except TypeError as e:
            raise StructureError(f"Invalid input: incomplete latency profile: {e}") from e


def read_profile(path: str | Path) -> LatencyProfile:
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise StructureError(f"Invalid input: {path} is not valid JSON: {e}") from e
    return LatencyProfile.from_record(record)


def calibrated_profile() -> LatencyProfile:
    """The packaged profile reproducing a 0.56 s direct answer and an 8.80 s reasoned answer."""
    resource = resources.files("streamthink.datafiles").joinpath("profiles").joinpath(
        CALIBRATED_PROFILE_NAME
    )
    return LatencyProfile.from_record(json.loads(resource.read_text(encoding="utf-8")))


def calibrate_profile(
    vst_latency_s: float,
    cot_latency_s: float,
    rate: float = 50.0,
    frame_interarrival: float = 0.5,
    clip_count: int = 8,
    thought_tokens: Optional[int] = None,
) -> LatencyProfile:
    """
    Derive token counts that reproduce two target latencies at a given rate.

    Args:
        vst_latency_s: Target direct-answer latency
        cot_latency_s: Target post-query reasoning latency, at least the former
        rate: Tokens per second
        frame_interarrival: Seconds between frames
        clip_count: Clips before the query
        thought_tokens: Tokens per thought; defaults to half of what fits a clip gap

    Returns:
        The calibrated profile.
    """
    if cot_latency_s < vst_latency_s:
        raise ParameterError("Invalid input: cot_latency_s must be >= vst_latency_s")
    answer_tokens = int(round(vst_latency_s * rate))
    cot_tokens = int(round(cot_latency_s * rate)) - answer_tokens
    if thought_tokens is None:
        thought_tokens = max(1, int(4 * frame_interarrival * rate) // 2)
    return LatencyProfile(
        frame_interarrival=frame_interarrival,
        clip_count=clip_count,
        thought_tokens=thought_tokens,
        answer_tokens=max(1, answer_tokens),
        cot_tokens=max(0, cot_tokens),
        generation_rate=rate,
    )


def _backend(profile: LatencyProfile) -> RateModelBackend:
    return RateModelBackend(
        thought_tokens=profile.thought_tokens,
        answer_tokens=profile.answer_tokens,
        cot_tokens=profile.cot_tokens,
        tokens_per_second=profile.generation_rate,
        prefill_s=profile.prefill_s,
    )


def synthetic_stream(profile: LatencyProfile) -> tuple[List[FrameRecord], QueryEvent]:
    """
    Frames for ``clip_count`` full clips plus a partial tail, and the query.

    Every frame carries ``L / frames_per_clip`` visual tokens, so each clip
    closes on its last frame. The query arrives one clip span after the last
    full clip closed.
    """
    per_frame = profile.clip_capacity_L // profile.frames_per_clip
    last = per_frame + profile.clip_capacity_L % profile.frames_per_clip
    step_ms = int(round(profile.frame_interarrival * 1000))
    frames: List[FrameRecord] = []
    total = profile.clip_count * profile.frames_per_clip + profile.frames_per_clip - 1
    for k in range(total):
        closing = (k + 1) % profile.frames_per_clip == 0
        frames.append(
            FrameRecord(
                frame_index=k,
                timestamp_ms=k * step_ms,
                visual_token_count=last if closing else per_frame,
                caption=f"frame {k}",
            )
        )
    last_close_ms = (profile.clip_count * profile.frames_per_clip - 1) * step_ms
    query = QueryEvent(
        query_time_ms=last_close_ms + profile.frames_per_clip * step_ms,
        question="What happened in the video?",
        gold_answer="A",
    )
    return frames, query


def _session_config(profile: LatencyProfile) -> SessionConfig:
    return SessionConfig(
        clip_capacity_L=profile.clip_capacity_L,
        max_thinking_times=profile.clip_count,
        per_step_video_token_cap=max(2 * profile.clip_capacity_L, 8192),
        deadline_policy=profile.deadline_policy,
        thought_max_new_tokens=profile.thought_tokens,
        answer_max_new_tokens=profile.answer_tokens,
    )


def simulate_vst(profile: LatencyProfile) -> QaLatencyReport:
    """
    Run the orchestrator on the profile's synthetic stream with a rate-modelled backend.

    When every thought fits its clip gap the QA latency is the direct
    answer's generation time alone.
    """
    frames, query = synthetic_stream(profile)
    result = run_session(_session_config(profile), frames, [query], _backend(profile))
    report = measure_latency(result.transcript)
    if not profile.thoughts_fit_gaps:
        logger.info(
            f"Thoughts take {profile.thought_seconds:.2f} s against a "
            f"{profile.clip_span_seconds:.2f} s clip span; {report.deadline_misses} deadline misses"
        )
    return report


def simulate_postquery_cot(profile: LatencyProfile) -> QaLatencyReport:
    """One reasoned answer issued at query time with no pre-query generation."""
    frames, query = synthetic_stream(profile)
    tail = frames[-(profile.frames_per_clip - 1) :] if profile.frames_per_clip > 1 else frames[-1:]
    clip = fit_clip_to_cap(tail, profile.clip_capacity_L, profile.clip_count + 1)
    request = render_answer_prompt(
        MemoryState(),
        clip,
        query,
        max_new_tokens=profile.cot_tokens + profile.answer_tokens,
        issued_at_ms=query.query_time_ms,
        kind=RequestKind.COT,
    )
    result = _backend(profile).generate(request)
    return QaLatencyReport(
        qa_latency_ms=result.duration_ms,
        tokens_generated=result.token_count,
    )


def speedup_report(vst: QaLatencyReport, cot: QaLatencyReport) -> float:
    """
    Ratio of post-query reasoning latency to streaming latency.

    Raises:
        LatencyDivisionError: If the streaming latency is zero.
    """
    if vst.qa_latency_ms <= 0:
        raise LatencyDivisionError("Streaming QA latency is zero; speedup is undefined")
    return cot.qa_latency_ms / vst.qa_latency_ms


@dataclass(frozen=True)
class ParadigmComparison:
    profile: LatencyProfile
    vst: QaLatencyReport
    cot: QaLatencyReport
    speedup: float


def compare_paradigms(profile: LatencyProfile) -> ParadigmComparison:
    vst = simulate_vst(profile)
    cot = simulate_postquery_cot(profile)
    return ParadigmComparison(profile, vst, cot, speedup_report(vst, cot))


def sweep_clip_counts(
    profile: LatencyProfile, counts: Iterable[int]
) -> Dict[int, QaLatencyReport]:
    """Streaming latency report per clip count, other profile fields unchanged."""
    return {
        count: simulate_vst(_with_clip_count(profile, count)) for count in counts
    }


def _with_clip_count(profile: LatencyProfile, count: int) -> LatencyProfile:
    record = profile.to_record()
    record["clip_count"] = count
    return LatencyProfile.from_record(record)


def format_comparison(comparison: ParadigmComparison) -> str:
    """Tab-separated table: paradigm, QA latency, overlapped thinking, speedup."""
    lines = ["paradigm\tqa_latency_s\toverlapped_thinking_s\tspeedup"]
    lines.append(
        f"streaming_thinking\t{comparison.vst.qa_latency:.2f}\t"
        f"{comparison.vst.thinking_time_overlapped:.2f}\t{comparison.speedup:.2f}"
    )
    lines.append(
        f"post_query_cot\t{comparison.cot.qa_latency:.2f}\t"
        f"{comparison.cot.thinking_time_overlapped:.2f}\t1.00"
    )
    return "\n".join(lines) + "\n"
