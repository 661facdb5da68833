"""Group-relative policy objective computed from supplied rollout statistics."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, List, Mapping, Sequence, Tuple, Union

import numpy as np

from streamthink.exceptions import (
    DomainError,
    GroupError,
    GroupSizeError,
    ParameterError,
    StructureError,
)
from streamthink.stream_model import AnswerRecord
from streamthink.types import RolloutRecordDict
from streamthink.utils.constants import DEFAULT_EPS_HIGH, DEFAULT_EPS_LOW, DEFAULT_KL_BETA
from streamthink.utils.file_utils import read_jsonl
from streamthink.utils.logging_config import logger
from streamthink.utils.string_utils import extract_boxed, normalize_answer

_CHOICE_LETTER = re.compile(r"^\(?([A-Za-z])\)?(?:[.):\s]|$)")


@dataclass(frozen=True)
class Trajectory:
    """
    One sampled response with its per-token statistics.

    Attributes:
        reward: Verifiable reward r_i
        ratios: Per-token probability ratios, all > 0
        logp_cur: Per-token log-probabilities under the current policy
        logp_ref: Per-token log-probabilities under the reference policy
    """

    reward: float
    ratios: Tuple[float, ...]
    logp_cur: Tuple[float, ...] = ()
    logp_ref: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        n = len(self.ratios)
        if n < 1:
            raise StructureError("Invalid input: a trajectory needs at least one token")
        if any(not r > 0 for r in self.ratios):
            raise DomainError("Invalid input: probability ratios must be positive")
        if not self.logp_cur and not self.logp_ref:
            object.__setattr__(self, "logp_cur", (0.0,) * n)
            object.__setattr__(self, "logp_ref", (0.0,) * n)
        if len(self.logp_cur) != n or len(self.logp_ref) != n:
            raise StructureError(
                f"Invalid input: {n} ratios but {len(self.logp_cur)}/{len(self.logp_ref)} log-probs"
            )

    @property
    def token_count(self) -> int:
        return len(self.ratios)

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> Trajectory:
        for key in ("reward", "ratios"):
            if key not in record:
                raise StructureError(f"Invalid input: rollout record is missing '{key}'")
        return cls(
            reward=float(record["reward"]),
            ratios=tuple(record["ratios"]),
            logp_cur=tuple(float(x) for x in record.get("logp_cur", ())),
            logp_ref=tuple(float(x) for x in record.get("logp_ref", ())),
        )

    def to_record(self) -> RolloutRecordDict:
        return {
            "reward": self.reward,
            "ratios": list(self.ratios),
            "logp_cur": list(self.logp_cur),
            "logp_ref": list(self.logp_ref),
        }


@dataclass(frozen=True)
class RolloutGroup:
    """
    N trajectories sampled for one prompt, with the clipping and KL settings.

    Attributes:
        trajectories: The sampled trajectories
        eps_low: Lower clipping range, in [0, 1)
        eps_high: Upper clipping range, in [0, 1)
        beta: KL penalty coefficient, >= 0
    """

    trajectories: Tuple[Trajectory, ...]
    eps_low: float = DEFAULT_EPS_LOW
    eps_high: float = DEFAULT_EPS_HIGH
    beta: float = DEFAULT_KL_BETA

    def __post_init__(self) -> None:
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        for name in ("eps_low", "eps_high"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ParameterError(f"Invalid input: {name} must be in [0, 1), got {value}")
        if self.beta < 0:
            raise ParameterError(f"Invalid input: beta must be >= 0, got {self.beta}")

    @property
    def rewards(self) -> List[float]:
        return [t.reward for t in self.trajectories]


class GoldKind(str, Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    NUMERIC_COUNT = "numeric_count"
    FREE_TEXT = "free_text"


@dataclass(frozen=True)
class GoldAnswer:
    kind: GoldKind
    value: Union[str, float]
    numeric_tolerance: float = field(default=0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", GoldKind(self.kind))
        if self.numeric_tolerance < 0:
            raise ParameterError("Invalid input: numeric_tolerance must be >= 0")


def group_advantages(rewards: Sequence[float]) -> List[float]:
    """
    Mean-centred advantages, r_i - mean(R), without standard-deviation scaling.

    Raises:
        GroupSizeError: If fewer than two rewards are given.
    """
    if len(rewards) < 2:
        raise GroupSizeError(
            f"Invalid input: advantages need a group of at least 2, got {len(rewards)}"
        )
    r = np.asarray(rewards, dtype=np.float64)
    return (r - r.mean()).tolist()


def clipped_term(ratio: float, advantage: float, eps_low: float, eps_high: float) -> float:
    """
    min(ratio * A, clip(ratio, 1 - eps_low, 1 + eps_high) * A).

    Raises:
        DomainError: If ratio is not positive.
    """
    if not ratio > 0:
        raise DomainError(f"Invalid input: ratio must be positive, got {ratio}")
    clipped = min(max(ratio, 1.0 - eps_low), 1.0 + eps_high)
    return min(ratio * advantage, clipped * advantage)


# below this |d| the closed form rounds to 0.0, so the series is used
_KL_SERIES_CUTOFF = 1e-4


def _kl_series(delta: Any) -> Any:
    return delta * delta * (0.5 + delta * (1.0 / 6.0 + delta / 24.0))


def kl_penalty(logp_current: float, logp_reference: float) -> float:
    """
    Per-token KL estimate exp(d) - d - 1 with d = logp_reference - logp_current.

    Raises:
        DomainError: If an input is not finite.
    """
    if not (math.isfinite(logp_current) and math.isfinite(logp_reference)):
        raise DomainError("Invalid input: log-probabilities must be finite")
    delta = logp_reference - logp_current
    if abs(delta) < _KL_SERIES_CUTOFF:
        return _kl_series(delta)
    return max(0.0, math.expm1(delta) - delta)


def ratios_from_logprobs(
    logp_new: Sequence[float], logp_old: Sequence[float]
) -> List[float]:
    """Per-token ratios exp(logp_new - logp_old)."""
    if len(logp_new) != len(logp_old):
        raise StructureError("Invalid input: log-prob series differ in length")
    return np.exp(np.asarray(logp_new) - np.asarray(logp_old)).tolist()


def _token_terms(group: RolloutGroup) -> Tuple[float, int]:
    advantages = group_advantages(group.rewards)
    total = 0.0
    tokens = 0
    for trajectory, advantage in zip(group.trajectories, advantages):
        ratios = np.asarray(trajectory.ratios)
        clipped = np.clip(ratios, 1.0 - group.eps_low, 1.0 + group.eps_high)
        surrogate = np.minimum(ratios * advantage, clipped * advantage)
        delta = np.asarray(trajectory.logp_ref) - np.asarray(trajectory.logp_cur)
        if not np.all(np.isfinite(delta)):
            raise DomainError("Invalid input: log-probabilities must be finite")
        small = np.abs(delta) < _KL_SERIES_CUTOFF
        kl = np.where(small, _kl_series(delta), np.maximum(np.expm1(delta) - delta, 0.0))
        total += float(np.sum(surrogate - group.beta * kl))
        tokens += trajectory.token_count
    return total, tokens


def objective(group: RolloutGroup) -> float:
    """
    Token-mean clipped surrogate minus the per-token KL penalty.

    Each trajectory's advantage is broadcast to all of its tokens and the sum
    is normalized by the total token count of the group.

    Raises:
        GroupError: If the group is empty.
        GroupSizeError: If the group holds a single trajectory.
    """
    if not group.trajectories:
        raise GroupError("Invalid input: rollout group is empty")
    total, tokens = _token_terms(group)
    return total / tokens


def filter_informative_groups(groups: Sequence[RolloutGroup]) -> List[RolloutGroup]:
    """Drop groups whose rewards are all equal, since their advantages vanish."""
    kept = [g for g in groups if len(set(g.rewards)) > 1]
    if len(kept) < len(groups):
        logger.debug(f"Dropped {len(groups) - len(kept)} zero-advantage rollout groups")
    return kept


def batch_objective(groups: Sequence[RolloutGroup]) -> float:
    """Token-mean objective over several groups sharing one normalizer."""
    if not groups:
        raise GroupError("Invalid input: no rollout groups given")
    total = 0.0
    tokens = 0
    for group in groups:
        if not group.trajectories:
            raise GroupError("Invalid input: rollout group is empty")
        group_total, group_tokens = _token_terms(group)
        total += group_total
        tokens += group_tokens
    return total / tokens


def _parse_number(text: str) -> float | None:
    try:
        return float(text.strip().replace(",", ""))
    except ValueError:
        return None


def verify_reward(answer: Union[AnswerRecord, str], gold: GoldAnswer) -> float:
    """
    Score the last boxed answer against the gold answer.

    Never raises: a missing box or an unparseable prediction scores 0.

    Args:
        answer: Answer record or raw answer text
        gold: Reference answer

    Returns:
        1.0 on a match, else 0.0.
    """
    text = answer.text if isinstance(answer, AnswerRecord) else answer
    predicted = extract_boxed(text)
    if predicted is None:
        return 0.0
    if gold.kind is GoldKind.MULTIPLE_CHOICE:
        match = _CHOICE_LETTER.match(predicted.strip())
        expected = _CHOICE_LETTER.match(str(gold.value).strip())
        if match is None or expected is None:
            return 0.0
        return 1.0 if match.group(1).lower() == expected.group(1).lower() else 0.0
    if gold.kind is GoldKind.NUMERIC_COUNT:
        value = _parse_number(predicted)
        target = _parse_number(str(gold.value))
        if value is None or target is None:
            return 0.0
        return 1.0 if abs(value - target) <= gold.numeric_tolerance else 0.0
    return 1.0 if normalize_answer(predicted) == normalize_answer(str(gold.value)) else 0.0


def read_rollout_group(
    path: str | Path,
    eps_low: float = DEFAULT_EPS_LOW,
    eps_high: float = DEFAULT_EPS_HIGH,
    beta: float = DEFAULT_KL_BETA,
) -> RolloutGroup:
    trajectories = []
    for line_number, record in read_jsonl(path):
        try:
            trajectories.append(Trajectory.from_record(record))
        except (StructureError, DomainError) as e:
            raise type(e)(f"{path}:{line_number}: {e}") from e
    return RolloutGroup(tuple(trajectories), eps_low=eps_low, eps_high=eps_high, beta=beta)
