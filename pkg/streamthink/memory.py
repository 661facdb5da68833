"""Long-term textual memory with first-in-first-out eviction."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

from streamthink.exceptions import MemoryOrderError, ParameterError
from streamthink.stream_model import ThoughtEntry
from streamthink.types import MemoryEntryDict
from streamthink.utils.constants import (
    DEFAULT_MEMORY_BUDGET_CHARS,
    DEFAULT_MEMORY_BUDGET_ENTRIES,
    EMPTY_MEMORY_MARKER,
)
from streamthink.utils.file_utils import read_jsonl
from streamthink.utils.logging_config import logger
from streamthink.utils.string_utils import format_time_span


def render_entry(entry: ThoughtEntry) -> str:
    return f"{format_time_span(entry.start_ms, entry.end_ms)}: {entry.text}"


def _rendered_chars(entries: Sequence[ThoughtEntry]) -> int:
    if not entries:
        return 0
    # entries are joined by single newlines
    return sum(len(render_entry(e)) for e in entries) + len(entries) - 1


@dataclass(frozen=True)
class MemoryState:
    """
    Long-term memory m^k, oldest entry first.

    Attributes:
        entries: Stored thoughts in ascending clip order
        budget_entries: Maximum number of stored entries
        budget_chars: Maximum rendered characters of the stored entries
        last_clip_index: Highest clip index ever appended, evicted or not
    """

    entries: Tuple[ThoughtEntry, ...] = ()
    budget_entries: int = DEFAULT_MEMORY_BUDGET_ENTRIES
    budget_chars: int = DEFAULT_MEMORY_BUDGET_CHARS
    last_clip_index: int = 0

    def __post_init__(self) -> None:
        if self.budget_entries < 1 or self.budget_chars < 1:
            raise ParameterError("Invalid input: memory budgets must be positive")

    @property
    def rendered_chars(self) -> int:
        return _rendered_chars(self.entries)

    @property
    def texts(self) -> List[str]:
        return [e.text for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def update(memory: MemoryState, new_thoughts: Sequence[ThoughtEntry]) -> MemoryState:
    """
    Append thoughts and evict the earliest entries until both budgets hold.

    Eviction removes whole entries only. A single thought larger than the
    character budget is evicted immediately.

    Args:
        memory: Current memory
        new_thoughts: Thoughts in ascending clip order

    Returns:
        The updated memory.

    Raises:
        MemoryOrderError: If a thought does not follow every stored clip index.
    """
    if not new_thoughts:
        return memory
    last = max(memory.last_clip_index, memory.entries[-1].clip_index if memory.entries else 0)
    entries = list(memory.entries)
    evicted = 0
    for thought in new_thoughts:
        if thought.clip_index <= last:
            raise MemoryOrderError(
                f"Invalid input: thought for clip {thought.clip_index} does not follow clip {last}"
            )
        last = thought.clip_index
        entries.append(thought)
        while entries and (
            len(entries) > memory.budget_entries
            or _rendered_chars(entries) > memory.budget_chars
        ):
            entries.pop(0)
            evicted += 1
    if evicted:
        logger.debug(f"Evicted {evicted} memory entries")
    return MemoryState(
        entries=tuple(entries),
        budget_entries=memory.budget_entries,
        budget_chars=memory.budget_chars,
        last_clip_index=last,
    )


def render(memory: MemoryState) -> str:
    """Render memory as ``Time a-bs: text`` lines, or the empty-memory marker."""
    if not memory.entries:
        return EMPTY_MEMORY_MARKER
    return "\n".join(render_entry(e) for e in memory.entries)


def memory_to_records(memory: MemoryState) -> List[MemoryEntryDict]:
    return [e.to_record() for e in memory.entries]


def memory_from_records(
    records: Iterable[MemoryEntryDict],
    budget_entries: int = DEFAULT_MEMORY_BUDGET_ENTRIES,
    budget_chars: int = DEFAULT_MEMORY_BUDGET_CHARS,
) -> MemoryState:
    empty = MemoryState(budget_entries=budget_entries, budget_chars=budget_chars)
    return update(empty, [ThoughtEntry.from_record(r) for r in records])


def read_memory_snapshot(path: str | Path, **budgets: int) -> MemoryState:
    return memory_from_records((record for _, record in read_jsonl(path)), **budgets)  # type: ignore[misc]
