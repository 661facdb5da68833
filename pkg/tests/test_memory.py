import os
import random
import sys

import pytest

# Ensure project root is on sys.path so we can import streamthink modules
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from streamthink.exceptions import MemoryOrderError, ParameterError  # noqa: E402
from streamthink.memory import (  # noqa: E402
    MemoryState,
    memory_from_records,
    memory_to_records,
    read_memory_snapshot,
    render,
    render_entry,
    update,
)
from streamthink.stream_model import ThoughtEntry  # noqa: E402
from streamthink.utils.constants import EMPTY_MEMORY_MARKER  # noqa: E402


def _thought(k, text=None, start_ms=None, end_ms=None):
    start = (k - 1) * 2000 if start_ms is None else start_ms
    end = start + 1500 if end_ms is None else end_ms
    return ThoughtEntry(k, start, end, text or f"thought {k}")


def test_fifo_eviction_by_entry_budget():
    memory = update(MemoryState(budget_entries=2), [_thought(1)])

    memory = update(memory, [_thought(2), _thought(3)])

    assert [e.clip_index for e in memory.entries] == [2, 3]


def test_append_within_budget_stores_list_unchanged():
    thoughts = [_thought(1), _thought(2)]

    memory = update(MemoryState(), thoughts)

    assert list(memory.entries) == thoughts


def test_append_nothing_is_identity():
    memory = update(MemoryState(), [_thought(1)])

    assert update(memory, []) is memory


def test_out_of_order_thought_is_rejected():
    memory = update(MemoryState(), [_thought(2)])

    with pytest.raises(MemoryOrderError, match="clip 1"):
        update(memory, [_thought(1)])


def test_order_is_checked_against_evicted_entries():
    memory = update(MemoryState(budget_entries=1), [_thought(1), _thought(2)])
    assert memory.texts == ["thought 2"]

    with pytest.raises(MemoryOrderError):
        update(memory, [_thought(2, text="again")])


def test_render_empty_memory_is_marker():
    assert render(MemoryState()) == EMPTY_MEMORY_MARKER


def test_render_single_entry_uses_time_span():
    memory = update(MemoryState(), [_thought(1, "a man enters", 0, 12500)])

    assert render(memory) == "Time 0.0-12.5s: a man enters"


def test_render_keeps_chronological_order():
    memory = update(MemoryState(), [_thought(1, "first"), _thought(2, "second")])

    lines = render(memory).splitlines()

    assert lines == ["Time 0.0-1.5s: first", "Time 2.0-3.5s: second"]


def test_oversized_thought_is_evicted_at_once():
    memory = update(MemoryState(budget_chars=30), [_thought(1, "short"), _thought(2, "x" * 40)])

    assert memory.entries == ()
    assert memory.last_clip_index == 2


def test_memory_rejects_non_positive_budget():
    with pytest.raises(ParameterError):
        MemoryState(budget_entries=0)


def _longest_fitting_suffix(appended, budget_entries, budget_chars):
    suffix = []
    for entry in reversed(appended):
        candidate = [entry] + suffix
        text = "\n".join(render_entry(e) for e in candidate)
        if len(candidate) > budget_entries or len(text) > budget_chars:
            break
        suffix = candidate
    return suffix


def test_random_updates_hold_both_budgets():
    rng = random.Random(7)
    for _ in range(500):
        budget_entries = rng.randint(1, 6)
        budget_chars = rng.randint(20, 200)
        memory = MemoryState(budget_entries=budget_entries, budget_chars=budget_chars)
        appended = []
        k = 0
        for _ in range(rng.randint(1, 5)):
            batch = []
            for _ in range(rng.randint(0, 4)):
                k += 1
                batch.append(_thought(k, "w" * rng.randint(1, 60)))
            memory = update(memory, batch)
            appended.extend(batch)

            assert len(memory) <= budget_entries
            assert memory.rendered_chars <= budget_chars
            assert len(render(memory)) == memory.rendered_chars or not memory.entries
            assert list(memory.entries) == _longest_fitting_suffix(
                appended, budget_entries, budget_chars
            )


def test_records_round_trip_and_snapshot_file(tmp_path):
    memory = update(MemoryState(), [_thought(1, "a"), _thought(2, "b")])
    records = memory_to_records(memory)

    assert memory_from_records(records).texts == ["a", "b"]

    path = tmp_path / "memory.jsonl"
    path.write_text("".join(f'{{"clip_index": {r["clip_index"]}, "start_s": {r["start_s"]}, '
                            f'"end_s": {r["end_s"]}, "text": "{r["text"]}"}}\n' for r in records),
                    encoding="utf-8")

    snapshot = read_memory_snapshot(path, budget_entries=1)

    assert snapshot.texts == ["b"]
