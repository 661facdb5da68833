from __future__ import annotations

import threading
from collections import defaultdict
from pathlib import Path
from typing import Any, DefaultDict, Dict, Iterable, Mapping, Optional, Tuple, cast

from streamthink.backends.base import GenerationBackend, GenerationRequest, GenerationResult
from streamthink.exceptions import StructureError, TraceExhaustedError
from streamthink.types import ReplayRecordDict
from streamthink.utils.file_utils import read_jsonl
from streamthink.utils.logging_config import logger
from streamthink.utils.string_utils import word_count

ANY_SESSION = "*"


class ReplayBackend(GenerationBackend):
    """
    Replays recorded generations keyed by (session, call index).

    Records without a ``session`` key apply to every session. Call indices
    count from 0 per session in request order.
    """

    def __init__(self, records: Iterable[Mapping[str, Any]], backend_name: str = "replay"):
        super().__init__("replay", backend_name)
        self._records: Dict[Tuple[str, int], ReplayRecordDict] = {}
        for record in records:
            for key in ("call_index", "text", "duration_ms"):
                if key not in record:
                    raise StructureError(f"Invalid input: replay record is missing '{key}'")
            session = str(record.get("session", ANY_SESSION))
            self._records[(session, int(record["call_index"]))] = cast(ReplayRecordDict, record)
        self._calls: DefaultDict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, backend_name: str = "replay") -> ReplayBackend:
        return cls((record for _, record in read_jsonl(path)), backend_name=backend_name)

    def _lookup(self, session: str, call_index: int) -> Optional[ReplayRecordDict]:
        return self._records.get((session, call_index)) or self._records.get(
            (ANY_SESSION, call_index)
        )

    def generate(self, request: GenerationRequest) -> GenerationResult:
        with self._lock:
            call_index = self._calls[request.session_id]
            self._calls[request.session_id] += 1
        record = self._lookup(request.session_id, call_index)
        if record is None:
            raise TraceExhaustedError(
                f"Replay trace has no record for session {request.session_id!r} "
                f"call {call_index}"
            )
        text = str(record["text"])
        logger.debug(f"Replaying call {call_index} for session {request.session_id}")
        return self._finish(
            request,
            text,
            int(record["duration_ms"]),
            int(record.get("token_count", word_count(text))),
        )
