"""Streaming video attention mask.

A token may attend to any earlier (or the same) text token, and to an earlier
visual token only while fewer than L visual tokens lie strictly after it up to
and including the attending position.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional

import numpy as np

from streamthink.exceptions import MaskIndexError, ParameterError
from streamthink.utils.constants import DENSE_MASK_LIMIT, DISALLOWED_SENTINEL


class TokenType(str, Enum):
    VISUAL = "V"
    TEXT = "T"


@dataclass(frozen=True)
class TokenTypeSequence:
    """Ordered token types; at least one token."""

    types: tuple[TokenType, ...]

    def __post_init__(self) -> None:
        if len(self.types) < 1:
            raise ParameterError("Invalid input: a token sequence needs at least one token")
        object.__setattr__(self, "types", tuple(TokenType(t) for t in self.types))

    @classmethod
    def from_string(cls, text: str) -> TokenTypeSequence:
        """Parse a string such as ``"VVTV"``."""
        try:
            return cls(tuple(TokenType(ch) for ch in text.strip().upper()))
        except ValueError as e:
            raise ParameterError(
                f"Invalid input: token types must be 'V' or 'T', got {text!r}"
            ) from e

    @classmethod
    def from_flags(cls, is_visual: Iterable[bool]) -> TokenTypeSequence:
        return cls(tuple(TokenType.VISUAL if v else TokenType.TEXT for v in is_visual))

    @property
    def n(self) -> int:
        return len(self.types)

    @property
    def is_visual(self) -> np.ndarray:
        return np.fromiter((t is TokenType.VISUAL for t in self.types), dtype=bool, count=self.n)

    def __len__(self) -> int:
        return len(self.types)

    def __str__(self) -> str:
        return "".join(t.value for t in self.types)


@dataclass(frozen=True)
class MaskRow:
    """
    Descriptor of one mask row.

    Attributes:
        row: Row index i
        window_start: Smallest visual index visible at row i; i + 1 when no
            visual token has been seen
        visible_visual: Number of visual columns allowed at row i
    """

    row: int
    window_start: int
    visible_visual: int


class AllowMatrix:
    """
    Boolean attention permissions, dense or as per-row descriptors.

    Both views answer the same queries; ``to_dense`` materializes the dense
    form on demand.
    """

    def __init__(
        self,
        n: int,
        L: int,
        is_visual: np.ndarray,
        window_starts: np.ndarray,
        visible_counts: np.ndarray,
        dense: Optional[np.ndarray] = None,
    ):
        self._n = n
        self._L = L
        self._is_visual = is_visual
        self._window_starts = window_starts
        self._visible_counts = visible_counts
        self._dense = dense

    @property
    def n(self) -> int:
        return self._n

    @property
    def L(self) -> int:
        return self._L

    @property
    def is_dense(self) -> bool:
        return self._dense is not None

    def _check_row(self, i: int) -> None:
        if not 0 <= i < self._n:
            raise MaskIndexError(f"Invalid input: row {i} is outside 0..{self._n - 1}")

    def allowed(self, i: int, j: int) -> bool:
        self._check_row(i)
        if not 0 <= j < self._n:
            raise MaskIndexError(f"Invalid input: column {j} is outside 0..{self._n - 1}")
        if self._dense is not None:
            return bool(self._dense[i, j])
        if j > i:
            return False
        if not self._is_visual[j]:
            return True
        return bool(j >= self._window_starts[i])

    def row(self, i: int) -> np.ndarray:
        self._check_row(i)
        if self._dense is not None:
            return self._dense[i].copy()
        cols = np.arange(self._n)
        return (cols <= i) & (~self._is_visual | (cols >= self._window_starts[i]))

    def to_dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense.copy()
        rows = np.arange(self._n)[:, None]
        cols = np.arange(self._n)[None, :]
        return (cols <= rows) & (
            ~self._is_visual[None, :] | (cols >= self._window_starts[:, None])
        )

    def additive(self, sentinel: float = DISALLOWED_SENTINEL) -> np.ndarray:
        """Additive view: 0 where allowed, ``sentinel`` elsewhere."""
        return np.where(self.to_dense(), 0.0, sentinel)

    def descriptors(self) -> List[MaskRow]:
        return [
            MaskRow(i, int(self._window_starts[i]), int(self._visible_counts[i]))
            for i in range(self._n)
        ]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AllowMatrix):
            return NotImplemented
        return (
            self._n == other._n
            and self._L == other._L
            and bool(np.array_equal(self.to_dense(), other.to_dense()))
        )

    def __repr__(self) -> str:
        view = "dense" if self.is_dense else "descriptor"
        return f"AllowMatrix(n={self._n}, L={self._L}, view={view})"


def _check_L(L: int) -> None:
    if not isinstance(L, (int, np.integer)) or L < 1:
        raise ParameterError(f"Invalid input: window size L must be >= 1, got {L!r}")


def _row_descriptors(is_visual: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray]:
    n = is_visual.shape[0]
    counts = np.cumsum(is_visual)
    visual_positions = np.flatnonzero(is_visual)
    visible = np.minimum(counts, L)
    window_starts = np.arange(1, n + 1)
    seen = counts > 0
    first_rank = counts[seen] - visible[seen]
    window_starts[seen] = visual_positions[first_rank]
    return window_starts, visible


def build_streaming_mask(
    seq: TokenTypeSequence, L: int, dense_limit: int = DENSE_MASK_LIMIT
) -> AllowMatrix:
    """
    Build the streaming mask with running visual counts.

    Args:
        seq: Token types
        L: Visual window size
        dense_limit: Largest n materialized densely

    Returns:
        The allow matrix; dense when n <= dense_limit.

    Raises:
        ParameterError: If L < 1.
    """
    _check_L(L)
    is_visual = seq.is_visual
    window_starts, visible = _row_descriptors(is_visual, L)
    dense: Optional[np.ndarray] = None
    if seq.n <= dense_limit:
        counts = np.cumsum(is_visual)
        rows = np.arange(seq.n)[:, None]
        cols = np.arange(seq.n)[None, :]
        in_window = (counts[:, None] - counts[None, :]) < L
        dense = (cols <= rows) & (~is_visual[None, :] | in_window)
    return AllowMatrix(seq.n, int(L), is_visual, window_starts, visible, dense)


def oracle_mask(seq: TokenTypeSequence, L: int) -> AllowMatrix:
    """Evaluate the mask predicate cell by cell with a fresh count per cell."""
    _check_L(L)
    flags = [t is TokenType.VISUAL for t in seq.types]
    n = seq.n
    cells = [[False] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            if not flags[j]:
                cells[i][j] = True
                continue
            newer_visual = flags[j + 1 : i + 1].count(True)
            cells[i][j] = newer_visual < L
    is_visual = seq.is_visual
    window_starts, visible = _row_descriptors(is_visual, L)
    return AllowMatrix(n, int(L), is_visual, window_starts, visible, np.array(cells, dtype=bool))


def visible_visual_window(mask: AllowMatrix, seq: TokenTypeSequence, i: int) -> List[int]:
    """
    Visual indices j <= i that row i may attend to.

    Raises:
        MaskIndexError: If i is outside the sequence.
    """
    if not 0 <= i < seq.n:
        raise MaskIndexError(f"Invalid input: row {i} is outside 0..{seq.n - 1}")
    row = mask.row(i)
    is_visual = seq.is_visual
    return [int(j) for j in np.flatnonzero(row[: i + 1] & is_visual[: i + 1])]


def format_mask(mask: AllowMatrix) -> str:
    """Dump format: header ``n L`` then one row of ``0``/``1`` per token."""
    lines = [f"{mask.n} {mask.L}"]
    for i in range(mask.n):
        lines.append("".join("1" if v else "0" for v in mask.row(i)))
    return "\n".join(lines) + "\n"


def build_mask_rows(seq: TokenTypeSequence, L: int) -> List[MaskRow]:
    """Per-row descriptors: first visible visual column and visible visual count."""
    _check_L(L)
    window_starts, visible = _row_descriptors(seq.is_visual, L)
    return [
        MaskRow(row=i, window_start=int(window_starts[i]), visible_visual=int(visible[i]))
        for i in range(seq.n)
    ]
