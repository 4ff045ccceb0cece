"""1D symbol lattices with quiescent (open) boundaries and synchronous local rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_TRACE_BUDGET = 1 << 28


class ContractError(ValueError):
    """Raised when an operation is called outside its precondition."""


@dataclass(frozen=True)
class Alphabet:
    name: str
    labels: tuple[str, ...]
    quiescent_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 2:
            raise ContractError("alphabet needs at least two symbols")
        if len(set(self.labels)) != len(self.labels):
            raise ContractError(f"duplicate labels in alphabet {self.name!r}")
        if not 0 <= self.quiescent_id < len(self.labels):
            raise ContractError("quiescent_id outside alphabet")
        if len(self.labels) > 255:
            raise ContractError("symbols are stored as uint8")

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ContractError(f"unknown symbol {label!r} for alphabet {self.name!r}") from None


@dataclass(frozen=True, eq=False)
class Lattice:
    cells: np.ndarray
    alphabet: Alphabet

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.uint8, copy=True).reshape(-1)
        if cells.size < 1:
            raise ContractError("lattice must have at least one cell")
        if cells.max() >= self.alphabet.size:
            raise ContractError("cell symbol outside alphabet")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    def __len__(self) -> int:
        return self.cells.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Lattice):
            return NotImplemented
        return self.alphabet == other.alphabet and np.array_equal(self.cells, other.cells)

    def __repr__(self) -> str:
        body = " ".join(self.alphabet.labels[s] for s in self.cells[:16])
        more = " ..." if len(self) > 16 else ""
        return f"Lattice({self.alphabet.name}, L={len(self)}: {body}{more})"

    def with_cells(self, cells) -> "Lattice":
        return Lattice(cells, self.alphabet)


@dataclass
class LocalRule:
    """A radius-``r`` rule given as a scalar function of a window of symbol ids.

    The dense lookup array is enumerated once from ``fn`` and drives the
    vectorized update; ``fn`` itself stays the readable definition.
    """

    alphabet: Alphabet
    radius: int
    fn: Callable[[tuple[int, ...]], int]
    name: str = "rule"
    _lookup: np.ndarray | None = field(default=None, repr=False)

    @property
    def lookup(self) -> np.ndarray:
        if self._lookup is None:
            S, width = self.alphabet.size, 2 * self.radius + 1
            out = np.empty(S**width, dtype=np.uint8)
            for code in range(S**width):
                out[code] = self.fn(decode_window(code, S, width))
            if out.max() >= S:
                raise ContractError(f"{self.name} emits a symbol outside the alphabet")
            self._lookup = out
        return self._lookup

    def __call__(self, window: Sequence[int]) -> int:
        return int(self.fn(tuple(int(s) for s in window)))


def encode_window(window: Sequence[int], alphabet_size: int) -> int:
    code = 0
    for s in window:
        code = code * alphabet_size + int(s)
    return code


def decode_window(code: int, alphabet_size: int, width: int) -> tuple[int, ...]:
    out = []
    for _ in range(width):
        code, s = divmod(code, alphabet_size)
        out.append(s)
    return tuple(reversed(out))


def pad(cells: np.ndarray, radius: int, quiescent: int) -> np.ndarray:
    """Pad the last axis with ``radius`` quiescent cells on each side."""
    widths = [(0, 0)] * (cells.ndim - 1) + [(radius, radius)]
    return np.pad(cells, widths, constant_values=quiescent)


def window_codes(cells: np.ndarray, radius: int, alphabet_size: int, quiescent: int) -> np.ndarray:
    """Base-|S| index of every cell's window, leftmost cell most significant.

    Works on the last axis, so a ``(batch, L)`` array gives ``(batch, L)`` codes.
    """
    padded = pad(cells, radius, quiescent).astype(np.int64)
    L = cells.shape[-1]
    codes = padded[..., 0:L].copy()
    for k in range(1, 2 * radius + 1):
        codes *= alphabet_size
        codes += padded[..., k : k + L]
    return codes


def neighborhood(lattice: Lattice, i: int, r: int) -> np.ndarray:
    L = len(lattice)
    if not 0 <= i < L:
        raise ContractError(f"cell index {i} outside lattice of length {L}")
    if r < 1:
        raise ContractError("radius must be >= 1")
    q = lattice.alphabet.quiescent_id
    out = np.full(2 * r + 1, q, dtype=np.uint8)
    lo, hi = max(0, i - r), min(L, i + r + 1)
    out[lo - (i - r) : hi - (i - r)] = lattice.cells[lo:hi]
    return out


def apply_local_rule(lattice: Lattice, rule: LocalRule) -> Lattice:
    """One synchronous update; every output cell reads only the input buffer."""
    if rule.alphabet != lattice.alphabet:
        raise ContractError("rule and lattice alphabets differ")
    return lattice.with_cells(apply_rule_cells(lattice.cells, rule))


def apply_rule_cells(cells: np.ndarray, rule: LocalRule) -> np.ndarray:
    """Array form of :func:`apply_local_rule`; accepts ``(L,)`` or ``(batch, L)``."""
    a = rule.alphabet
    return rule.lookup[window_codes(cells, rule.radius, a.size, a.quiescent_id)]


def lattice_diff(a: Lattice, b: Lattice) -> set[int]:
    if len(a) != len(b) or a.alphabet != b.alphabet:
        raise ContractError("lattice_diff needs equal lengths and alphabets")
    return set(np.flatnonzero(a.cells != b.cells).tolist())


@dataclass
class SpacetimeTrace:
    """Lattice snapshots, row 0 is the initial state.

    ``stride`` > 1 means only every ``stride``-th step was kept; ``steps``
    holds the time index of every stored row.
    """

    alphabet: Alphabet
    rows: list[np.ndarray] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    stride: int = 1
    correct: np.ndarray | None = None

    def append(self, cells: np.ndarray, t: int) -> None:
        if self.rows and cells.shape != self.rows[0].shape:
            raise ContractError("trace rows must share one length")
        self.rows.append(np.array(cells, dtype=np.uint8))
        self.steps.append(t)

    def as_array(self) -> np.ndarray:
        return np.stack(self.rows) if self.rows else np.zeros((0, 0), dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.rows)


def trace_stride(length: int, steps: int, budget: int = DEFAULT_TRACE_BUDGET) -> int:
    """Smallest row stride keeping ``length * stored_rows`` under ``budget`` cells."""
    rows = steps + 1
    if length * rows <= budget:
        return 1
    max_rows = max(2, budget // max(length, 1))
    return -(-rows // (max_rows - 1))


def write_lattice_text(lattice: Lattice) -> str:
    return f"{lattice.alphabet.name}\n" + " ".join(lattice.alphabet.labels[s] for s in lattice.cells) + "\n"


def read_lattice_text(text: str, alphabets: Iterable[Alphabet]) -> Lattice:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) != 2:
        raise ContractError("lattice text needs a header line and one row of symbols")
    by_name = {a.name: a for a in alphabets}
    if lines[0] not in by_name:
        raise ContractError(f"unknown alphabet {lines[0]!r}")
    alphabet = by_name[lines[0]]
    return Lattice([alphabet.index(tok) for tok in lines[1].split()], alphabet)
