"""Compiled rule tables, dense table stepping and the sparse frontier evolver."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernel import KernelParams, forward_logits
from .lattice import ContractError, Lattice, LocalRule, SpacetimeTrace, decode_window, trace_stride, window_codes

MAGIC = b"SEADLUT1"
MAX_ENTRIES = 1 << 20


class TableFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RuleTable:
    """``entries[code]`` is the successor of the window whose base-|S| code is ``code``
    (leftmost cell most significant)."""

    alphabet_size: int
    radius: int
    entries: np.ndarray
    quiescent_id: int = 0
    task: str = "custom"
    source_checksum: bytes = bytes(8)

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.uint8).reshape(-1)
        if entries.size != self.alphabet_size ** (2 * self.radius + 1):
            raise ContractError("table size does not match alphabet and radius")
        if entries.size and entries.max() >= self.alphabet_size:
            raise ContractError("table entry outside alphabet")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def width(self) -> int:
        return 2 * self.radius + 1

    @property
    def quiescent_preserving(self) -> bool:
        q = self.quiescent_id
        code = sum(q * self.alphabet_size**k for k in range(self.width))
        return int(self.entries[code]) == q

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RuleTable)
            and (self.alphabet_size, self.radius, self.quiescent_id) == (other.alphabet_size, other.radius, other.quiescent_id)
            and np.array_equal(self.entries, other.entries)
        )

    @classmethod
    def from_rule(cls, rule: LocalRule, task: str | None = None) -> "RuleTable":
        a = rule.alphabet
        return cls(a.size, rule.radius, rule.lookup, a.quiescent_id, task or rule.name)


def extract_rule_table(params: KernelParams, budget: int = MAX_ENTRIES) -> tuple[RuleTable, float]:
    """Argmax of the centre logits for every window, plus the smallest top-1/top-2 gap."""
    arch = params.arch
    n = arch.alphabet_size**arch.window
    if n > budget:
        raise ContractError(f"{n} windows exceed the extraction budget of {budget}")
    windows = np.array([decode_window(c, arch.alphabet_size, arch.window) for c in range(n)], dtype=np.uint8)
    logits = forward_logits(params, windows)[:, arch.radius]
    entries = logits.argmax(axis=-1)
    top2 = np.sort(logits, axis=-1)[:, -2:]
    margin = float((top2[:, 1] - top2[:, 0]).min())
    checksum = hashlib.blake2b(params.theta.astype("<f8").tobytes(), digest_size=8).digest()
    table = RuleTable(arch.alphabet_size, arch.radius, entries, arch.quiescent_id, arch.task, checksum)
    return table, margin


def verify_table(table: RuleTable, reference: RuleTable | LocalRule) -> list[tuple[int, ...]]:
    """Windows on which ``table`` and ``reference`` disagree (empty when identical)."""
    if isinstance(reference, LocalRule):
        reference = RuleTable.from_rule(reference)
    if (table.alphabet_size, table.radius) != (reference.alphabet_size, reference.radius):
        raise ContractError("tables differ in alphabet size or radius")
    bad = np.flatnonzero(table.entries != reference.entries)
    return [decode_window(int(c), table.alphabet_size, table.width) for c in bad]


def step_table_cells(table: RuleTable, cells: np.ndarray) -> np.ndarray:
    return table.entries[window_codes(cells, table.radius, table.alphabet_size, table.quiescent_id)]


def step_table(table: RuleTable, lattice: Lattice) -> Lattice:
    if lattice.alphabet.size != table.alphabet_size:
        raise ContractError("lattice alphabet does not match table")
    return lattice.with_cells(step_table_cells(table, lattice.cells))


# -- frontier evolution ------------------------------------------------------------

_VECTOR_THRESHOLD = 48


def evolve_frontier(table: RuleTable, lattice: Lattice, config=None, horizon: int | None = None):
    """Evolve recomputing only cells within ``r`` of a cell that changed last step.

    Stops at the first no-change step (counted) unless ``horizon`` is given, in
    which case exactly ``horizon`` steps run. Returns an ``EvolutionResult`` whose
    ``work`` field counts cell recomputations.
    """
    from .evolution import EvolutionConfig, EvolutionResult

    config = config or EvolutionConfig()
    r, S, q = table.radius, table.alphabet_size, table.quiescent_id
    L = len(lattice)
    cap = horizon if horizon is not None else config.cap(L)
    # buffer holds r quiescent cells each side; cell i lives at buf[i + r]
    buf = bytearray([q] * r) + bytearray(lattice.cells.tobytes()) + bytearray([q] * r)
    arr = np.frombuffer(buf, dtype=np.uint8)
    lut = table.entries.tolist()
    powers = [S ** (2 * r - k) for k in range(2 * r + 1)]
    offsets = np.arange(-r, r + 1)

    trace = None
    if config.record_trace:
        stride = config.stride or trace_stride(L, cap, config.trace_budget)
        trace = SpacetimeTrace(lattice.alphabet, stride=stride)
        trace.append(arr[r : r + L], 0)

    active = np.arange(L)
    small: list[int] | None = None
    changed_counts: list[int] = []
    work = 0
    steps = 0
    converged = False
    while steps < cap:
        steps += 1
        if small is None and active.size <= _VECTOR_THRESHOLD:
            small = active.tolist()
        if small is not None:
            work += len(small)
            updates = []
            if r == 1:
                for i in small:
                    new = lut[(buf[i] * S + buf[i + 1]) * S + buf[i + 2]]
                    if new != buf[i + 1]:
                        updates.append((i, new))
            else:
                for i in small:
                    code = 0
                    for k in range(2 * r + 1):
                        code += buf[i + k] * powers[k]
                    new = lut[code]
                    if new != buf[i + r]:
                        updates.append((i, new))
            for i, new in updates:
                buf[i + r] = new
            n_changed = len(updates)
            if n_changed > _VECTOR_THRESHOLD:
                active = _neighbours(np.array([i for i, _ in updates]), offsets, L)
                small = None
            else:
                nxt = set()
                for i, _ in updates:
                    for d in range(-r, r + 1):
                        j = i + d
                        if 0 <= j < L:
                            nxt.add(j)
                small = sorted(nxt)
        else:
            work += active.size
            codes = np.zeros(active.size, dtype=np.int64)
            for k in range(2 * r + 1):
                codes = codes * S + arr[active + k]
            new = table.entries[codes]
            hit = new != arr[active + r]
            idx = active[hit]
            arr[idx + r] = new[hit]
            n_changed = idx.size
            active = _neighbours(idx, offsets, L)
        changed_counts.append(n_changed)
        if trace is not None and (steps % trace.stride == 0 or n_changed == 0 or steps == cap):
            trace.append(arr[r : r + L], steps)
        if n_changed == 0 and horizon is None:
            converged = True
            break
    final = lattice.with_cells(arr[r : r + L].copy())
    if horizon is not None:
        converged = bool(changed_counts) and changed_counts[-1] == 0
    return EvolutionResult(final, steps, converged, trace, changed_counts, work)


def _neighbours(idx: np.ndarray, offsets: np.ndarray, L: int) -> np.ndarray:
    if idx.size == 0:
        return idx
    cand = (idx[:, None] + offsets[None, :]).reshape(-1)
    cand = cand[(cand >= 0) & (cand < L)]
    return np.unique(cand)


# -- table files -----------------------------------------------------------------


def table_bytes(table: RuleTable) -> bytes:
    task = table.task.encode()
    header = struct.pack("<HBBB", table.alphabet_size, table.radius, table.quiescent_id, len(task)) + task
    header += table.source_checksum.ljust(8, b"\0")[:8] + struct.pack("<I", table.entries.size)
    body = header + table.entries.tobytes()
    return MAGIC + body + hashlib.blake2b(body, digest_size=8).digest()


def serialize_table(table: RuleTable, path) -> None:
    Path(path).write_bytes(table_bytes(table))


def load_table(path, radius: int | None = None) -> RuleTable:
    return parse_table(Path(path).read_bytes(), radius)


def parse_table(data: bytes, radius: int | None = None) -> RuleTable:
    if data[: len(MAGIC)] != MAGIC:
        raise TableFormatError("magic: not a SEADLUT1 table")
    body, digest = data[len(MAGIC) : -8], data[-8:]
    try:
        S, r, q, tlen = struct.unpack_from("<HBBB", body, 0)
        off = 5
        task = body[off : off + tlen].decode()
        off += tlen
        src = body[off : off + 8]
        (n,) = struct.unpack_from("<I", body, off + 8)
        off += 12
    except (struct.error, UnicodeDecodeError):
        raise TableFormatError("header: truncated or unreadable") from None
    if radius is not None and r != radius:
        raise TableFormatError(f"radius: file has {r}, expected {radius}")
    if S < 2 or r < 1 or n != S ** (2 * r + 1):
        raise TableFormatError(f"radius: {n} entries inconsistent with alphabet {S} and radius {r}")
    if len(body) != off + n:
        raise TableFormatError("entries: file truncated")
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise TableFormatError("checksum: contents do not match")
    entries = np.frombuffer(body[off:], dtype=np.uint8)
    if entries.max() >= S:
        raise TableFormatError("entries: symbol outside alphabet")
    return RuleTable(S, r, entries, q, task, src)
