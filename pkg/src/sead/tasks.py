"""Reference local rules, encoders, input generators and global oracles.

Bit strings are LSB-first / first-element-first: index 0 sits at the left
boundary, so every wave in these tasks travels toward increasing index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .lattice import Alphabet, ContractError, Lattice, LocalRule, apply_rule_cells

UNKNOWN = 2  # carry / prefix-parity channel value meaning "not resolved yet"
_CH = "01?"


class NotConvergedError(RuntimeError):
    """Decoding a lattice that still holds unresolved cells."""


class DivergenceError(RuntimeError):
    """Oracle evolution did not reach a fixed point within its cap."""


class UnsupportedModeError(ValueError):
    pass


# -- parity ----------------------------------------------------------------
# symbol id = 3*x + v, v in {0, 1, UNKNOWN}; quiescent (x=0, v=0) is id 0.

PARITY_ALPHABET = Alphabet(
    "parity", tuple(f"x{x}v{_CH[v]}" for x in (0, 1) for v in (0, 1, UNKNOWN))
)


def parity_symbol(x: int, v: int) -> int:
    return 3 * x + v


def parity_fields(s: int) -> tuple[int, int]:
    return divmod(s, 3)


def parity_local_rule(window: tuple[int, int, int]) -> int:
    left, center, _ = window
    _, lv = parity_fields(left)
    x, v = parity_fields(center)
    if lv != UNKNOWN:
        v = lv ^ x
    return parity_symbol(x, v)


def encode_parity(x) -> Lattice:
    x = _bits(x)
    return Lattice(parity_symbol_array(x, np.full_like(x, UNKNOWN)), PARITY_ALPHABET)


def parity_symbol_array(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (3 * x + v).astype(np.uint8)


def decode_parity(lattice: Lattice) -> np.ndarray:
    v = lattice.cells % 3
    if (v == UNKNOWN).any():
        raise NotConvergedError(f"{int((v == UNKNOWN).sum())} prefix cells unresolved")
    return v.astype(np.uint8)


# -- addition ----------------------------------------------------------------
# symbol id = 3*(2a + b) + c, c in {0, 1, UNKNOWN}; quiescent (0, 0, 0) is id 0.

ADDITION_ALPHABET = Alphabet(
    "addition",
    tuple(f"a{a}b{b}c{_CH[c]}" for a in (0, 1) for b in (0, 1) for c in (0, 1, UNKNOWN)),
)


def addition_symbol(a: int, b: int, c: int) -> int:
    return 3 * (2 * a + b) + c


def addition_fields(s: int) -> tuple[int, int, int]:
    ab, c = divmod(s, 3)
    a, b = divmod(ab, 2)
    return a, b, c


def addition_local_rule(window: tuple[int, int, int]) -> int:
    """Carry update; the LSB-side (left) neighbour is the only one that matters."""
    left, center, _ = window
    a, b, c = addition_fields(center)
    if c == UNKNOWN:
        na, nb, nc = addition_fields(left)
        if nc != UNKNOWN:
            c = int(na + nb + nc >= 2)
        elif na == nb:
            # generate (1,1) or kill (0,0): the carry out is known without the carry in
            c = na
    return addition_symbol(a, b, c)


def encode_addition(a, b) -> Lattice:
    a, b = _bits(a), _bits(b)
    if a.size != b.size:
        raise ContractError(f"operand lengths differ: {a.size} vs {b.size}")
    L = a.size
    A = np.zeros(L + 1, dtype=np.uint8)
    B = np.zeros(L + 1, dtype=np.uint8)
    A[:L], B[:L] = a, b
    C = np.full(L + 1, UNKNOWN, dtype=np.uint8)
    C[0] = 0
    return Lattice(addition_symbol_array(A, B, C), ADDITION_ALPHABET)


def addition_symbol_array(a, b, c) -> np.ndarray:
    return (3 * (2 * np.asarray(a) + np.asarray(b)) + np.asarray(c)).astype(np.uint8)


def decode_sum(lattice: Lattice) -> np.ndarray:
    cells = lattice.cells
    ab, c = np.divmod(cells, 3)
    if (c == UNKNOWN).any():
        raise NotConvergedError(f"{int((c == UNKNOWN).sum())} carries unresolved")
    a, b = np.divmod(ab, 2)
    return (a ^ b ^ c).astype(np.uint8)


# -- rule 110 ----------------------------------------------------------------

RULE110_ALPHABET = Alphabet("rule110", ("0", "1"))


def rule110_local_rule(window: tuple[int, int, int]) -> int:
    left, center, right = window
    return (110 >> (4 * left + 2 * center + right)) & 1


def encode_bits(x) -> Lattice:
    return Lattice(_bits(x), RULE110_ALPHABET)


def decode_bits(lattice: Lattice) -> np.ndarray:
    return lattice.cells.copy()


# -- global oracles ------------------------------------------------------------


def prefix_xor(x) -> np.ndarray:
    return (np.cumsum(_bits(x), dtype=np.int64) & 1).astype(np.uint8)


def schoolbook_add(a, b) -> np.ndarray:
    """Ripple-carry addition of two LSB-first bit arrays; result has L+1 bits."""
    a, b = _bits(a).tolist(), _bits(b).tolist()
    if len(a) != len(b):
        raise ContractError("operand lengths differ")
    out = bytearray(len(a) + 1)
    carry = 0
    for i, (x, y) in enumerate(zip(a, b)):
        s = x + y + carry
        out[i] = s & 1
        carry = s >> 1
    out[len(a)] = carry
    return np.frombuffer(bytes(out), dtype=np.uint8).copy()


def rule110_step_oracle(x) -> np.ndarray:
    """One synchronous rule-110 update, zero boundary, written directly from the rule number."""
    x = _bits(x).astype(np.int64)
    p = np.concatenate(([0], x, [0]))
    idx = 4 * p[:-2] + 2 * p[1:-1] + p[2:]
    return ((110 >> idx) & 1).astype(np.uint8)


# -- task registry ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TaskSpec:
    name: str
    alphabet: Alphabet
    radius: int
    rule: LocalRule
    has_fixed_point: bool
    encode: Callable[..., Lattice]
    decode: Callable[[Lattice], np.ndarray]
    oracle: Callable[..., np.ndarray]

    def encode_input(self, inp) -> Lattice:
        return self.encode(*inp) if self.name == "addition" else self.encode(inp)

    def global_oracle(self, inp) -> np.ndarray:
        return self.oracle(*inp) if self.name == "addition" else self.oracle(inp)


PARITY = TaskSpec(
    "parity", PARITY_ALPHABET, 1,
    LocalRule(PARITY_ALPHABET, 1, parity_local_rule, "parity"),
    True, encode_parity, decode_parity, prefix_xor,
)
ADDITION = TaskSpec(
    "addition", ADDITION_ALPHABET, 1,
    LocalRule(ADDITION_ALPHABET, 1, addition_local_rule, "addition"),
    True, encode_addition, decode_sum, schoolbook_add,
)
RULE110 = TaskSpec(
    "rule110", RULE110_ALPHABET, 1,
    LocalRule(RULE110_ALPHABET, 1, rule110_local_rule, "rule110"),
    False, encode_bits, decode_bits, rule110_step_oracle,
)
TASKS = {t.name: t for t in (PARITY, ADDITION, RULE110)}
ALPHABETS = tuple(t.alphabet for t in TASKS.values())


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name]
    except KeyError:
        raise ContractError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


def gen_input(task: TaskSpec | str, L: int, mode: str = "random", seed: int | None = 0) -> Any:
    """Random inputs are i.i.d. fair bits from ``numpy.random.default_rng(seed)``.

    Adversarial (addition only) is ``a = 1^L``, ``b = 1`` (LSB-first ``10..0``).
    """
    task = get_task(task) if isinstance(task, str) else task
    if L < 1:
        raise ContractError("L must be >= 1")
    if mode == "adversarial":
        if task.name != "addition":
            raise UnsupportedModeError(f"adversarial inputs are defined for addition only, not {task.name}")
        b = np.zeros(L, dtype=np.uint8)
        b[0] = 1
        return np.ones(L, dtype=np.uint8), b
    if mode != "random":
        raise UnsupportedModeError(f"unknown input mode {mode!r}")
    rng = np.random.default_rng(seed)
    if task.name == "addition":
        ab = rng.integers(0, 2, size=(2, L), dtype=np.uint8)
        return ab[0], ab[1]
    return rng.integers(0, 2, size=L, dtype=np.uint8)


def oracle_convergence_steps(task: TaskSpec | str, inp, cap: int | None = None) -> int:
    """Applications of the reference rule until a no-change step, that step included."""
    task = get_task(task) if isinstance(task, str) else task
    if not task.has_fixed_point:
        raise ContractError(f"{task.name} has no fixed point")
    cells = task.encode_input(inp).cells
    cap = 4 * cells.size + 64 if cap is None else cap
    for step in range(1, cap + 1):
        nxt = apply_rule_cells(cells, task.rule)
        if np.array_equal(nxt, cells):
            return step
        cells = nxt
    raise DivergenceError(f"{task.name} oracle did not settle within {cap} steps")


# -- input fixture text format ---------------------------------------------------


def write_input_fixture(task: TaskSpec | str, inp, mode: str = "random", seed: int | None = 0) -> str:
    task = get_task(task) if isinstance(task, str) else task
    operands = inp if task.name == "addition" else (inp,)
    L = len(operands[0])
    lines = [f"{task.name} {L} {mode} {seed if seed is not None else '-'}"]
    lines += ["".join(str(int(v)) for v in op) for op in operands]
    return "\n".join(lines) + "\n"


def read_input_fixture(text: str):
    """Returns ``(task, input, mode, seed)``."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    try:
        name, L, mode, seed = lines[0].split()
        L = int(L)
    except (IndexError, ValueError):
        raise ContractError("fixture header must be 'task L mode seed'") from None
    task = get_task(name)
    ops = [np.array([int(ch) for ch in ln], dtype=np.uint8) for ln in lines[1:]]
    need = 2 if task.name == "addition" else 1
    if len(ops) != need or any(op.size != L for op in ops) or any((op > 1).any() for op in ops):
        raise ContractError(f"{name} fixture needs {need} operand line(s) of {L} bits")
    inp = (ops[0], ops[1]) if need == 2 else ops[0]
    return task, inp, mode, None if seed == "-" else int(seed)


def _bits(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.uint8).reshape(-1)
    if arr.size and arr.max() > 1:
        raise ContractError("bit strings hold only 0/1")
    return arr
