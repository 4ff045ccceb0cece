"""Inference dynamics: relax-and-project stepping, fixed-point runs and physics probes."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernel import KernelParams, forward_logits
from .lattice import (
    DEFAULT_TRACE_BUDGET,
    ContractError,
    Lattice,
    LocalRule,
    SpacetimeTrace,
    apply_rule_cells,
    trace_stride,
    window_codes,
)
from .lut import RuleTable, step_table_cells

Stepper = Callable[[np.ndarray], np.ndarray]
ENGINES = ("neural", "table", "frontier")


@dataclass
class EvolutionConfig:
    max_steps: int | None = None  # None -> 4L + 64
    record_trace: bool = False
    stride: int | None = None  # None -> pick from trace_budget
    trace_budget: int = DEFAULT_TRACE_BUDGET
    engine: str = "neural"

    def __post_init__(self):
        if self.max_steps is not None and self.max_steps < 1:
            raise ContractError("max_steps must be >= 1")
        if self.engine not in ENGINES:
            raise ContractError(f"engine must be one of {ENGINES}")

    def cap(self, L: int) -> int:
        return 4 * L + 64 if self.max_steps is None else self.max_steps


@dataclass
class EvolutionResult:
    final: Lattice
    steps: int
    converged: bool
    trace: SpacetimeTrace | None = None
    changed: list[int] = field(default_factory=list)
    work: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "changed_cells"])
            for t, n in enumerate(self.changed, start=1):
                w.writerow([t, n])


class NeuralStepper:
    """Relax (embed + kernel) then project (per-cell argmax, lowest index on ties).

    With ``dedupe`` the kernel runs once per distinct neighbourhood present in
    the current state and the projected symbol is scattered back to every cell
    holding that neighbourhood. Weight sharing makes this identical to the dense
    pass while doing O(|S|^(2r+1)) network evaluations per step instead of O(L).
    """

    def __init__(self, params: KernelParams, dtype=np.float64, dedupe: bool = False):
        self.params = params
        self.dtype = dtype
        self.dedupe = dedupe

    def logits(self, cells: np.ndarray) -> np.ndarray:
        return forward_logits(self.params, cells, dtype=self.dtype)

    def __call__(self, cells: np.ndarray) -> np.ndarray:
        if not self.dedupe:
            return self.logits(cells).argmax(axis=-1).astype(np.uint8)
        arch = self.params.arch
        S, width = arch.alphabet_size, arch.window
        codes = window_codes(cells, arch.radius, S, arch.quiescent_id)
        if S**width <= 1 << 20:
            present = np.flatnonzero(np.bincount(codes.reshape(-1), minlength=S**width))
            inverse = None
        else:
            present, inverse = np.unique(codes, return_inverse=True)
        windows = np.empty((present.size, width), dtype=np.uint8)
        rest = present.copy()
        for k in range(width - 1, -1, -1):
            rest, windows[:, k] = np.divmod(rest, S)
        proj = self.logits(windows)[:, arch.radius].argmax(axis=-1).astype(np.uint8)
        if inverse is not None:
            return proj[inverse].reshape(cells.shape)
        lut = np.zeros(S**width, dtype=np.uint8)
        lut[present] = proj
        return lut[codes]


class TableStepper:
    def __init__(self, table: RuleTable):
        self.table = table

    def __call__(self, cells: np.ndarray) -> np.ndarray:
        return step_table_cells(self.table, cells)


class RuleStepper:
    def __init__(self, rule: LocalRule):
        self.rule = rule

    def __call__(self, cells: np.ndarray) -> np.ndarray:
        return apply_rule_cells(cells, self.rule)


def step_neural(params: KernelParams, lattice: Lattice) -> Lattice:
    if lattice.alphabet.size != params.arch.alphabet_size:
        raise ContractError("lattice alphabet does not match kernel")
    return lattice.with_cells(NeuralStepper(params)(lattice.cells))


def evolve_to_fixed_point(stepper: Stepper, lattice: Lattice, config: EvolutionConfig | None = None) -> EvolutionResult:
    """Step until nothing changes; the confirming no-change step is counted."""
    config = config or EvolutionConfig()
    L = len(lattice)
    cap = config.cap(L)
    cells = lattice.cells
    trace = None
    if config.record_trace:
        trace = SpacetimeTrace(lattice.alphabet, stride=config.stride or trace_stride(L, cap, config.trace_budget))
        trace.append(cells, 0)
    changed: list[int] = []
    converged = False
    steps = 0
    while steps < cap:
        steps += 1
        nxt = stepper(cells)
        n = int(np.count_nonzero(nxt != cells))
        changed.append(n)
        cells = nxt
        if trace is not None and (steps % trace.stride == 0 or n == 0 or steps == cap):
            trace.append(cells, steps)
        if n == 0:
            converged = True
            break
    return EvolutionResult(lattice.with_cells(cells), steps, converged, trace, changed, steps * L)


def evolve_batch(stepper: Stepper, cells: np.ndarray, cap: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed-point runs for a ``(batch, L)`` array; finished rows drop out of the batch.

    Returns final states, per-row step counts and converged flags.
    """
    cells = np.array(cells, dtype=np.uint8)
    B = cells.shape[0]
    steps = np.zeros(B, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    live = np.arange(B)
    t = 0
    while live.size and t < cap:
        t += 1
        cur = cells[live]
        nxt = stepper(cur)
        still = (nxt != cur).any(axis=1)
        cells[live] = nxt
        steps[live] = t
        done[live[~still]] = True
        live = live[still]
    return cells, steps, done


def evolve_fixed_horizon(stepper: Stepper, lattice: Lattice, T: int) -> SpacetimeTrace:
    if T < 0:
        raise ContractError("horizon must be >= 0")
    trace = SpacetimeTrace(lattice.alphabet)
    cells = lattice.cells
    trace.append(cells, 0)
    for t in range(1, T + 1):
        cells = stepper(cells)
        trace.append(cells, t)
    return trace


def lightcone_probe(stepper: Stepper, lattice: Lattice, i: int, T: int, symbol: int | None = None) -> list[set[int]]:
    """Diff sets between the original run and one with cell ``i`` replaced, per step 0..T.

    The replacement defaults to the next symbol id (cyclically).
    """
    L = len(lattice)
    if not 0 <= i < L:
        raise ContractError(f"flip position {i} outside lattice of length {L}")
    S = lattice.alphabet.size
    flipped = lattice.cells.copy()
    flipped[i] = (flipped[i] + 1) % S if symbol is None else symbol
    a, b = lattice.cells, flipped
    out = [set(np.flatnonzero(a != b).tolist())]
    for _ in range(T):
        a, b = stepper(a), stepper(b)
        out.append(set(np.flatnonzero(a != b).tolist()))
    return out


def lightcone_violations(diffs: list[set[int]], i: int, r: int) -> list[tuple[int, int]]:
    return [(t, j) for t, d in enumerate(diffs) for j in d if abs(j - i) > r * t]


@dataclass
class NoiseProbeResult:
    identical: bool
    min_margin: float
    steps: int


def noise_probe(
    params: KernelParams,
    lattice: Lattice,
    eps: float,
    steps: int | None = None,
    seed: int = 0,
    cap: int | None = None,
) -> NoiseProbeResult:
    """Re-run with uniform[-eps, eps] noise on every logit and compare trajectories.

    Without ``steps`` the clean run goes to its fixed point (bounded by ``cap``)
    and the noisy run uses the same number of steps.
    """
    if eps < 0:
        raise ContractError("eps must be >= 0")
    stepper = NeuralStepper(params)
    rng = np.random.default_rng(seed)
    cap = cap if cap is not None else 4 * len(lattice) + 64
    clean = [lattice.cells]
    margin = np.inf
    cells = lattice.cells
    for t in range(steps if steps is not None else cap):
        z = stepper.logits(cells)
        top2 = np.sort(z, axis=-1)[:, -2:]
        margin = min(margin, float((top2[:, 1] - top2[:, 0]).min()))
        nxt = z.argmax(axis=-1).astype(np.uint8)
        clean.append(nxt)
        if steps is None and np.array_equal(nxt, cells):
            break
        cells = nxt
    cells = lattice.cells
    identical = True
    for t in range(1, len(clean)):
        z = stepper.logits(cells)
        z = z + rng.uniform(-eps, eps, size=z.shape)
        cells = z.argmax(axis=-1).astype(np.uint8)
        if not np.array_equal(cells, clean[t]):
            identical = False
            break
    return NoiseProbeResult(identical, margin, len(clean) - 1)


def make_stepper(engine: str, params: KernelParams | None = None, table: RuleTable | None = None) -> Stepper:
    """Batch-oriented stepper for an engine id; the neural one deduplicates windows."""
    if engine == "neural":
        if params is None:
            raise ContractError("neural engine needs kernel parameters")
        return NeuralStepper(params, dedupe=True)
    if engine in ("table", "frontier"):
        if table is None:
            raise ContractError(f"{engine} engine needs a rule table")
        return TableStepper(table)
    raise ContractError(f"unknown engine {engine!r}")


def evolve(engine: str, lattice: Lattice, config: EvolutionConfig | None = None, params=None, table=None) -> EvolutionResult:
    if engine == "frontier":
        from .lut import evolve_frontier

        if table is None:
            raise ContractError("frontier engine needs a rule table")
        return evolve_frontier(table, lattice, config)
    return evolve_to_fixed_point(make_stepper(engine, params, table), lattice, config)
