"""Evaluation sweeps, step-scaling fits and engine benchmarks."""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .evolution import EvolutionConfig, evolve_batch, make_stepper
from .kernel import KernelParams
from .lattice import ContractError, Lattice
from .lut import RuleTable, evolve_frontier
from .tasks import NotConvergedError, TaskSpec, gen_input, get_task

BATCH_CELLS = 1 << 20


@dataclass
class EvalRow:
    task: str
    L: int
    mode: str
    samples: int
    exact_match: float
    mean_steps: float
    min_steps: int
    max_steps: int
    engine: str
    wall_clock: float


def default_samples(L: int) -> int:
    if L <= 1024:
        return 1000
    if L <= 10_000:
        return 100
    if L <= 100_000:
        return 10
    return 1


def sample_inputs(task: TaskSpec, L: int, mode: str, samples: int, seed: int) -> list:
    if mode == "adversarial":
        # one deterministic worst case per length
        return [gen_input(task, L, "adversarial")]
    return [gen_input(task, L, "random", seed=[seed, L, k]) for k in range(samples)]


def _exact(task: TaskSpec, final: Lattice, inp) -> bool:
    try:
        return bool(np.array_equal(task.decode(final), task.global_oracle(inp)))
    except NotConvergedError:
        return False


def evaluate(
    task: TaskSpec | str,
    L: int,
    mode: str = "random",
    samples: int | None = None,
    engine: str = "neural",
    params: KernelParams | None = None,
    table: RuleTable | None = None,
    seed: int = 0,
) -> tuple[EvalRow, np.ndarray]:
    """Exact-match rate and step counts over fresh inputs of length ``L``.

    Rule 110 has no fixed point, so its row scores one synchronous step
    (``steps`` is then 1 for every sample).
    """
    task = get_task(task) if isinstance(task, str) else task
    samples = default_samples(L) if samples is None else samples
    if samples < 1:
        raise ContractError("samples must be >= 1")
    t0 = time.perf_counter()
    inputs = sample_inputs(task, L, mode, samples, seed)
    lattices = [task.encode_input(inp) for inp in inputs]
    n = len(lattices)
    steps = np.zeros(n, dtype=np.int64)
    exact = np.zeros(n, dtype=bool)
    if not task.has_fixed_point:
        stepper = make_stepper("table" if engine == "frontier" else engine, params, table)
        for k, (inp, lat) in enumerate(zip(inputs, lattices)):
            exact[k] = np.array_equal(stepper(lat.cells), task.global_oracle(inp))
            steps[k] = 1
    elif engine == "frontier":
        if table is None:
            raise ContractError("frontier engine needs a rule table")
        for k, (inp, lat) in enumerate(zip(inputs, lattices)):
            res = evolve_frontier(table, lat, EvolutionConfig(engine="frontier"))
            steps[k] = res.steps
            exact[k] = res.converged and _exact(task, res.final, inp)
    else:
        stepper = make_stepper(engine, params, table)
        width = len(lattices[0])
        cap = EvolutionConfig().cap(width)
        chunk = max(1, BATCH_CELLS // width)
        for lo in range(0, n, chunk):
            block = np.stack([lat.cells for lat in lattices[lo : lo + chunk]])
            final, st, done = evolve_batch(stepper, block, cap)
            for j in range(block.shape[0]):
                k = lo + j
                steps[k] = st[j]
                exact[k] = done[j] and _exact(task, lattices[k].with_cells(final[j]), inputs[k])
    row = EvalRow(
        task.name, L, mode, n, float(exact.mean()), float(steps.mean()),
        int(steps.min()), int(steps.max()), engine, time.perf_counter() - t0,
    )
    return row, steps


def write_rows(path, rows) -> None:
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(rows[0])])
        for row in rows:
            w.writerow([_fmt(v) for v in asdict(row).values()])


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else v


# -- scaling ------------------------------------------------------------------------


def fit_line(x, y) -> tuple[float, float]:
    """Least-squares ``y = slope * x + intercept``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2 or np.unique(x).size < 2:
        raise ContractError("a fit needs at least two distinct lengths")
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


@dataclass
class ScalingFit:
    adversarial_loglog_slope: float
    random_loglog_slope: float
    random_log2_slope: float
    random_log2_intercept: float
    excluded: list


def scaling_sweep(
    lengths,
    samples: int = 20,
    engine: str = "frontier",
    params: KernelParams | None = None,
    table: RuleTable | None = None,
    seed: int = 0,
) -> tuple[list[EvalRow], ScalingFit]:
    """Addition step counts for random and adversarial inputs across ``lengths``.

    Points that did not converge or did not match the oracle are excluded
    from the fits and listed in ``excluded``.
    """
    lengths = sorted(set(int(L) for L in lengths))
    if len(lengths) < 2:
        raise ContractError("a scaling fit needs at least two lengths")
    rows, excluded = [], []
    adv, rnd = [], []
    for L in lengths:
        for mode in ("random", "adversarial"):
            row, _ = evaluate("addition", L, mode, samples, engine, params, table, seed)
            rows.append(row)
            if row.exact_match < 1.0:
                excluded.append((L, mode))
                continue
            (adv if mode == "adversarial" else rnd).append((L, row.mean_steps))
    if len(adv) < 2 or len(rnd) < 2:
        raise ContractError(f"too few converged points to fit (excluded: {excluded})")
    la, sa = zip(*adv)
    lr, sr = zip(*rnd)
    a_slope, _ = fit_line(np.log(la), np.log(sa))
    r_slope, _ = fit_line(np.log(lr), np.log(sr))
    l2_slope, l2_icpt = fit_line(np.log2(lr), sr)
    return rows, ScalingFit(a_slope, r_slope, l2_slope, l2_icpt, excluded)


# -- benchmarks -----------------------------------------------------------------------


@dataclass
class BenchRow:
    engine: str
    L: int
    steps: int
    median_seconds: float
    cell_updates_per_second: float
    repetitions: int


def bench(
    engines,
    lengths,
    params: KernelParams | None = None,
    table: RuleTable | None = None,
    reps: int = 5,
    dense_step_limit: int = 20,
) -> list[BenchRow]:
    """Throughput on adversarial addition, in effective cell updates (L per step) per second.

    Frontier runs go all the way to the fixed point. Dense engines cost the same
    per step regardless of state, so they are timed over ``dense_step_limit``
    steps and the rate is reported per step.
    """
    rows = []
    for engine in engines:
        for L in lengths:
            lat = get_task("addition").encode_input(gen_input("addition", L, "adversarial"))
            times = []
            steps = 0
            for _ in range(max(reps, 1)):
                t0 = time.perf_counter()
                if engine == "frontier":
                    res = evolve_frontier(table, lat, EvolutionConfig(engine="frontier"))
                    steps = res.steps
                else:
                    stepper = make_stepper(engine, params, table)
                    cells = lat.cells
                    steps = min(dense_step_limit, L + 1)
                    for _ in range(steps):
                        cells = stepper(cells)
                times.append(time.perf_counter() - t0)
            med = statistics.median(times)
            rows.append(BenchRow(engine, L, steps, med, len(lat) * steps / med if med > 0 else math.inf, len(times)))
    return rows
