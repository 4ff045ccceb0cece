import csv
import math

import numpy as np
import pytest

from sead.experiments import (
    bench,
    default_samples,
    evaluate,
    fit_line,
    sample_inputs,
    scaling_sweep,
    write_rows,
)
from sead.lattice import ContractError
from sead.lut import RuleTable
from sead.tasks import ADDITION, PARITY, oracle_convergence_steps

from .conftest import trained_model

ADD_TABLE = RuleTable.from_rule(ADDITION.rule, "addition")


@pytest.mark.parametrize("L,n", [(16, 1000), (1024, 1000), (1025, 100), (10**4, 100), (10**5, 10), (10**6, 1)])
def test_default_samples(L, n):
    assert default_samples(L) == n


def test_sample_inputs_deterministic_and_distinct():
    a = sample_inputs(PARITY, 32, "random", 5, seed=1)
    b = sample_inputs(PARITY, 32, "random", 5, seed=1)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert len({x.tobytes() for x in a}) == 5
    assert len(sample_inputs(ADDITION, 32, "adversarial", 50, 0)) == 1


def test_evaluate_neural_parity():
    m = trained_model("parity")
    row, steps = evaluate("parity", 32, samples=50, params=m.params)
    assert row.exact_match == 1.0 and row.samples == 50
    assert row.min_steps == row.max_steps == 33 and (steps == 33).all()


def test_evaluate_frontier_matches_oracle_steps():
    row, steps = evaluate("addition", 200, samples=30, engine="frontier", table=ADD_TABLE, seed=4)
    assert row.exact_match == 1.0
    inputs = sample_inputs(ADDITION, 200, "random", 30, 4)
    assert steps.tolist() == [oracle_convergence_steps("addition", inp) for inp in inputs]


def test_evaluate_engines_agree():
    m = trained_model("addition")
    rows = [evaluate("addition", 50, samples=40, engine=e, params=m.params, table=m.table, seed=2) for e in ("neural", "table", "frontier")]
    assert all(np.array_equal(rows[0][1], s) for _, s in rows)
    assert all(r.exact_match == 1.0 for r, _ in rows)


def test_evaluate_rule110_scores_one_step():
    m = trained_model("rule110")
    row, steps = evaluate("rule110", 100, samples=20, params=m.params)
    assert row.exact_match == 1.0 and (steps == 1).all()


def test_evaluate_counts_wrong_model():
    # a table that never resolves carries never converges to a decodable state
    stuck = RuleTable(12, 1, np.arange(12**3) // 144 % 12)  # copies the centre
    row, _ = evaluate("addition", 20, samples=5, engine="frontier", table=stuck)
    assert row.exact_match == 0.0


def test_write_rows(tmp_path):
    row, _ = evaluate("addition", 8, samples=3, engine="frontier", table=ADD_TABLE)
    path = tmp_path / "e.csv"
    write_rows(path, [row])
    got = list(csv.DictReader(path.open()))
    assert got[0]["task"] == "addition" and float(got[0]["exact_match"]) == 1.0
    assert list(got[0]) == ["task", "L", "mode", "samples", "exact_match", "mean_steps", "min_steps", "max_steps", "engine", "wall_clock"]


def test_fit_line():
    assert fit_line([1, 2, 3], [3, 5, 7]) == pytest.approx((2.0, 1.0))
    with pytest.raises(ContractError):
        fit_line([4, 4], [1, 2])


def test_scaling_sweep_small():
    rows, fit = scaling_sweep([2**k for k in range(4, 10)], samples=10, table=ADD_TABLE)
    assert len(rows) == 12 and fit.excluded == []
    assert 0.98 <= fit.adversarial_loglog_slope <= 1.02
    assert fit.random_loglog_slope <= 0.5
    assert fit.random_log2_slope <= 2.0
    with pytest.raises(ContractError):
        scaling_sweep([16], table=ADD_TABLE)


def test_bench_rows():
    m = trained_model("addition")
    rows = bench(["neural", "table", "frontier"], [64], params=m.params, table=m.table, reps=2)
    assert [r.engine for r in rows] == ["neural", "table", "frontier"]
    assert rows[2].steps == 65
    assert all(r.cell_updates_per_second > 0 and not math.isnan(r.cell_updates_per_second) for r in rows)
