import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sead.lattice import ContractError, apply_rule_cells
from sead.tasks import (
    ADDITION,
    PARITY,
    RULE110,
    UNKNOWN,
    NotConvergedError,
    UnsupportedModeError,
    addition_fields,
    addition_local_rule,
    addition_symbol,
    decode_parity,
    decode_sum,
    encode_addition,
    encode_parity,
    gen_input,
    oracle_convergence_steps,
    parity_fields,
    parity_local_rule,
    parity_symbol,
    prefix_xor,
    read_input_fixture,
    rule110_local_rule,
    rule110_step_oracle,
    schoolbook_add,
    write_input_fixture,
)

U = UNKNOWN
QP = parity_symbol(0, 0)


def bits_value(bits):
    return sum(int(b) << i for i, b in enumerate(bits))


def to_bits(value, n):
    return [(value >> i) & 1 for i in range(n)]


def run_to_fixed_point(task, lattice, cap=10_000):
    cells = lattice.cells
    for _ in range(cap):
        nxt = apply_rule_cells(cells, task.rule)
        if np.array_equal(nxt, cells):
            return lattice.with_cells(cells)
        cells = nxt
    raise AssertionError("no fixed point")


# -- local rules ----------------------------------------------------------------


def test_parity_rule_examples():
    assert parity_local_rule((parity_symbol(1, 1), parity_symbol(0, 0), QP)) == parity_symbol(0, 1)
    assert parity_local_rule((QP, parity_symbol(1, 1), QP)) == parity_symbol(1, 1)
    # unresolved left neighbour leaves the centre alone
    assert parity_local_rule((parity_symbol(1, U), parity_symbol(0, U), QP)) == parity_symbol(0, U)


def test_parity_fixed_point_1011():
    final = run_to_fixed_point(PARITY, encode_parity([1, 0, 1, 1]))
    assert decode_parity(final).tolist() == [1, 1, 0, 1]


def test_addition_rule_examples():
    Q = addition_symbol(0, 0, 0)
    centre = addition_symbol(0, 1, U)
    assert addition_fields(addition_local_rule((addition_symbol(1, 1, U), centre, Q)))[2] == 1
    assert addition_fields(addition_local_rule((addition_symbol(1, 0, 0), centre, Q)))[2] == 0
    assert addition_fields(addition_local_rule((addition_symbol(1, 0, U), centre, Q)))[2] == U
    # kill cell resolves to 0, resolved centre never changes
    assert addition_fields(addition_local_rule((addition_symbol(0, 0, U), centre, Q)))[2] == 0
    done = addition_symbol(1, 0, 1)
    assert addition_local_rule((addition_symbol(0, 0, 0), done, Q)) == done


@pytest.mark.parametrize("window,out", [((1, 1, 1), 0), ((1, 1, 0), 1), ((0, 0, 0), 0)])
def test_rule110_examples(window, out):
    assert rule110_local_rule(window) == out


def test_rule110_table_matches_binary_expansion():
    # 110 = 0b01101110, window k = 4l + 2c + r reads bit k
    expansion = [int(ch) for ch in reversed(format(110, "08b"))]
    assert RULE110.rule.lookup.tolist() == expansion


@pytest.mark.parametrize("task", [PARITY, ADDITION, RULE110])
def test_all_quiescent_window_is_fixed(task):
    assert task.rule.lookup[0] == task.alphabet.quiescent_id


# -- encoders -------------------------------------------------------------------------


def test_encode_addition_examples():
    assert [addition_fields(s) for s in encode_addition([1], [1]).cells] == [(1, 1, 0), (0, 0, U)]
    assert [addition_fields(s) for s in encode_addition([0, 0], [0, 0]).cells] == [(0, 0, 0), (0, 0, U), (0, 0, U)]
    assert [addition_fields(s) for s in encode_addition([1, 1, 1], [1, 0, 0]).cells] == [
        (1, 1, 0), (1, 0, U), (1, 0, U), (0, 0, U)
    ]
    with pytest.raises(ContractError):
        encode_addition([1, 0], [1])


def test_decode_sum_examples():
    assert decode_sum(run_to_fixed_point(ADDITION, encode_addition([1], [1]))).tolist() == [0, 1]
    a, b = [1, 1, 0, 1], [0, 1, 1, 0]
    assert bits_value(a) == 11 and bits_value(b) == 6
    assert decode_sum(run_to_fixed_point(ADDITION, encode_addition(a, b))).tolist() == [1, 0, 0, 0, 1]
    assert decode_sum(run_to_fixed_point(ADDITION, encode_addition([0] * 5, [0] * 5))).tolist() == [0] * 6


def test_decode_refuses_unresolved():
    with pytest.raises(NotConvergedError):
        decode_sum(encode_addition([1, 0], [0, 1]))
    with pytest.raises(NotConvergedError):
        decode_parity(encode_parity([1, 0]))


def test_encode_parity_starts_unresolved():
    cells = encode_parity([0, 0, 0]).cells
    assert [parity_fields(s) for s in cells] == [(0, U)] * 3
    assert decode_parity(run_to_fixed_point(PARITY, encode_parity([0, 0, 0]))).tolist() == [0, 0, 0]
    assert decode_parity(run_to_fixed_point(PARITY, encode_parity([1]))).tolist() == [1]


# -- generators ------------------------------------------------------------------------


def test_gen_input_adversarial():
    a, b = gen_input("addition", 4, "adversarial")
    assert a.tolist() == [1, 1, 1, 1] and b.tolist() == [1, 0, 0, 0]
    for task in ("parity", "rule110"):
        with pytest.raises(UnsupportedModeError):
            gen_input(task, 4, "adversarial")


def test_gen_input_deterministic():
    assert np.array_equal(gen_input("parity", 50, seed=3), gen_input("parity", 50, seed=3))
    a1, b1 = gen_input("addition", 3, seed=7)
    a2, b2 = gen_input("addition", 3, seed=7)
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
    assert not np.array_equal(gen_input("parity", 64, seed=1), gen_input("parity", 64, seed=2))


# -- global oracles -----------------------------------------------------------------------


def test_schoolbook_add_examples():
    assert schoolbook_add([1, 1, 1, 1], [1, 0, 0, 0]).tolist() == [0, 0, 0, 0, 1]


@given(st.integers(0, 2**200 - 1), st.integers(0, 2**200 - 1))
def test_schoolbook_add_matches_bigint(x, y):
    n = 200
    assert bits_value(schoolbook_add(to_bits(x, n), to_bits(y, n))) == x + y


def test_schoolbook_add_handles_a_million_bits():
    a, b = gen_input("addition", 10**6, seed=5)
    got = schoolbook_add(a, b)
    pa = int.from_bytes(np.packbits(a, bitorder="little").tobytes(), "little")
    pb = int.from_bytes(np.packbits(b, bitorder="little").tobytes(), "little")
    assert int.from_bytes(np.packbits(got, bitorder="little").tobytes(), "little") == pa + pb


@pytest.mark.parametrize("L", [1, 7, 64])
def test_parity_oracle_examples(L):
    assert prefix_xor([0] * L).tolist() == [0] * L
    assert prefix_xor([1] + [0] * (L - 1)).tolist() == [1] * L


def test_rule110_oracle_is_one_rule_step():
    x = gen_input("rule110", 200, seed=4)
    assert np.array_equal(rule110_step_oracle(x), apply_rule_cells(x, RULE110.rule))


# -- convergence steps ----------------------------------------------------------------------


def test_convergence_step_examples():
    assert oracle_convergence_steps("parity", gen_input("parity", 16, seed=0)) == 17
    assert oracle_convergence_steps("addition", gen_input("addition", 16, "adversarial")) == 17
    assert oracle_convergence_steps("addition", ([0] * 16, [0] * 16)) == 2
    with pytest.raises(ContractError):
        oracle_convergence_steps("rule110", gen_input("rule110", 8))


def test_adversarial_step_law_all_lengths():
    for L in range(1, 1025):
        assert oracle_convergence_steps("addition", gen_input("addition", L, "adversarial")) == L + 1, L


@pytest.mark.parametrize("L", [1, 2, 5, 33, 200])
def test_parity_step_law(L):
    for seed in range(5):
        assert oracle_convergence_steps("parity", gen_input("parity", L, seed=seed)) == L + 1


def test_oracle_soundness_random_pairs():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        L = int(rng.integers(1, 65))
        a, b = rng.integers(0, 2, size=(2, L), dtype=np.uint8)
        assert np.array_equal(decode_sum(run_to_fixed_point(ADDITION, encode_addition(a, b))), schoolbook_add(a, b))
        assert np.array_equal(decode_parity(run_to_fixed_point(PARITY, encode_parity(a))), prefix_xor(a))


def _trajectory(task, lattice):
    rows = [lattice.cells]
    while True:
        nxt = apply_rule_cells(rows[-1], task.rule)
        if np.array_equal(nxt, rows[-1]):
            return np.stack(rows)
        rows.append(nxt)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=80), st.data())
def test_carries_monotone_and_frozen_channels(a, data):
    b = data.draw(st.lists(st.integers(0, 1), min_size=len(a), max_size=len(a)))
    rows = _trajectory(ADDITION, encode_addition(a, b))
    ab, c = np.divmod(rows, 3)
    unknown = (c == U).sum(axis=1)
    assert (np.diff(unknown) <= 0).all() and unknown[-1] == 0
    assert (ab == ab[0]).all()
    # a known carry never changes again
    assert not ((c[:-1] != U) & (c[1:] != c[:-1])).any()


@given(st.lists(st.integers(0, 1), min_size=1, max_size=80))
def test_parity_frozen_input_channel(x):
    rows = _trajectory(PARITY, encode_parity(x))
    assert (rows // 3 == rows[0] // 3).all()


def test_random_step_envelope():
    # upper-envelope fit of mean steps against log2 L
    lengths = [2**k for k in range(4, 17)]
    means = []
    for L in lengths:
        n = 40 if L <= 4096 else 8
        means.append(np.mean([oracle_convergence_steps("addition", gen_input("addition", L, seed=[L, s])) for s in range(n)]))
    slope, intercept = np.polyfit(np.log2(lengths), means, 1)
    assert slope <= 2.0
    for L, m in zip(lengths, means):
        assert m <= slope * math.log2(L) + intercept + 3


def test_input_fixture_round_trip():
    a, b = gen_input("addition", 9, seed=2)
    text = write_input_fixture("addition", (a, b), "random", 2)
    assert text.splitlines()[0] == "addition 9 random 2"
    task, (a2, b2), mode, seed = read_input_fixture(text)
    assert task is ADDITION and mode == "random" and seed == 2
    assert np.array_equal(a, a2) and np.array_equal(b, b2)
    task, x, mode, seed = read_input_fixture(write_input_fixture("parity", np.array([1, 0, 1]), "random", None))
    assert task is PARITY and x.tolist() == [1, 0, 1] and seed is None
    with pytest.raises(ContractError):
        read_input_fixture("addition 3 random 0\n101\n")
