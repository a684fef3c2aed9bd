import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmeasure.symbolic import (
    Alphabet,
    LogisticG,
    TableG,
    VariationSequence,
    concordance,
    eval_g,
    finite_approx,
    lipschitz_variation_bound,
    sup_log_gap,
    variation,
    variation_sequence,
)


def brute_variation(g, n, depth):
    """Sup of |log g(x) - log g(y)| over words of length depth+1 agreeing in n coordinates."""
    words = list(itertools.product(range(g.size), repeat=depth + 1))
    vals = {w: math.log(eval_g(g, w)) for w in words}
    best = 0.0
    for x in words:
        for y in words:
            if x[:n] == y[:n]:
                best = max(best, abs(vals[x] - vals[y]))
    return best


def test_eval_table1(table1):
    assert eval_g(table1, (1, 1)) == pytest.approx(0.3, abs=1e-15)
    assert eval_g(table1, (0, 0)) == pytest.approx(0.4, abs=1e-15)


def test_eval_logistic():
    flat = LogisticG(0.0, np.zeros(4))
    assert eval_g(flat, (1, 0, 1)) == 0.5
    g = LogisticG(0.0, np.array([1.0, 0.0, 0.0]))
    assert eval_g(g, (1, 1, 1)) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-12)


def test_eval_rejects_short_and_bad_words(table1):
    with pytest.raises(ValueError):
        eval_g(table1, (1,))
    with pytest.raises(ValueError):
        eval_g(table1, (2, 0))


def test_alphabet_validation():
    with pytest.raises(ValueError):
        Alphabet(0)
    assert Alphabet(3).words(2).shape == (9, 2)


def test_table_construction_checks():
    with pytest.raises(ValueError):
        TableG.from_columns([[0.5, 0.6]])
    with pytest.raises(ValueError):
        TableG.from_columns([[1.0, 0.0]])
    # a deterministic column is allowed once the floor is lowered
    TableG.from_columns([[1.0, 0.0]], floor=0.0)


def test_variation_table1(table1):
    assert variation(table1, 1).value == pytest.approx(math.log(2), abs=1e-12)
    assert variation(table1, 2) == (0.0, True)
    assert variation(TableG.iid([0.2, 0.8]), 1).value == 0.0


@pytest.mark.parametrize("memory", [1, 2])
def test_variation_matches_enumeration(memory, rng):
    for _ in range(5):
        p = rng.uniform(0.05, 0.95, size=2**memory)
        g = TableG.from_columns([[1 - x, x] for x in p], memory=memory)
        for n in range(memory + 3):
            assert variation(g, n).value == pytest.approx(brute_variation(g, n, memory), abs=1e-12)


def test_variation_nonincreasing(rng):
    for _ in range(20):
        p = rng.uniform(0.01, 0.99, size=8)
        g = TableG.from_columns([[1 - x, x] for x in p], memory=3)
        v = [variation(g, n).value for n in range(6)]
        assert all(a >= b - 1e-15 for a, b in zip(v, v[1:]))


def test_logistic_variation_is_sharp_for_truncated_model():
    g = LogisticG(0.3, np.array([0.5, -0.25, 0.125]))
    for n in range(5):
        v = variation(g, n)
        assert v.exact
        assert v.value == pytest.approx(brute_variation(g.as_table(), n, g.depth), abs=1e-12)
        assert v.value <= lipschitz_variation_bound(g, n) + 1e-15


def test_logistic_tail_makes_variation_an_upper_bound():
    g = LogisticG.power_law(0.5, 1.5, 10)
    assert g.tail > 0
    v = variation(g, 3)
    assert not v.exact
    assert v.value >= variation(LogisticG(0.0, g.couplings), 3).value


def test_finite_approx_reproduces_finite_memory(table1):
    t = finite_approx(table1, 1)
    np.testing.assert_allclose(t.kernel, table1.kernel, atol=1e-15)
    t0 = finite_approx(table1, 0, z=(1,))
    assert t0.memory == 0
    np.testing.assert_allclose(t0.columns[0], [0.7, 0.3])


def test_finite_approx_zero_variation_beyond_N():
    g = LogisticG.power_law(0.3, 1.5, 8)
    for N in range(4):
        t = finite_approx(g, N)
        assert all(variation(t, n).value == 0.0 for n in range(N + 1, N + 4))


def test_finite_approx_sup_log_bound():
    g = LogisticG(0.0, 0.4 * np.arange(1, 9, dtype=float) ** -1.5)
    full = g.as_table()
    for N in range(6):
        t = finite_approx(g, N)
        lifted = TableG.from_columns(t.columns[all_words_index(N, g.depth)], memory=g.depth)
        gap = sup_log_gap(full, lifted)
        assert gap <= t.sup_log_gap + 1e-12
        assert gap <= 2.0 * np.abs(g.couplings[N:]).sum() + 1e-12


def all_words_index(N, D):
    # history index of the first N coordinates of every depth-D history
    return np.arange(2**D) >> (D - N) if N else np.zeros(2**D, dtype=int)


def test_normalization_everywhere():
    tables = [TableG.markov(0.3, 0.6), LogisticG.power_law(1.0, 1.5, 6).as_table()]
    for g in tables:
        np.testing.assert_allclose(g.kernel.sum(axis=0), 1.0, atol=1e-12)
    g = LogisticG(2.0, np.array([30.0, -4.0]))
    laws = g.next_laws(np.array(list(itertools.product([0, 1], repeat=2))))
    np.testing.assert_allclose(laws.sum(axis=1), 1.0, atol=1e-12)


def test_concordance_examples():
    assert concordance((0, 1, 2), (0, 1, 3)) == 2
    assert concordance((1,) * 5, (1,) * 5) == 5
    assert concordance((0, 1), (1, 1)) == 0
    with pytest.raises(ValueError):
        concordance((0,), (0, 1))


@pytest.mark.parametrize("n", range(7))
def test_concordance_brute_force(n):
    words = list(itertools.product([0, 1], repeat=n))
    for x in words:
        for y in words:
            k = concordance(x, y)
            assert k == concordance(y, x)
            for j in range(n + 1):
                assert (k >= j) == (x[:j] == y[:j])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=20))
def test_variation_sequence_tail(values):
    v = VariationSequence(np.array(values), tail_sq=0.0)
    for k in range(len(values) + 2):
        assert v.square_tail(k) == pytest.approx(float(np.sum(np.array(values[k:]) ** 2)), abs=1e-9)


def test_variation_sequence_power_tail_is_an_upper_bound():
    v = VariationSequence.power(1.0, 0.6)
    t = v.terms(200001)
    for start in (1, 10, 1000):
        assert v.square_tail(start) >= float(np.sum(t[start:] ** 2))
    assert math.isinf(VariationSequence.power(1.0, 0.5).square_tail(3))


def test_variation_sequence_from_table(table1):
    v = variation_sequence(table1, 4)
    np.testing.assert_allclose(v.values, [math.log(2), 0, 0, 0], atol=1e-15)
    assert v.terms(10)[4:].sum() == 0.0
