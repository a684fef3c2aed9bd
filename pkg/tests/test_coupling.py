import itertools
import math

import numpy as np
import pytest

from conftest import brute_block_law
from gmeasure.blockvar import BlockVariationPair, delta_bar, make_blocks, rates_from_rho, rho_block
from gmeasure.coupling import (
    CoupledState,
    coupled_block_extension,
    estimate_dbar,
    initial_pasts,
    iterate_attractor,
    run_coupling,
)
from gmeasure.measures import CylinderMeasure, stationary_measure, transition_matrix
from gmeasure.metrics import total_variation
from gmeasure.symbolic import TableG, sup_log_gap


def perturbed_table1(s=0.02):
    return TableG.markov(0.3 * math.exp(s), 0.6)


def test_extension_identical_pasts(table1, rng):
    st = CoupledState((1, 0), (1, 0), kappa=2)
    new, ok, p = coupled_block_extension(table1, table1, st, 3, rng)
    assert ok and p == pytest.approx(1.0)
    assert new.kappa == 5
    assert new.left_past == new.right_past


def test_extension_table1_success_probability(table1, rng):
    st = CoupledState((1,), (0,), kappa=0)
    _, _, p = coupled_block_extension(table1, table1, st, 1, rng)
    assert p == pytest.approx(0.7, abs=1e-12)
    hits = sum(coupled_block_extension(table1, table1, st, 1, rng)[1] for _ in range(4000))
    assert abs(hits / 4000 - 0.7) <= 3 * math.sqrt(0.21 / 4000)


def test_extension_kappa_tracks_concordance(table1, rng):
    st = CoupledState((1, 1, 0), (0, 1, 0), kappa=0)
    for _ in range(200):
        st, _, _ = coupled_block_extension(table1, table1, st, 2, rng)
        assert min(st.kappa, 3) == min(sum(1 for _ in itertools.takewhile(lambda t: t[0] == t[1], zip(st.left_past, st.right_past))), 3)


def test_cross_kernel_shift_bound():
    g = TableG.markov(0.3, 0.6)
    g2 = perturbed_table1()
    s = sup_log_gap(g, g2)
    assert s == pytest.approx(0.02, abs=1e-12)
    rng = np.random.default_rng(0)
    for B in range(3):
        for b in (1, 2, 3):
            bound = rho_block(g, B, b).exact + s * b
            d = max(B, 1)
            for x in itertools.product([0, 1], repeat=d):
                for y in itertools.product([0, 1], repeat=d):
                    if x[:B] != y[:B]:
                        continue
                    _, _, p = coupled_block_extension(g, g2, CoupledState(x, y, B), b, rng)
                    assert -math.log(p) <= bound + 1e-12


def test_marginals_are_not_distorted():
    g = TableG.markov(0.3, 0.6)
    g2 = perturbed_table1()
    rng = np.random.default_rng(5)
    n = 10**5
    st = CoupledState((1, 0), (0, 0), 0)
    left = np.zeros(4, dtype=np.int64)
    right = np.zeros(4, dtype=np.int64)
    for _ in range(n // 10):
        new, _, _ = coupled_block_extension(g, g2, st, 2, rng)
        left[new.left_past[1] * 2 + new.left_past[0]] += 1
        right[new.right_past[1] * 2 + new.right_past[0]] += 1
    for counts, law in ((left, brute_block_law(g, (1, 0), 2)), (right, brute_block_law(g2, (0, 0), 2))):
        m = counts.sum()
        chi2 = np.sum((counts - m * law) ** 2 / (m * law))
        assert chi2 < 16.27


def test_run_identical_chains_never_disagree(table1):
    p = rates_from_rho(table1, make_blocks("unit", M=5))
    tr = run_coupling(table1, table1, p, 2000, 1, init=((1,), (1,)))
    assert not tr.disagree.any()


def test_run_dominance_and_counters(table1):
    p = rates_from_rho(table1, make_blocks("unit", M=8))
    tr = run_coupling(table1, table1, p, 20000, 2)
    assert tr.dominance_violations == 0
    assert tr.validity_violations == []
    assert np.all(tr.asserted)
    assert tr.y[0] == 0 and np.all(tr.kappa >= tr.y)
    assert tr.successes.sum() + tr.failures.sum() > 0


@pytest.mark.parametrize("M", [10, 20, 40])
def test_table1_disagreement_below_delta_bar(table1, M):
    p = rates_from_rho(table1, make_blocks("unit", M=M))
    tr = run_coupling(table1, table1, p, 10**5, M)
    assert tr.tail_disagreement() <= delta_bar(p) + 3 * math.sqrt(0.25 / 10**4)


def test_invalid_rates_are_flagged(table1):
    p = BlockVariationPair.make([1, 1], [0.1, 0.1])
    tr = run_coupling(table1, table1, p, 2000, 4)
    assert tr.validity_violations
    assert not tr.asserted.all()
    assert tr.dominance_violations == 0  # only asserted steps count


def test_estimate_dbar_same_kernel_same_start(table1):
    p = rates_from_rho(table1, make_blocks("unit", M=5))
    est = estimate_dbar(table1, table1, p, 1000, 5, 9, init=((0,), (0,)))
    assert est.estimate == 0.0


def test_estimate_dbar_ceiling_and_independent_baseline():
    g, g2 = TableG.markov(0.3, 0.6), perturbed_table1()
    p = rates_from_rho(g, make_blocks("unit", M=10))
    est = estimate_dbar(g, g2, p, 4000, 20, 123)
    assert est.within_ceiling
    assert est.ceiling == pytest.approx(delta_bar(p.inflated(0.02)), abs=1e-9)
    assert est.dominance_violations == 0
    ind = estimate_dbar(g, g2, p, 4000, 20, 123, coupling="independent")
    assert ind.estimate > est.estimate + ind.band + est.band


def test_estimate_dbar_is_deterministic(table1):
    p = rates_from_rho(table1, make_blocks("unit", M=4))
    a = estimate_dbar(table1, perturbed_table1(), p, 500, 4, 77)
    b = estimate_dbar(table1, perturbed_table1(), p, 500, 4, 77)
    np.testing.assert_array_equal(a.per_trial, b.per_trial)


def test_initial_pasts(table1, rng):
    left, right = initial_pasts(table1, table1, 3, "adversarial", rng)
    assert left[0] != right[0]
    left, right = initial_pasts(table1, table1, 4, "stationary", rng)
    assert len(left) == len(right) == 4
    with pytest.raises(ValueError):
        initial_pasts(table1, table1, 2, "bogus", rng)


def test_iterate_attractor_examples(table1):
    u = CylinderMeasure.uniform(2, 2)
    assert np.all(iterate_attractor(table1, u, u, 5).distances == 0)
    iid = TableG.iid([0.3, 0.7])
    res = iterate_attractor(iid, CylinderMeasure.point((0, 0), 2), CylinderMeasure.point((1, 1), 2), 8)
    for n, d in enumerate(res.distances):
        assert d <= 2.0**-n + 1e-15
    res = iterate_attractor(table1, CylinderMeasure.point((1,), 2), CylinderMeasure.point((0,), 2), 20)
    assert res.distances[-1] < 1e-3
    assert res.resolution[-1] == 2.0**-20


def test_iterate_attractor_reaches_stationary(table1):
    mu = stationary_measure(table1, 4)
    res = iterate_attractor(table1, CylinderMeasure.point((1, 1, 1, 1), 2), mu, 30, max_depth=8)
    assert res.distances[-1] < 1e-6


def test_attractor_on_grid():
    # contraction is governed by the second eigenvalue of the history chain;
    # on the 0.1 grid it reaches about 0.894, so 50 steps give < 1e-3 only below ~0.87
    fine = np.round(np.arange(0.1, 1.0, 0.1), 1)
    coarse = [0.1, 0.3, 0.5, 0.7, 0.9]
    cases = list(itertools.product(fine, repeat=2)) + list(itertools.product(coarse, repeat=4))
    cases.append((0.1, 0.9, 0.1, 0.9))  # slowest table on the fine memory-2 grid
    for ps in cases:
        memory = 1 if len(ps) == 2 else 2
        g = TableG.from_columns([[1 - p, p] for p in ps], memory=memory)
        nu1 = CylinderMeasure.point((0,) * memory, 2)
        nu2 = CylinderMeasure.point((1,) * memory, 2)
        d = iterate_attractor(g, nu1, nu2, 100, max_depth=8).distances
        assert np.all(d <= 1.0 + 1e-12)
        assert d[100] < 1e-3
        lam = sorted(np.abs(np.linalg.eigvals(transition_matrix(g))))[-2]
        if lam <= 0.85:
            assert d[50] < 1e-3
