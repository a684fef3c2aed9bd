import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from gmeasure.symbolic import TableG


@pytest.fixture
def table1():
    """Binary memory-1 chain with P(1|1) = 0.3 and P(1|0) = 0.6."""
    return TableG.markov(0.3, 0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def brute_block_law(g, past, b):
    """Block law by explicit products over all words (y1..yb), independent of the vectorized code."""
    out = {}
    for ys in itertools.product(range(g.size), repeat=b):
        p = 1.0
        hist = tuple(past)
        for y in ys:
            p *= g.next_law(hist)[y]
            hist = (y,) + hist
        out[ys] = p
    return np.array([out[w] for w in itertools.product(range(g.size), repeat=b)])


def brute_block_sups(g, B, b, depth):
    """(h, rho) by looping over all past pairs of length ``depth`` agreeing in ``B`` coordinates."""
    pasts = list(itertools.product(range(g.size), repeat=depth))
    laws = {x: brute_block_law(g, x, b) for x in pasts}
    h = rho = 0.0
    for x in pasts:
        for y in pasts:
            if x[:B] != y[:B]:
                continue
            p, q = laws[x], laws[y]
            h = max(h, -math.log(min(1.0, sum(math.sqrt(a * c) for a, c in zip(p, q)))))
            rho = max(rho, -math.log(min(1.0, sum(min(a, c) for a, c in zip(p, q)))))
    return h, rho


def lp_wasserstein(mu, nu, words):
    """Optimal transport cost for d(x, y) = 2**-kappa(x, y) by linear programming."""
    n = len(words)
    depth = len(words[0])

    def d(x, y):
        k = 0
        while k < depth and x[k] == y[k]:
            k += 1
        return 0.0 if k == depth else 2.0**-k

    cost = np.array([[d(x, y) for y in words] for x in words]).ravel()
    A, rhs = [], []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1
        A.append(row.ravel())
        rhs.append(mu[i])
    for j in range(n):
        col = np.zeros((n, n))
        col[:, j] = 1
        A.append(col.ravel())
        rhs.append(nu[j])
    res = linprog(cost, A_eq=np.array(A), b_eq=np.array(rhs), bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def grid_tables(memory, grid, size=2):
    """All binary tables of the given memory whose P(1|history) lies on ``grid``."""
    n_hist = size**memory
    for ps in itertools.product(grid, repeat=n_hist):
        yield TableG.from_columns([[1 - p, p] for p in ps], memory=memory)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
