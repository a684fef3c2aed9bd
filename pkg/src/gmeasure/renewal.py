"""The dominating integer chain ``Y_n`` and its renewal equation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .blockvar import DEGENERATE_RATE, BlockVariationPair

SPEC_TOL = 1e-12


@dataclass(frozen=True)
class RenewalSpec:
    """Cycle law and below-zero mass of the dominating chain.

    ``p`` is dense over ``0..B_M`` (nonzero only on the block grid) and
    ``a`` holds ``a_0..a_{B_M}``.
    """

    pair: BlockVariationPair
    q: np.ndarray
    p: np.ndarray
    a: np.ndarray
    expected_T1: float
    sum_a: float

    @property
    def B_M(self) -> int:
        return len(self.a) - 1

    @property
    def limit(self) -> float:
        return self.sum_a / self.expected_T1

    def p_sparse(self) -> dict:
        return {int(j): float(self.p[j]) for j in self.pair.blocks.B}


def build_spec(pair: BlockVariationPair) -> RenewalSpec:
    """Build ``q_l``, ``p_j``, ``a_n``, ``E[T_1]`` and ``sum a_n`` from a pair."""
    if len(pair.blocks) == 0:
        raise ValueError("empty block-variation pair")
    r = np.where(pair.r == 0.0, DEGENERATE_RATE, pair.r)
    b = pair.b
    B = pair.blocks.B
    survive = np.exp(-np.concatenate([[0.0], np.cumsum(r)[:-1]]))
    q = survive * -np.expm1(-r)
    p = np.zeros(int(B[-1]) + 1)
    p[B[:-1]] = q[:-1]
    p[B[-1]] = 1.0 - q[:-1].sum()
    a = np.zeros(int(B[-1]) + 1)
    a[0] = 1.0
    a[1:] = np.repeat(q, pair.blocks.b)
    spec = RenewalSpec(pair, q, p, a, float(np.sum(b * survive)), float(1.0 + np.sum(b * q)))
    if np.any(p < -SPEC_TOL) or abs(p.sum() - 1.0) > SPEC_TOL:
        raise ArithmeticError("cycle law is not a probability vector")
    if np.any(a < 0) or not math.isfinite(spec.sum_a):
        raise ArithmeticError("below-zero masses are not nonnegative and finite")
    return spec


@dataclass(frozen=True)
class RenewalSolution:
    A: np.ndarray
    limit: float
    tail_error: float  # |A_N - limit|
    cycle_average: float  # average of A over the last B_M steps, weighted by P(T_1 > i)
    cycle_error: float


def renewal_exact(spec: RenewalSpec, N: int) -> RenewalSolution:
    """Solve ``A_n = a_n + sum_j A_{n-j} p_j`` for ``n = 0..N``.

    The recursion is the IIR filter ``A = a / (1 - P(z))``.  ``A_N`` need not
    settle when the cycle law is periodic, so the solution also reports the
    renewal-reward average ``sum_{i<B_M} A_{N-i} P(T_1 > i) / E[T_1]``, which
    equals the limit for every ``N`` large enough.
    """
    if N < spec.B_M:
        raise ValueError(f"N={N} is below B_M={spec.B_M}")
    x = np.zeros(N + 1)
    x[: len(spec.a)] = spec.a
    den = -spec.p.copy()
    den[0] = 1.0
    A = lfilter([1.0], den, x)
    limit = spec.limit
    surv = 1.0 - np.cumsum(spec.p)[: spec.B_M]  # P(T_1 > i), i = 0..B_M-1
    window = A[N - np.arange(spec.B_M)]
    cyc = float(np.dot(window, surv) / surv.sum())
    return RenewalSolution(A, limit, float(abs(A[-1] - limit)), cyc, float(abs(cyc - limit)))


@dataclass(frozen=True)
class YTrace:
    values: np.ndarray
    seed: int

    @property
    def below_zero_frequency(self) -> float:
        return float(np.mean(self.values <= 0))


def y_step(y: int, pair: BlockVariationPair, u: float) -> int:
    """One transition of the chain given a uniform ``u`` (climb iff ``u < e^{-r_l}``)."""
    B = pair.blocks.B
    if y == B[-1]:
        return 0
    if y < 0:
        return y + 1
    starts = pair.blocks.starts
    level = int(np.searchsorted(starts, y, side="left"))
    if level < len(starts) and starts[level] == y:
        return y + 1 if u < math.exp(-pair.r[level]) else -int(pair.blocks.b[level])
    return y + 1


def check_transitions(values: np.ndarray, pair: BlockVariationPair) -> bool:
    """Whether every consecutive pair in ``values`` is an allowed transition."""
    B = pair.blocks.B
    starts = pair.blocks.starts
    grid = {int(s): int(b) for s, b in zip(starts, pair.blocks.b)}
    v = np.asarray(values)
    if len(v) == 0 or v[0] != 0:
        return False
    for y, z in zip(v[:-1].tolist(), v[1:].tolist()):
        if y == B[-1]:
            ok = z == 0
        elif y in grid:
            ok = z in (y + 1, -grid[y])
        else:
            ok = z == y + 1
        if not ok:
            return False
    return True


def simulate_Y(pair: BlockVariationPair, N: int, seed: int) -> YTrace:
    """Simulate ``Y_0 = 0, ..., Y_N``.

    Off the grid the chain climbs by one; at ``B_{l-1}`` it climbs with
    probability ``e^{-r_l}`` and otherwise falls to ``-b_l``; at ``B_M`` it
    returns to 0.  Each excursion from 0 back to 0 is drawn as a whole: a
    fall at level ``l`` costs ``B_{l-1} + 1 + b_l`` steps and a full climb
    ``B_M + 1`` steps.
    """
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    M = len(pair.blocks)
    B = pair.blocks.B.astype(np.int64)
    starts = pair.blocks.starts.astype(np.int64)
    bl = np.asarray(pair.blocks.b, dtype=np.int64)
    r = pair.r
    # excursion templates: index l < M is a fall at level l+1, index M a full climb
    templates = []
    for l in range(M):
        templates.append(np.concatenate([np.arange(0, starts[l] + 1), np.arange(-bl[l], 0)]))
    templates.append(np.arange(0, B[-1] + 1))
    lengths = np.array([len(t) for t in templates])
    survive = np.exp(-np.concatenate([[0.0], np.cumsum(r)]))
    probs = np.append(survive[:-1] * -np.expm1(-r), survive[-1])
    probs /= probs.sum()
    n_cyc = int(np.ceil((N + 1) / lengths.min())) + 1
    out = []
    total = 0
    while total < N + 1:
        kinds = rng.choice(M + 1, size=min(n_cyc, 1 << 20), p=probs)
        seq = np.concatenate([templates[k] for k in kinds])
        out.append(seq)
        total += len(seq)
    values = np.concatenate(out)[: N + 1]
    return YTrace(values, seed)


def below_zero_frequency(pair: BlockVariationPair) -> float:
    """Long-run frequency of ``{Y_n <= 0}`` for the mechanically simulated chain.

    Cycles last ``B_l + 1`` steps counting the transition step, so the
    frequency is ``(1 + sum b_l q_l) / (1 + sum b_l e^{-r_1 - ... - r_{l-1}})``.
    """
    spec = build_spec(pair)
    return spec.sum_a / (1.0 + spec.expected_T1)
