"""Block-coupled simulation of two g-chains dominated by the integer chain."""

from __future__ import annotations

import math
import os
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .blockvar import BlockVariationPair, delta_bar
from .measures import CylinderMeasure, _adjoint_step, _block_masses, default_max_depth, stationary_measure
from .metrics import maximal_coupling_indices, wasserstein_ultra
from .symbolic import GFunction, TableG, all_words, check_word, concordance, sup_log_gap

VALIDITY_TOL = 1e-12
UNIFORM_CHUNK = 4096


def default_workers() -> int:
    env = os.environ.get("GMEASURE_THREADS")
    if env:
        return max(1, int(env))
    return 1


@dataclass(frozen=True)
class CoupledState:
    left_past: tuple
    right_past: tuple
    kappa: int
    y: int = 0
    level: int = 0
    s: float = 0.0


def _extend(past: tuple, block_y_order: Sequence[int], depth: int) -> tuple:
    return (tuple(reversed(block_y_order)) + past)[:depth]


def coupled_block_extension(g: GFunction, g2: GFunction, state: CoupledState, b: int, rng: np.random.Generator,
                            u: float | None = None) -> tuple[CoupledState, bool, float]:
    """Extend both pasts by ``b`` symbols drawn from a maximal coupling of the block laws.

    Returns the new state, whether the two blocks coincide and the success
    probability ``1 - tv/2`` of the coupling.  ``u`` is the uniform deciding
    success; it is drawn from ``rng`` when omitted.
    """
    if b < 1:
        raise ValueError("block length must be positive")
    p = _block_masses(g, np.array([state.left_past], dtype=np.int64), b)[0]
    q = _block_masses(g2, np.array([state.right_past], dtype=np.int64), b)[0]
    p_actual = float(np.minimum(p, q).sum())
    i, j = maximal_coupling_indices(p, q, rng, u=u)
    words = all_words(g.size, b)
    yl, yr = tuple(words[i].tolist()), tuple(words[j].tolist())
    depth = len(state.left_past)
    left = _extend(state.left_past, yl, depth)
    right = _extend(state.right_past, yr, depth)
    success = yl == yr
    kappa = state.kappa
    for a, c in zip(yl, yr):
        kappa = kappa + 1 if a == c else 0
    return CoupledState(left, right, kappa, state.y, state.level, state.s), success, p_actual


class _BlockSampler:
    """Cached maximal couplings of block laws, sampled from a buffered uniform stream."""

    def __init__(self, g: GFunction, g2: GFunction, rng: np.random.Generator, independent: bool = False):
        self.g, self.g2, self.rng = g, g2, rng
        self.independent = independent
        self.kl, self.kr = max(g.depth, 0), max(g2.depth, 0)
        self.cache: dict = {}
        self.words: dict = {}
        self.buf = rng.random(UNIFORM_CHUNK).tolist()
        self.pos = 0

    def uniform(self) -> float:
        if self.pos == len(self.buf):
            self.buf = self.rng.random(UNIFORM_CHUNK).tolist()
            self.pos = 0
        self.pos += 1
        return self.buf[self.pos - 1]

    def _entry(self, left: tuple, right: tuple, b: int):
        key = (left[: self.kl], right[: self.kr], b)
        e = self.cache.get(key)
        if e is None:
            p = _block_masses(self.g, np.array([left[: self.kl]], dtype=np.int64).reshape(1, -1), b)[0]
            q = _block_masses(self.g2, np.array([right[: self.kr]], dtype=np.int64).reshape(1, -1), b)[0]
            ov = np.minimum(p, q)
            w = float(ov.sum())

            def cdf(x):
                c = np.cumsum(x)
                return (c / c[-1]).tolist() if c[-1] > 0 else None

            resl, resr = np.clip(p - ov, 0, None), np.clip(q - ov, 0, None)
            e = (w, cdf(ov), cdf(resl) or cdf(ov), cdf(resr) or cdf(ov), cdf(p), cdf(q))
            self.cache[key] = e
        return e

    def block(self, b: int) -> list:
        w = self.words.get(b)
        if w is None:
            w = [tuple(x) for x in all_words(self.g.size, b).tolist()]
            self.words[b] = w
        return w

    def sample(self, left: tuple, right: tuple, b: int, u: float):
        """Return ``(block_left, block_right, success_prob)`` in prepending order."""
        w, c_ov, c_l, c_r, c_p, c_q = self._entry(left, right, b)
        words = self.block(b)
        last = len(words) - 1
        if self.independent:
            i = min(bisect_right(c_p, self.uniform()), last)
            j = min(bisect_right(c_q, self.uniform()), last)
        elif u < w:
            i = j = min(bisect_right(c_ov, self.uniform()), last)
        else:
            i = min(bisect_right(c_l, self.uniform()), last)
            j = min(bisect_right(c_r, self.uniform()), last)
        return words[i], words[j], w


@dataclass
class CouplingTrace:
    """Per-step records of a coupled run; index ``n`` is time ``0..N``."""

    kappa: np.ndarray
    y: np.ndarray
    asserted: np.ndarray  # dominance asserted at this step
    successes: np.ndarray  # per level
    failures: np.ndarray
    validity_violations: list = field(default_factory=list)  # (time, level, p_actual, threshold)
    seed: int | None = None
    s: float = 0.0

    @property
    def disagree(self) -> np.ndarray:
        return self.kappa == 0

    @property
    def dominance_violations(self) -> int:
        return int(np.sum(self.asserted & (self.kappa < self.y)))

    def tail_disagreement(self, fraction: float = 0.1) -> float:
        n = len(self.kappa)
        k = max(1, int(round(fraction * (n - 1))))
        return float(np.mean(self.disagree[n - k :]))


def initial_pasts(g: GFunction, g2: GFunction, depth: int, init, rng: np.random.Generator) -> tuple[tuple, tuple]:
    """Pasts of length ``depth`` for the two chains.

    ``init`` is ``"adversarial"`` (all-zero pasts except coordinate 0),
    ``"uniform"``, ``"stationary"`` (table kernels) or an explicit pair.
    """
    S = g.size
    if isinstance(init, str):
        if init == "adversarial":
            left = (0,) * depth
            right = (1,) + (0,) * (depth - 1)
        elif init == "uniform":
            left = tuple(rng.integers(0, S, depth).tolist())
            right = tuple(rng.integers(0, S, depth).tolist())
        elif init == "stationary":
            left, right = (_draw_stationary(h, depth, rng) for h in (g, g2))
        else:
            raise ValueError(f"unknown initial law {init!r}")
        return left, right
    left, right = (check_word(w, S) for w in init)
    if len(left) < depth or len(right) < depth:
        pad = lambda w: w + (0,) * (depth - len(w))  # noqa: E731
        left, right = pad(left), pad(right)
    return left[:depth], right[:depth]


def _draw_stationary(g: GFunction, depth: int, rng) -> tuple:
    if not isinstance(g, TableG):
        raise TypeError("stationary initial pasts need a table kernel")
    mu = stationary_measure(g, depth)
    idx = rng.choice(len(mu.mass), p=mu.mass / mu.mass.sum())
    return tuple(mu.words()[idx].tolist())


def run_coupling(g: GFunction, g2: GFunction, pair: BlockVariationPair, N: int, rng: np.random.Generator | int,
                 s: float | None = None, init="adversarial", coupling: str = "maximal") -> CouplingTrace:
    """Run the block coupling for ``N`` steps alongside the dominating chain.

    At ``Y = B_{l-1}`` a block of ``b_l`` symbols is drawn from the maximal
    coupling, and one uniform ``U`` drives both the block (success iff
    ``U < p_actual``) and the chain (climb iff ``U < exp(-(r_l + s b_l))``).
    Under validity a climb forces a successful block, so ``kappa >= y``.
    From ``Y = B_M`` and ``Y = -1`` one coupled symbol is drawn and ``Y``
    returns to 0.  A level whose success probability falls below its climb
    threshold is recorded, and dominance is not asserted until ``Y`` next
    returns to 0.
    """
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng) if seed is not None else rng
    if g.size != g2.size:
        raise ValueError("alphabet mismatch")
    if s is None:
        s = 0.0 if g is g2 else sup_log_gap(g, g2)
    M = len(pair.blocks)
    starts = [int(x) for x in pair.blocks.starts]
    bl = list(pair.blocks.b)
    B_M = int(pair.blocks.B[-1])
    thr = [math.exp(-(r + s * b)) for r, b in zip(pair.r, bl)]
    level_at = {st: l for l, st in enumerate(starts)}
    depth = max(g.depth, g2.depth, 1)
    cap = max(depth, B_M)
    left, right = initial_pasts(g, g2, depth, init, rng)
    kappa = concordance(left, right)
    if kappa == depth:
        kappa = cap
    sampler = _BlockSampler(g, g2, rng, independent=(coupling == "independent"))
    if coupling not in ("maximal", "independent"):
        raise ValueError(f"unknown coupling {coupling!r}")
    kap = np.empty(N + 1, dtype=np.int64)
    ys = np.empty(N + 1, dtype=np.int64)
    ok = np.ones(N + 1, dtype=bool)
    succ = np.zeros(M, dtype=np.int64)
    fail = np.zeros(M, dtype=np.int64)
    violations = []
    kap[0], ys[0] = kappa, 0
    asserted = coupling == "maximal"
    ok[0] = asserted
    n, y = 0, 0
    while n < N:
        if y == B_M or y < 0:
            bl_, br_, _ = sampler.sample(left, right, 1, sampler.uniform())
            left = (bl_[0],) + left[:-1]
            right = (br_[0],) + right[:-1]
            kappa = min(kappa + 1, cap) if bl_ == br_ else 0
            y = y + 1 if y < 0 else 0
            if y == 0:
                asserted = coupling == "maximal"
            n += 1
            kap[n], ys[n], ok[n] = kappa, y, asserted
            continue
        l = level_at.get(y)
        if l is None:
            raise AssertionError(f"chain left the block grid at y={y}")
        b = bl[l]
        u = sampler.uniform()
        yl, yr, w = sampler.sample(left, right, b, u)
        t = thr[l]
        if w < t - VALIDITY_TOL:
            violations.append((n, l + 1, w, t))
            asserted = False
        climb = u < min(t, w) if asserted else u < t
        success = yl == yr
        if success:
            succ[l] += 1
        else:
            fail[l] += 1
        for i in range(b):
            if n >= N:
                break
            left = (yl[i],) + left[:-1]
            right = (yr[i],) + right[:-1]
            kappa = min(kappa + 1, cap) if yl[i] == yr[i] else 0
            y = y + 1 if climb else (-b if i == 0 else y + 1)
            n += 1
            kap[n], ys[n], ok[n] = kappa, y, asserted
    return CouplingTrace(kap, ys, ok, succ, fail, violations, seed, s)


@dataclass(frozen=True)
class DbarEstimate:
    estimate: float
    band: float  # 3 sigma
    sigma: float
    ceiling: float
    trials: int
    horizon: int
    seed: int
    per_trial: np.ndarray
    dominance_violations: int
    validity_violations: int

    @property
    def within_ceiling(self) -> bool:
        return self.estimate <= self.ceiling + self.band


def _trial(args):
    g, g2, pair, N, seed, s, init, coupling, frac = args
    tr = run_coupling(g, g2, pair, N, seed, s=s, init=init, coupling=coupling)
    return tr.tail_disagreement(frac), tr.dominance_violations, len(tr.validity_violations)


def estimate_dbar(g: GFunction, g2: GFunction, pair: BlockVariationPair, N: int, K: int, seed: int,
                  s: float | None = None, init="adversarial", coupling: str = "maximal",
                  tail_fraction: float = 0.1, workers: int | None = None) -> DbarEstimate:
    """Average tail disagreement frequency over ``K`` trials with seeds ``seed ^ i``.

    The band is three times the larger of the binomial and between-trial
    standard errors; the ceiling is ``delta_bar`` at rates ``r_l + s b_l``.
    """
    if s is None:
        s = 0.0 if g is g2 else sup_log_gap(g, g2)
    jobs = [(g, g2, pair, N, seed ^ i, s, init, coupling, tail_fraction) for i in range(K)]
    workers = default_workers() if workers is None else workers
    if workers > 1 and K > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_trial, jobs))
    else:
        res = [_trial(j) for j in jobs]
    freq = np.array([r[0] for r in res])
    est = float(freq.mean())
    n_tail = max(1, int(round(tail_fraction * N)))
    sig_bin = math.sqrt(max(est * (1 - est), 0.0) / (K * n_tail))
    sig_trial = float(freq.std(ddof=1) / math.sqrt(K)) if K > 1 else 0.0
    sigma = max(sig_bin, sig_trial)
    return DbarEstimate(est, 3 * sigma, sigma, delta_bar(pair.inflated(s)), K, N, seed, freq,
                        int(sum(r[1] for r in res)), int(sum(r[2] for r in res)))


@dataclass(frozen=True)
class AttractorResult:
    distances: np.ndarray  # n = 0..n_max
    resolution: np.ndarray  # 2**-depth of the compared measures


def iterate_attractor(g: TableG, nu1: CylinderMeasure, nu2: CylinderMeasure, n_max: int,
                      max_depth: int | None = None) -> AttractorResult:
    """Ultrametric Wasserstein distance between ``L*^n nu1`` and ``L*^n nu2`` for ``n = 0..n_max``."""
    if not isinstance(g, TableG):
        raise TypeError("iterate_attractor needs a table g-function")
    if nu1.depth != nu2.depth or nu1.size != nu2.size or nu1.size != g.size:
        raise ValueError("initial measures must share alphabet and depth")
    if nu1.depth < g.memory:
        raise ValueError(f"measure depth {nu1.depth} is smaller than memory {g.memory}")
    cap = default_max_depth(g.size) if max_depth is None else max_depth
    cap = max(cap, g.memory)
    m1, m2, depth = nu1.mass, nu2.mass, nu1.depth
    if depth > cap:
        m1, m2, depth = nu1.marginal(cap).mass, nu2.marginal(cap).mass, cap
    dist = [wasserstein_ultra(CylinderMeasure(g.size, depth, m1), CylinderMeasure(g.size, depth, m2))]
    res = [2.0**-depth]
    for _ in range(n_max):
        m1, d1 = _adjoint_step(g, m1, depth, cap)
        m2, _ = _adjoint_step(g, m2, depth, cap)
        depth = d1
        dist.append(wasserstein_ultra(CylinderMeasure(g.size, depth, m1), CylinderMeasure(g.size, depth, m2)))
        res.append(2.0**-depth)
    return AttractorResult(np.array(dist), np.array(res))
