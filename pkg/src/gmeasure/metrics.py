"""Distances between block laws and the maximal-coupling sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measures import CylinderMeasure
from .symbolic import GFunction, Word, all_words


@dataclass(frozen=True)
class CouplingSample:
    left: Word
    right: Word
    success: bool


@dataclass(frozen=True)
class MetricReport:
    tv: float
    hellinger: float
    success_prob: float


def _masses(eta, eta2) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(eta, CylinderMeasure) and isinstance(eta2, CylinderMeasure):
        if eta.size != eta2.size or eta.depth != eta2.depth:
            raise ValueError(
                f"shape mismatch: (size {eta.size}, depth {eta.depth}) vs (size {eta2.size}, depth {eta2.depth})"
            )
    p = np.asarray(getattr(eta, "mass", eta), dtype=float)
    q = np.asarray(getattr(eta2, "mass", eta2), dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return p, q


def total_variation(eta, eta2) -> float:
    """L1 distance ``sum_w |eta(w) - eta2(w)|``, in ``[0, 2]``."""
    p, q = _masses(eta, eta2)
    return float(np.abs(p - q).sum())


def hellinger_integral(eta, eta2) -> float:
    """``sum_w sqrt(eta(w) eta2(w))``, in ``[0, 1]``."""
    p, q = _masses(eta, eta2)
    # square roots first: the product of two tiny masses underflows long before either root does
    return float(min(np.dot(np.sqrt(p), np.sqrt(q)), 1.0))


def success_probability(eta, eta2) -> float:
    p, q = _masses(eta, eta2)
    return float(np.minimum(p, q).sum())


def metric_report(eta, eta2) -> MetricReport:
    return MetricReport(total_variation(eta, eta2), hellinger_integral(eta, eta2), success_probability(eta, eta2))


def one_step_h(g: GFunction, y: Sequence[int], y2: Sequence[int]) -> float:
    """``-log sum_a sqrt(g(a y) g(a y2))`` for two pasts."""
    p = g.next_law(y)
    q = g.next_law(y2)
    if np.array_equal(p, q):
        return 0.0
    return max(0.0, float(-np.log(np.dot(np.sqrt(p), np.sqrt(q)))))


def f_delta(delta):
    """``delta**-2 (0.5 (1 + e**delta) - e**(delta/2))``, continuous with ``f(0) = 1/8``.

    Uses the identity ``0.5 (1 + e**d) - e**(d/2) = 0.5 (e**(d/2) - 1)**2``.
    """
    d = np.asarray(delta, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(d == 0.0, 0.5, np.expm1(d / 2.0) / np.where(d == 0.0, 1.0, d))
    out = 0.5 * ratio * ratio
    return float(out) if out.ndim == 0 else out


def maximal_coupling_indices(p, q, rng: np.random.Generator, size: int | None = None, u=None):
    """Draw index pairs from a maximal coupling of the laws ``p`` and ``q``.

    With probability ``sum min(p, q)`` both sides share a draw from the
    normalized overlap; otherwise they are drawn independently from the
    normalized residuals, whose supports are disjoint.  ``u`` optionally
    supplies the uniforms deciding success (``u < sum min``).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    overlap = np.minimum(p, q)
    w = overlap.sum()
    scalar = size is None
    n = 1 if scalar else int(size)
    if u is None:
        u = rng.random(n)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    same = u < w
    left = np.empty(n, dtype=np.int64)
    right = np.empty(n, dtype=np.int64)
    k = int(same.sum())
    if k:
        idx = _draw(overlap / w, rng, k)
        left[same] = idx
        right[same] = idx
    if n - k:
        left[~same] = _draw(_residual(p, overlap), rng, n - k)
        right[~same] = _draw(_residual(q, overlap), rng, n - k)
    if scalar:
        return int(left[0]), int(right[0])
    return left, right


def _residual(p, overlap):
    res = np.clip(p - overlap, 0.0, None)
    # u landed in the rounding gap above sum(min): fall back to the overlap
    return res if res.sum() > 0 else overlap


def _draw(prob: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    cdf = np.cumsum(prob)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(prob) - 1)


def sample_maximal_coupling(eta: CylinderMeasure, eta2: CylinderMeasure, rng: np.random.Generator, u=None) -> CouplingSample:
    _masses(eta, eta2)
    i, j = maximal_coupling_indices(eta.mass, eta2.mass, rng, u=u)
    words = all_words(eta.size, eta.depth)
    left = tuple(int(a) for a in words[i])
    right = tuple(int(a) for a in words[j])
    return CouplingSample(left, right, left == right)


def wasserstein_ultra(mu: CylinderMeasure, nu: CylinderMeasure) -> float:
    """Exact W1 on depth-n words for ``d(x, y) = 2**-kappa(x, y)``.

    Tree form: ``sum_{k<n} 2**-(k+1) D_k + 2**-n D_n`` with ``D_k`` the L1
    distance of the depth-``k`` marginals.  Against the full one-sided space
    the value is accurate to ``2**-n``.
    """
    if mu.depth != nu.depth or mu.size != nu.size:
        raise ValueError(f"depth mismatch: {mu.depth} vs {nu.depth}")
    n, S = mu.depth, mu.size
    if n == 0:
        return 0.0
    diff = mu.mass - nu.mass
    total = 0.0
    for k in range(n, 0, -1):
        Dk = float(np.abs(diff).sum())
        total += (2.0**-n if k == n else 2.0 ** -(k + 1)) * Dk
        diff = diff.reshape(S ** (k - 1), S).sum(axis=1)
    return total
