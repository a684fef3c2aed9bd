"""Cylinder measures, block marginals and the adjoint transfer operator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .symbolic import GFunction, TableG, all_words, check_word, word_index

MASS_TOL = 1e-9
DEFAULT_MAX_SYMBOLS_LOG2 = 20  # depth cap: 20 binary symbols, fewer for larger alphabets
DENSE_LIMIT = 4096


def default_max_depth(size: int) -> int:
    if size <= 1:
        return DEFAULT_MAX_SYMBOLS_LOG2
    return max(1, int(DEFAULT_MAX_SYMBOLS_LOG2 // np.log2(size)))


@dataclass(frozen=True, eq=False)
class CylinderMeasure:
    """Probability on words of length ``depth``.

    ``mass`` is a flat array of length ``size**depth`` indexed
    lexicographically with the first word coordinate most significant.
    """

    size: int
    depth: int
    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float).ravel().copy()
        if len(m) != self.size**self.depth:
            raise ValueError(f"expected {self.size ** self.depth} masses, got {len(m)}")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("masses must be finite and nonnegative")
        if abs(m.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {m.sum()!r}, not 1")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @classmethod
    def point(cls, word: Sequence[int], size: int) -> "CylinderMeasure":
        w = check_word(word, size)
        m = np.zeros(size ** len(w))
        m[word_index(w, size)] = 1.0
        return cls(size, len(w), m)

    @classmethod
    def from_dict(cls, masses: dict, size: int) -> "CylinderMeasure":
        depths = {len(w) for w in masses}
        if len(depths) != 1:
            raise ValueError("all words must share one length")
        (depth,) = depths
        m = np.zeros(size**depth)
        for w, p in masses.items():
            m[word_index(check_word(w, size), size)] += p
        return cls(size, depth, m)

    @classmethod
    def uniform(cls, size: int, depth: int) -> "CylinderMeasure":
        return cls(size, depth, np.full(size**depth, float(size) ** -depth))

    def words(self) -> np.ndarray:
        return all_words(self.size, self.depth)

    def __getitem__(self, word) -> float:
        return float(self.mass[word_index(check_word(word, self.size), self.size)])

    def as_dict(self) -> dict:
        return {tuple(int(a) for a in w): float(p) for w, p in zip(self.words(), self.mass)}

    def marginal(self, k: int) -> "CylinderMeasure":
        """Law of the first ``k`` coordinates."""
        if not 0 <= k <= self.depth:
            raise ValueError(f"cannot marginalize depth {self.depth} to {k}")
        out = self.mass.reshape(self.size**k, -1).sum(axis=1)
        return type(self)(self.size, k, out)

    def reversed(self) -> "CylinderMeasure":
        """Same masses with every word read backwards."""
        if self.depth < 2:
            return CylinderMeasure(self.size, self.depth, self.mass)
        arr = self.mass.reshape((self.size,) * self.depth).transpose(tuple(range(self.depth - 1, -1, -1)))
        return CylinderMeasure(self.size, self.depth, arr.ravel())


class BlockMarginal(CylinderMeasure):
    """Law of the next ``b`` symbols ``(y1, ..., yb)`` in the order they are prepended.

    After the extension the sequence reads ``(yb, ..., y1, past...)``;
    ``to_prefix_order`` gives the corresponding prefix-ordered measure.
    """

    def to_prefix_order(self) -> CylinderMeasure:
        return self.reversed()


def _block_masses(g: GFunction, pasts: np.ndarray, b: int) -> np.ndarray:
    """Block marginals for a batch of pasts, shape ``(n_pasts, size**b)``."""
    S = g.size
    pasts = np.asarray(pasts, dtype=np.int64)
    n = len(pasts)
    mass = np.ones((n, 1))
    rev = np.zeros((1, 0), dtype=np.int64)  # (y_i, ..., y_1) for each current word
    for _ in range(b):
        k = rev.shape[0]
        hist = np.concatenate(
            [np.broadcast_to(rev[None], (n, k, rev.shape[1])), np.broadcast_to(pasts[:, None, :], (n, k, pasts.shape[1]))],
            axis=2,
        ).reshape(n * k, -1)
        if g.depth < hist.shape[1]:
            hist = hist[:, : max(g.depth, 0)]
        laws = g.next_laws(hist).reshape(n, k, S)
        mass = (mass[:, :, None] * laws).reshape(n, k * S)
        syms = np.tile(np.arange(S, dtype=np.int64), k)[:, None]
        rev = np.concatenate([syms, np.repeat(rev, S, axis=0)], axis=1)
    return mass


def block_marginal(g: GFunction, past: Sequence[int], b: int) -> BlockMarginal:
    """Law of ``b`` symbols appended to ``past``: ``prod_i g(y_i y_{i-1} ... y_1 past)``."""
    if b < 1:
        raise ValueError("block length must be positive")
    p = check_word(past, g.size)
    if isinstance(g, TableG) and len(p) < g.memory:
        raise ValueError(f"past of length {len(p)} too short for memory {g.memory}")
    mass = _block_masses(g, np.array([p], dtype=np.int64).reshape(1, len(p)), b)[0]
    return BlockMarginal(g.size, b, mass)


def _adjoint_step(g: TableG, mass: np.ndarray, depth: int, cap: int) -> tuple[np.ndarray, int]:
    S, m = g.size, g.memory
    cols = g.kernel.reshape(S, S**m)
    new = (cols[:, :, None] * mass.reshape(S**m, -1)[None]).ravel()
    depth += 1
    if depth > cap:
        new = new.reshape(S**cap, -1).sum(axis=1)
        depth = cap
    return new, depth


def adjoint_power(g: GFunction, nu: CylinderMeasure, n: int, max_depth: int | None = None) -> CylinderMeasure:
    """``L*^n nu`` restricted to its first ``min(nu.depth + n, max_depth)`` coordinates.

    Coordinates beyond the cap are marginalized exactly; that is possible
    because ``g`` only reads ``memory`` history symbols.
    """
    if not isinstance(g, TableG):
        raise TypeError("adjoint_power needs a table g-function; use finite_approx first")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if nu.size != g.size:
        raise ValueError("alphabet mismatch")
    if nu.depth < g.memory:
        raise ValueError(f"measure depth {nu.depth} is smaller than memory {g.memory}")
    cap = default_max_depth(g.size) if max_depth is None else max_depth
    if cap < g.memory:
        raise ValueError("depth cap below memory")
    mass, depth = nu.mass, nu.depth
    if depth > cap:
        mass, depth = nu.marginal(cap).mass, cap
    for _ in range(n):
        mass, depth = _adjoint_step(g, mass, depth, cap)
    return CylinderMeasure(g.size, depth, mass)


def transition_matrix(g: TableG) -> np.ndarray:
    """Markov matrix on histories ``(h0..h_{m-1}) -> (a, h0..h_{m-2})``."""
    S, m = g.size, g.memory
    n = S**m
    P = np.zeros((n, n))
    cols = g.columns
    shift = S ** (m - 1)
    for h in range(n):
        for a in range(S):
            P[h, a * shift + h // S] += cols[h, a]
    return P


def stationary_measure(g: GFunction, depth: int | None = None) -> CylinderMeasure:
    """The unique g-measure of a table kernel, on ``depth`` coordinates (default: memory)."""
    if not isinstance(g, TableG):
        raise TypeError("stationary_measure needs a table g-function; iterate adjoint_power instead")
    S, m = g.size, g.memory
    if m == 0:
        pi = np.ones(1)
    else:
        n = S**m
        if n <= DENSE_LIMIT:
            P = transition_matrix(g)
            A = P.T - np.eye(n)
            A[-1, :] = 1.0
            rhs = np.zeros(n)
            rhs[-1] = 1.0
            pi = np.linalg.solve(A, rhs)
        else:
            pi = _stationary_power(g)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
    mu = CylinderMeasure(S, m, pi)
    if depth is None or depth == m:
        return mu
    if depth < m:
        return mu.marginal(depth)
    return adjoint_power(g, mu, depth - m, max_depth=depth)


def _stationary_power(g: TableG, tol: float = 1e-13, max_steps: int = 10**6) -> np.ndarray:
    S, m = g.size, g.memory
    mass = np.full(S**m, float(S) ** -m)
    for _ in range(max_steps):
        new, _ = _adjoint_step(g, mass, m, m)
        if np.abs(new - mass).sum() < tol:
            return new
        mass = new
    raise RuntimeError("power iteration did not converge")
