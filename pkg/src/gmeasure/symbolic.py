"""Finite alphabets, one-sided words and g-functions.

Words are tuples of ints. Index 0 is the most recent coordinate of a
one-sided sequence, so ``eval_g(g, (a, x1, x2, ...))`` reads ``a`` as the
newly prepended symbol and ``(x1, x2, ...)`` as its history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit, log_expit

TABLE_FLOOR = 1e-9
NORMALIZATION_TOL = 1e-12

Word = tuple


@dataclass(frozen=True)
class Alphabet:
    """Symbols ``0 .. size-1``."""

    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"alphabet size must be a positive integer, got {self.size!r}")

    def words(self, n: int) -> np.ndarray:
        return all_words(self.size, n)


def all_words(size: int, n: int) -> np.ndarray:
    """All words of length ``n`` as rows, lexicographic with column 0 most significant."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grid = np.indices((size,) * n).reshape(n, -1).T
    return np.ascontiguousarray(grid, dtype=np.int64)


def word_index(word: Sequence[int], size: int) -> int:
    idx = 0
    for a in word:
        idx = idx * size + int(a)
    return idx


def check_word(word: Sequence[int], size: int) -> Word:
    w = tuple(int(a) for a in word)
    for a in w:
        if not 0 <= a < size:
            raise ValueError(f"symbol {a} out of range for alphabet of size {size}")
    return w


class GFunction:
    """Base class for normalized positive kernels on the one-sided shift.

    Subclasses provide ``next_laws``: for a batch of histories, the law of
    the next prepended symbol.  ``depth`` is the number of history symbols
    the kernel reads; ``slack`` bounds ``|log g_model - log g_true|`` coming
    from truncating an infinite-memory family (0 when exact).
    """

    alphabet: Alphabet
    depth: int
    slack: float = 0.0

    @property
    def size(self) -> int:
        return self.alphabet.size

    def next_laws(self, histories: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def next_law(self, history: Sequence[int]) -> np.ndarray:
        h = np.asarray(self._prepare_history(history), dtype=np.int64)[None, :]
        return self.next_laws(h)[0]

    def _prepare_history(self, history: Sequence[int]) -> Word:
        return check_word(history, self.size)

    def __call__(self, word: Sequence[int]) -> float:
        return eval_g(self, word)


@dataclass(frozen=True, eq=False)
class TableG(GFunction):
    """Finite-memory g-function stored as a dense array.

    ``kernel[x0, x1, ..., xm]`` is the probability of the new symbol ``x0``
    after the history ``(x1, ..., xm)``; sums over axis 0 are one.
    """

    alphabet: Alphabet
    memory: int
    kernel: np.ndarray
    floor: float = TABLE_FLOOR
    sup_log_gap: float | None = field(default=None, compare=False)

    def __post_init__(self):
        S, m = self.alphabet.size, self.memory
        k = np.asarray(self.kernel, dtype=float)
        if k.shape != (S,) * (m + 1):
            raise ValueError(f"kernel shape {k.shape} does not match alphabet {S} and memory {m}")
        if not np.all(np.isfinite(k)):
            raise ValueError("kernel has non-finite entries")
        if np.any(k < self.floor):
            raise ValueError(f"kernel entries must be >= {self.floor} (g > 0)")
        sums = k.sum(axis=0)
        if np.max(np.abs(sums - 1.0)) > NORMALIZATION_TOL:
            raise ValueError("kernel columns must sum to one")
        k = k.copy()
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @property
    def depth(self) -> int:
        return self.memory

    @property
    def columns(self) -> np.ndarray:
        """Next-symbol laws, one row per history in lexicographic order."""
        return self.kernel.reshape(self.size, -1).T

    @classmethod
    def from_columns(cls, columns, memory: int | None = None, floor: float = TABLE_FLOOR) -> "TableG":
        cols = np.asarray(columns, dtype=float)
        if cols.ndim != 2:
            raise ValueError("columns must be a 2-d array (histories x symbols)")
        n_hist, S = cols.shape
        if memory is None:
            memory = round(math.log(n_hist, S)) if S > 1 else 0
        if S ** memory != n_hist:
            raise ValueError(f"{n_hist} columns is not {S}**memory")
        kernel = cols.T.reshape((S,) * (memory + 1))
        return cls(Alphabet(S), memory, kernel, floor=floor)

    @classmethod
    def markov(cls, p_one_given_one: float, p_one_given_zero: float) -> "TableG":
        """Binary memory-1 chain from ``P(1|1)`` and ``P(1|0)``."""
        p, q = p_one_given_one, p_one_given_zero
        return cls.from_columns([[1 - q, q], [1 - p, p]], memory=1)

    @classmethod
    def iid(cls, law) -> "TableG":
        return cls.from_columns([list(law)], memory=0)

    def history_index(self, histories: np.ndarray) -> np.ndarray:
        m, S = self.memory, self.size
        if m == 0:
            return np.zeros(len(histories), dtype=np.int64)
        h = np.asarray(histories, dtype=np.int64)[:, :m]
        return h @ (S ** np.arange(m - 1, -1, -1, dtype=np.int64))

    def next_laws(self, histories: np.ndarray) -> np.ndarray:
        histories = np.asarray(histories, dtype=np.int64)
        if histories.shape[1] < self.memory:
            raise ValueError(f"history of length {histories.shape[1]} is shorter than memory {self.memory}")
        return self.columns[self.history_index(histories)]

    def _prepare_history(self, history):
        h = check_word(history, self.size)
        if len(h) < self.memory:
            raise ValueError(f"need at least {self.memory} history symbols, got {len(h)}")
        return h[: self.memory] if self.memory else ()

    def log_kernel(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.kernel)


@dataclass(frozen=True, eq=False)
class LogisticG(GFunction):
    """Binary long-range logistic family.

    ``P(x0 = 1 | past) = sigmoid(bias + sum_k couplings[k-1] * (2 x_k - 1))``
    for ``k = 1..D``.  Coordinates missing from a supplied past, and all
    coordinates beyond ``D``, are filled with symbol 0.  ``tail`` is an upper
    bound on ``sum_{k>D} |theta_k|`` for the infinite model being truncated.
    """

    bias: float
    couplings: np.ndarray
    tail: float = 0.0
    alphabet: Alphabet = Alphabet(2)
    fill: int = 0

    def __post_init__(self):
        th = np.asarray(self.couplings, dtype=float).ravel().copy()
        if not np.all(np.isfinite(th)) or not math.isfinite(self.bias):
            raise ValueError("logistic parameters must be finite")
        if self.tail < 0 or not math.isfinite(self.tail):
            raise ValueError("tail bound must be finite and nonnegative")
        if self.alphabet.size != 2:
            raise ValueError("the logistic family is binary")
        th.setflags(write=False)
        object.__setattr__(self, "couplings", th)

    @property
    def depth(self) -> int:
        return len(self.couplings)

    @property
    def slack(self) -> float:
        return 2.0 * self.tail

    @classmethod
    def power_law(cls, K: float, alpha: float, depth: int, bias: float = 0.0) -> "LogisticG":
        """``theta_k = K k**-alpha`` truncated at ``depth`` with an integral-test tail."""
        if alpha <= 1:
            raise ValueError("power-law couplings need alpha > 1 to be summable")
        k = np.arange(1, depth + 1, dtype=float)
        tail = abs(K) * depth ** (1.0 - alpha) / (alpha - 1.0)
        return cls(bias, K * k ** (-alpha), tail=tail)

    def fields(self, histories: np.ndarray) -> np.ndarray:
        h = np.asarray(histories, dtype=np.int64)
        D = self.depth
        if h.shape[1] >= D:
            h = h[:, :D]
        else:
            pad = np.full((h.shape[0], D - h.shape[1]), self.fill, dtype=np.int64)
            h = np.concatenate([h, pad], axis=1)
        return self.bias + (2 * h - 1) @ self.couplings

    def next_laws(self, histories: np.ndarray) -> np.ndarray:
        F = self.fields(histories)
        return np.stack([expit(-F), expit(F)], axis=1)

    def as_table(self) -> TableG:
        """The depth-D truncated model as an exact memory-D table."""
        S, D = 2, self.depth
        laws = self.next_laws(all_words(S, D))
        t = TableG(Alphabet(S), D, laws.T.reshape((S,) * (D + 1)), floor=0.0)
        object.__setattr__(t, "sup_log_gap", self.slack)
        return t


def eval_g(g: GFunction, past: Sequence[int]) -> float:
    """``g(past)``: probability of ``past[0]`` given the history ``past[1:]``."""
    w = check_word(past, g.size)
    if len(w) < 1:
        raise ValueError("past must contain at least the new symbol")
    return float(g.next_law(w[1:])[w[0]])


class Variation(NamedTuple):
    value: float
    exact: bool


def _log_sigmoid_gap(c: float, R: float) -> float:
    return float(log_expit(c + R) - log_expit(c - R))


def variation(g: GFunction, n: int) -> Variation:
    """``var_n log g``: sup of ``|log g(x) - log g(y)|`` over words agreeing in ``n`` coordinates.

    Tables are enumerated exactly. For the logistic family the sup has a
    closed form (log-sigmoid is monotone and concave), which is exact for the
    truncated model and an upper bound once a positive ``tail`` is present.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if isinstance(g, TableG):
        m, S = g.memory, g.size
        if n >= m + 1:
            return Variation(0.0, True)
        L = g.log_kernel().reshape(S**n, -1)
        return Variation(float(np.max(L.max(axis=1) - L.min(axis=1))), True)
    if isinstance(g, LogisticG):
        th = np.abs(g.couplings)
        if n == 0:
            total = abs(g.bias) + th.sum() + g.tail
            val = _log_sigmoid_gap(0.0, total)
        else:
            A = th[: n - 1].sum()
            R = th[n - 1 :].sum() + g.tail
            val = max(_log_sigmoid_gap(g.bias - A, R), _log_sigmoid_gap(-g.bias - A, R))
        return Variation(max(val, 0.0), g.tail == 0.0)
    raise TypeError(f"unsupported g-function {type(g).__name__}")


def lipschitz_variation_bound(g: LogisticG, n: int) -> float:
    """Cruder bound ``2 sum_{k>=n} |theta_k|`` from the 1-Lipschitz log-sigmoid."""
    th = np.abs(g.couplings)
    total = th[max(n, 1) - 1 :].sum() + g.tail
    if n == 0:
        total += abs(g.bias)
    return 2.0 * float(total)


@dataclass(frozen=True, eq=False)
class VariationSequence:
    """A sequence ``v_0, v_1, ...`` of variations with optional closed-form extension.

    ``decay`` is ``None`` for explicit data (then ``tail_sq`` bounds the sum of
    squares beyond the stored values), ``("power", K, alpha)`` for
    ``K * max(n, 1)**-alpha`` or ``("geometric", v0, ratio)`` for ``v0 * ratio**n``.
    """

    values: np.ndarray
    exact: np.ndarray | None = None
    tail_sq: float = math.inf
    decay: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel().copy()
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("variations must be finite and nonnegative")
        ex = np.ones(len(v), bool) if self.exact is None else np.asarray(self.exact, bool).copy()
        v.setflags(write=False)
        ex.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "exact", ex)

    def __len__(self):
        return len(self.values)

    @classmethod
    def power(cls, K: float, alpha: float, n_terms: int = 0) -> "VariationSequence":
        return cls(_power_terms(K, alpha, n_terms), decay=("power", float(K), float(alpha)))

    @classmethod
    def geometric(cls, v0: float, ratio: float, n_terms: int = 0) -> "VariationSequence":
        if not 0 <= ratio < 1:
            raise ValueError("geometric ratio must lie in [0, 1)")
        return cls(v0 * ratio ** np.arange(n_terms), decay=("geometric", float(v0), float(ratio)))

    def terms(self, n: int) -> np.ndarray:
        """First ``n`` values, generating from the closed form when needed."""
        if n <= len(self.values):
            return self.values[:n]
        if self.decay is None:
            if self.tail_sq == 0.0:
                return np.concatenate([self.values, np.zeros(n - len(self.values))])
            raise ValueError(f"variation data covers {len(self.values)} indices, {n} requested")
        kind, a, b = self.decay
        if kind == "power":
            return _power_terms(a, b, n)
        return a * b ** np.arange(n)

    def square_tail(self, start: int) -> float:
        """Upper bound on ``sum_{n >= start} v_n**2``."""
        if self.decay is None:
            stored = float(np.sum(self.values[start:] ** 2))
            return stored + self.tail_sq
        kind, a, b = self.decay
        if kind == "geometric":
            return a * a * b ** (2 * start) / (1.0 - b * b)
        if 2 * b <= 1:
            return math.inf
        head = a * a if start == 0 else 0.0
        n0 = max(start, 1)
        return head + a * a * (n0 ** (-2 * b) + n0 ** (1 - 2 * b) / (2 * b - 1))


def _power_terms(K, alpha, n):
    n_idx = np.maximum(np.arange(n, dtype=float), 1.0)
    return K * n_idx ** (-alpha)


def variation_sequence(g: GFunction, n_terms: int) -> VariationSequence:
    """Variations felt by pasts agreeing in ``k`` coordinates, ``k = 0..n_terms-1``.

    Prepending a common symbol to two pasts that agree in ``k`` coordinates
    yields words agreeing in ``k + 1``, so entry ``k`` is ``var_{k+1} log g``.
    """
    vals = [variation(g, k + 1) for k in range(n_terms)]
    if isinstance(g, TableG):
        tail_sq = 0.0
    else:
        tail_sq = math.inf
    return VariationSequence(
        np.array([v.value for v in vals]), np.array([v.exact for v in vals], bool), tail_sq=tail_sq
    )


def finite_approx(g: GFunction, N: int, z: Sequence[int] = ()) -> TableG:
    """Memory-``N`` table ``g(x0, ..., xN z)`` with renormalized columns.

    ``result.sup_log_gap`` certifies ``||log g_N - log g||_inf``: the variation
    over words agreeing in ``N + 1`` coordinates, doubled when renormalization
    moved any column, plus the truncation slack of ``g``.
    """
    if N < 0:
        raise ValueError("N must be nonnegative")
    S = g.size
    z = check_word(z, S)
    need = max(g.depth - N, 0)
    if isinstance(g, TableG) and len(z) < need:
        raise ValueError(f"continuation z needs at least {need} symbols")
    hist = all_words(S, N)
    if len(z):
        hist = np.concatenate([hist, np.tile(np.array(z, dtype=np.int64), (len(hist), 1))], axis=1)
    laws = g.next_laws(hist)
    sums = laws.sum(axis=1, keepdims=True)
    renormalized = bool(np.max(np.abs(sums - 1.0)) > 0.0)
    laws = laws / sums
    floor = getattr(g, "floor", TABLE_FLOOR)
    table = TableG(Alphabet(S), N, laws.T.reshape((S,) * (N + 1)), floor=min(floor, TABLE_FLOOR))
    gap = variation(g, N + 1).value
    if renormalized and gap > 0:
        gap *= 2.0
    object.__setattr__(table, "sup_log_gap", gap + g.slack)
    return table


def concordance(x: Sequence[int], y: Sequence[int]) -> int:
    """Length of the longest common prefix of two equal-length words."""
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} != {len(y)}")
    for k, (a, b) in enumerate(zip(x, y)):
        if a != b:
            return k
    return len(x)


def sup_log_gap(g: GFunction, g2: GFunction) -> float:
    """Certified upper bound on ``||log g - log g2||_inf``.

    Exact for pairs of tables; logistic members are compared through their
    truncated tables, inflated by both truncation slacks.
    """
    if g.size != g2.size:
        raise ValueError("alphabet mismatch")
    if isinstance(g, LogisticG) and isinstance(g2, LogisticG):
        D = max(g.depth, g2.depth)
        a = np.zeros(D)
        b = np.zeros(D)
        a[: g.depth] = g.couplings
        b[: g2.depth] = g2.couplings
        # log-sigmoid is 1-Lipschitz in the field
        return float(abs(g.bias - g2.bias) + np.abs(a - b).sum() + g.tail + g2.tail)
    d = max(g.depth, g2.depth)
    if g.size**d > 2**20:
        raise ValueError("pasts too deep to enumerate for an exact sup-log gap")
    hist = all_words(g.size, d)
    with np.errstate(divide="ignore"):
        diff = np.abs(np.log(g.next_laws(hist)) - np.log(g2.next_laws(hist)))
    return float(np.max(diff)) + g.slack + g2.slack
