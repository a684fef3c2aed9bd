"""Block structures, block variations and the uniqueness-condition checkers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import expit, log_expit

from .measures import _block_masses
from .symbolic import GFunction, LogisticG, TableG, VariationSequence, all_words, variation_sequence

DEGENERATE_RATE = 1e-15
ENUMERATION_LIMIT = 2**24
EXACT_FIELD_COORDS = 20


@dataclass(frozen=True)
class BlockStructure:
    """Block lengths ``b_1..b_M`` with partial sums ``B_l``."""

    b: tuple

    def __post_init__(self):
        b = tuple(int(x) for x in self.b)
        if any(x < 1 for x in b):
            raise ValueError("block lengths must be positive integers")
        object.__setattr__(self, "b", b)

    def __len__(self):
        return len(self.b)

    @property
    def M(self) -> int:
        return len(self.b)

    @property
    def B(self) -> np.ndarray:
        """``B_1..B_M``."""
        return np.cumsum(np.asarray(self.b, dtype=np.int64))

    @property
    def starts(self) -> np.ndarray:
        """``B_0..B_{M-1}``: the agreement depth at which each level starts."""
        return np.concatenate([[0], self.B[:-1]]).astype(np.int64)


@dataclass(frozen=True)
class BlockVariationPair:
    blocks: BlockStructure
    r: np.ndarray
    provenance: str = "manual"
    s: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).ravel().copy()
        if len(r) != len(self.blocks):
            raise ValueError(f"{len(r)} rates for {len(self.blocks)} blocks")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("rates must be finite and nonnegative")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @classmethod
    def make(cls, b, r, provenance="manual") -> "BlockVariationPair":
        return cls(BlockStructure(tuple(b)), np.asarray(r, dtype=float), provenance)

    @property
    def b(self) -> np.ndarray:
        return np.asarray(self.blocks.b, dtype=float)

    @property
    def degenerate(self) -> bool:
        return bool(np.any(self.r == 0))

    def inflated(self, s: float) -> "BlockVariationPair":
        """Rates ``r_l + s b_l`` for a kernel at sup-log distance ``s``."""
        return BlockVariationPair(self.blocks, self.r + s * self.b, self.provenance)


@dataclass
class ConditionVerdict:
    status: str  # holds_at_horizon | fails | inconclusive
    horizon: int
    witness: dict


def _prefix_weights(r: np.ndarray) -> np.ndarray:
    """``exp(-r_1 - ... - r_{l-1})`` for each level (1 at level 1)."""
    return np.exp(-np.concatenate([[0.0], np.cumsum(r)[:-1]]))


def delta_bar(pair: BlockVariationPair) -> float:
    """Closed-form ceiling on d-bar for a block-variation pair.

    ``(1 + sum b_l e^{-r_1..-r_{l-1}} (1 - e^{-r_l})) / sum b_l e^{-r_1..-r_{l-1}}``.
    """
    if len(pair.blocks) == 0:
        raise ValueError("empty block-variation pair")
    r = np.where(pair.r == 0.0, DEGENERATE_RATE, pair.r)
    b = pair.b
    w = _prefix_weights(r)
    return float((1.0 + np.sum(b * w * -np.expm1(-r))) / np.sum(b * w))


def delta_bar_prefixes(pair: BlockVariationPair) -> np.ndarray:
    """``delta_bar`` of the truncations to levels ``1..M``."""
    r = np.where(pair.r == 0.0, DEGENERATE_RATE, pair.r)
    b = pair.b
    w = _prefix_weights(r)
    return (1.0 + np.cumsum(b * w * -np.expm1(-r))) / np.cumsum(b * w)


def r_from_variations(vars: VariationSequence, blocks: BlockStructure) -> BlockVariationPair:
    """``s_l = sum_{k=B_{l-1}}^{B_l - 1} var_k**2 / 8`` and ``r_l = sqrt(2 s_l) + 2 s_l``."""
    B = blocks.B
    total = int(B[-1]) if len(B) else 0
    try:
        v = vars.terms(total)
    except ValueError as exc:
        raise ValueError(f"insufficient variation data: {exc}") from None
    csum = np.concatenate([[0.0], np.cumsum(v * v)])
    starts = blocks.starts
    s = (csum[B] - csum[starts]) / 8.0
    r = np.sqrt(2.0 * s) + 2.0 * s
    pair = BlockVariationPair(blocks, r, "from_s")
    object.__setattr__(pair, "s", s)
    return pair


# ---------------------------------------------------------------- block variations


@dataclass(frozen=True)
class RhoBlock:
    exact: float | None
    bound_log: float
    bound_sqrt: float
    bound_w: float
    h: float
    certified: bool = True
    w_caveat: str = "bound_w holds only up to a (1 + O(w)) factor"


def rho_bound_log(h: float) -> float:
    """``-log(1 - sqrt(1 - exp(-2h)))``, written to stay finite for large ``h``."""
    return float(2.0 * h + math.log1p(math.sqrt(-math.expm1(-2.0 * h)))) if h > 0 else 0.0


def rho_bound_sqrt(h: float) -> float:
    return math.sqrt(2.0 * h) + 2.0 * h


@lru_cache(maxsize=4096)
def _table_sups(g: TableG, B: int, b: int) -> tuple[float, float]:
    """Exact ``(h^g(B, b), rho^g(B, b))`` for a table by enumerating past pairs."""
    S, m = g.size, g.memory
    if B >= m:
        return 0.0, 0.0
    d = max(B, m)
    G = S ** (d - B)
    W = S**b
    if S**d * G * W > ENUMERATION_LIMIT:
        raise ValueError("too many past pairs to enumerate")
    masses = _block_masses(g, all_words(S, d), b).reshape(S**B, G, W)
    root = np.sqrt(masses)
    H = np.einsum("giw,gjw->gij", root, root)
    h = float(-np.log(min(H.min(), 1.0)))
    succ = np.minimum(masses[:, :, None, :], masses[:, None, :, :]).sum(axis=-1)
    rho = float(-np.log(min(succ.min(), 1.0)))
    return max(h, 0.0), max(rho, 0.0)


def _achievable_fields(g: LogisticG, B: int) -> tuple[np.ndarray, float, bool]:
    """Common field offsets for pasts agreeing in ``B`` coordinates.

    Returns candidate offsets, the half-width of the free part and whether
    the candidates are exact (otherwise they are an interval relaxation).
    """
    th = g.couplings
    fixed = th[: min(B, len(th))]
    R = float(np.abs(th[min(B, len(th)) :]).sum() + g.tail)
    head = fixed[:EXACT_FIELD_COORDS]
    c = np.array([g.bias])
    for t in head:
        c = np.concatenate([c - t, c + t])
    slack = float(np.abs(fixed[EXACT_FIELD_COORDS:]).sum())
    if slack == 0.0:
        return c, R, True
    # remaining fixed coordinates relaxed to an interval around each offset
    lo, hi = c - slack, c + slack
    closest = np.where((lo <= 0) & (hi >= 0), 0.0, np.where(hi < 0, hi, lo))
    return closest, R, False


def _logistic_one_step(g: LogisticG, B: int) -> tuple[float, float, bool]:
    c_all, R, exact = _achievable_fields(g, B)
    c = float(c_all[np.argmin(np.abs(c_all))])
    # both sups sit at the extreme free fields and at the offset closest to 0
    a, b = c + R, c - R
    log_bc = np.logaddexp(0.5 * (log_expit(a) + log_expit(b)), 0.5 * (log_expit(-a) + log_expit(-b)))
    h = max(0.0, float(-log_bc))
    gap = float(expit(a) - expit(b))
    rho = max(0.0, float(-math.log1p(-gap)))
    return h, rho, exact


def _logistic_sups(g: LogisticG, B: int, b: int) -> tuple[float, float | None, bool]:
    if b == 1:
        return _logistic_one_step(g, B)
    D = g.depth
    d = max(B, D)
    if 2**d * 2 ** (d - B) * 2**b <= ENUMERATION_LIMIT:
        h, rho = _table_sups(g.as_table(), B, b)
        eps = b * g.slack
        return h + eps, rho + eps, True
    # subadditivity over single steps; rho left uncomputed
    h = sum(_logistic_one_step(g, k)[0] for k in range(B, B + b))
    return h, None, False


def _sups(g: GFunction, B: int, b: int) -> tuple[float, float | None, bool]:
    if b < 1:
        raise ValueError("block length must be positive")
    if B < 0:
        raise ValueError("B must be nonnegative")
    if isinstance(g, TableG):
        h, rho = _table_sups(g, B, b)
        return h, rho, True
    if isinstance(g, LogisticG):
        return _logistic_sups(g, B, b)
    raise TypeError(f"unsupported g-function {type(g).__name__}")


def h_block(g: GFunction, B: int, b: int) -> float:
    """Hellinger block-variation: sup of ``-log H`` over past pairs agreeing in ``B`` coordinates."""
    return _sups(g, B, b)[0]


def rho_block(g: GFunction, B: int, b: int) -> RhoBlock:
    """Worst-case ``-log`` success probability of a maximal block coupling, with its bounds."""
    h, rho, certified = _sups(g, B, b)
    v = variation_sequence(g, B + b + 1).values
    w = math.sqrt(float(np.sum(v[B : B + b + 1] ** 2)))
    return RhoBlock(rho, rho_bound_log(h), rho_bound_sqrt(h), 0.5 * w, h, certified)


def rates_from_rho(g: GFunction, blocks: BlockStructure, margin: float = 0.0) -> BlockVariationPair:
    """Pair with ``r_l = rho^g(B_{l-1}, b_l) + margin``, the smallest valid rates."""
    r = np.empty(len(blocks))
    mem = g.memory if isinstance(g, TableG) else None
    for i, (B, b) in enumerate(zip(blocks.starts, blocks.b)):
        if mem is not None and B >= mem:
            r[i] = margin
            continue
        rb = rho_block(g, int(B), int(b))
        r[i] = (rb.exact if rb.exact is not None else rb.bound_sqrt) + margin
    return BlockVariationPair(blocks, r, "from_rho")


@dataclass
class ValidityReport:
    rho: np.ndarray
    source: list
    valid: np.ndarray
    l0: int | None  # first level after which every level is valid (1-based)

    @property
    def all_valid(self) -> bool:
        return bool(np.all(self.valid))


def validity_report(g: GFunction, pair: BlockVariationPair) -> ValidityReport:
    """Flag levels with ``r_l >= rho^g(B_{l-1}, b_l)``."""
    rho = np.empty(len(pair.blocks))
    source = []
    mem = g.memory if isinstance(g, TableG) else None
    for i, (B, b) in enumerate(zip(pair.blocks.starts, pair.blocks.b)):
        if mem is not None and B >= mem:
            rho[i], src = 0.0, "exact"
        else:
            rb = rho_block(g, int(B), int(b))
            if rb.exact is not None:
                rho[i], src = rb.exact, "exact"
            else:
                rho[i], src = rb.bound_sqrt, "bound_sqrt"
        source.append(src)
    valid = pair.r >= rho
    bad = np.nonzero(~valid)[0]
    l0 = 1 if len(bad) == 0 else (int(bad[-1]) + 2 if bad[-1] + 1 < len(valid) else None)
    return ValidityReport(rho, source, valid, l0)


# ---------------------------------------------------------------- block construction


def make_blocks(strategy: str, params=None, vars: VariationSequence | None = None, M: int | None = None,
                max_B: int | None = None) -> BlockStructure:
    """Build a block structure.

    ``geometric`` (``params={"c": c}``): ``B_l = ceil(c**l / (c - 1))``.
    ``tail``: ``B_l`` is the first ``B > B_{l-1}`` with ``sum_{n>=B} var_n**2 <= L / 2**l``.
    ``unit``: all ``b_l = 1``.  ``manual`` (``params={"b": [...]}``).
    Generation stops after ``M`` levels or before ``B_l`` exceeds ``max_B``.
    """
    params = params or {}
    if M is None and max_B is None and strategy != "manual":
        raise ValueError("give M or max_B")
    M_lim = M if M is not None else math.inf
    B_lim = max_B if max_B is not None else math.inf
    Bs: list[int] = []
    if strategy == "geometric":
        c = Fraction(str(params["c"])) if not isinstance(params.get("c"), Fraction) else params["c"]
        if c <= 1:
            raise ValueError("geometric blocks need c > 1")
        l = 1
        while len(Bs) < M_lim:
            B = math.ceil(c**l / (c - 1))
            if B > B_lim:
                break
            if Bs and B <= Bs[-1]:
                raise ValueError("geometric blocks failed to increase")
            Bs.append(B)
            l += 1
    elif strategy == "unit":
        n = int(min(M_lim, B_lim))
        Bs = list(range(1, n + 1))
    elif strategy == "tail":
        if vars is None:
            raise ValueError("tail blocks need a variation sequence")
        L = vars.square_tail(0)
        if not math.isfinite(L):
            raise ValueError("tail blocks need square-summable variations")
        prev = 0
        l = 1
        while len(Bs) < M_lim:
            target = L / 2.0**l
            B = _first_below(vars, prev + 1, target)
            if B is None or B > B_lim:
                break
            Bs.append(B)
            prev = B
            l += 1
    elif strategy == "manual":
        b = [int(x) for x in params["b"]]
        return BlockStructure(tuple(b if M is None else b[:M]))
    else:
        raise ValueError(f"unknown block strategy {strategy!r}")
    return BlockStructure(tuple(np.diff([0] + Bs).tolist()))


def _first_below(vars: VariationSequence, lo: int, target: float, rtol: float = 1e-12) -> int | None:
    """Smallest ``B >= lo`` with ``square_tail(B) <= target`` (tails are non-increasing)."""
    ok = lambda B: vars.square_tail(B) <= target * (1.0 + rtol)  # noqa: E731
    if ok(lo):
        return lo
    hi = lo
    step = 1
    while not ok(hi):
        if vars.decay is None and hi >= len(vars):
            return None
        hi = lo + step
        step *= 2
        if hi > 2**62:
            return None
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


# ---------------------------------------------------------------- condition checkers

DIVERGENCE_THRESHOLD = 1e3
DECADE_RATIO_FLOOR = 0.95
CONVERGENCE_TOL = 1e-6


def _series(terms: np.ndarray, tail_bound: float | None = None, threshold: float = DIVERGENCE_THRESHOLD,
            floor: float = DECADE_RATIO_FLOOR) -> dict:
    """Finite-horizon divergence/convergence evidence for a nonnegative series."""
    terms = np.asarray(terms, dtype=float)
    N = len(terms)
    partial = np.cumsum(terms)
    S = float(partial[-1]) if N else 0.0
    out = {"terms": N, "partial_sum": S}
    if S >= threshold:
        out.update(verdict="diverges", method="threshold")
        return out
    if N >= 1000:
        cuts = [N, N // 10, N // 100, N // 1000]
        inc = [float(partial[cuts[i] - 1] - partial[cuts[i + 1] - 1]) for i in range(3)]
        ratios = [inc[i] / inc[i + 1] if inc[i + 1] > 0 else 0.0 for i in range(2)]
        out.update(decade_increments=inc, decade_ratios=ratios)
        if all(r >= floor for r in ratios):
            out.update(verdict="diverges", method="decade_growth")
            return out
    if N >= 4 and terms[N // 2 :].min() > 0 and np.all(np.diff(terms[N // 2 :]) >= -1e-12 * terms[N // 2 :][:-1]):
        out.update(verdict="diverges", method="terms_bounded_below", last_term=float(terms[-1]))
        return out
    if tail_bound is not None and math.isfinite(tail_bound):
        out.update(verdict="converges", method="certified_tail", tail_bound=float(tail_bound),
                   remainder_within_tol=bool(tail_bound < CONVERGENCE_TOL))
        return out
    if N >= 100:
        a, b = N // 10, N
        ta, tb = terms[a - 1], terms[b - 1]
        if tb == 0.0:
            # terms underflowed: decay beyond any power law
            out.update(verdict="converges", method="extrapolated_zero", tail_bound=0.0)
            return out
        if tb > 0 and ta > 0:
            p = math.log(ta / tb) / math.log(b / a)
            out["decay_exponent"] = p
            if p > 1.05:
                out.update(verdict="converges", method="extrapolated_power",
                           tail_bound=float(tb * b / (p - 1.0)))
                return out
    out.update(verdict="undecided", method="none")
    return out


def _vanishing(r: np.ndarray, tol: float) -> dict:
    n = len(r)
    last = r[-max(1, n // 4):]
    first = r[: max(1, n // 4)]
    out = {"r_last": float(r[-1]), "r_tail_max": float(last.max()), "r_tail_mean": float(last.mean())}
    if last.max() <= tol:
        out["vanishing"] = True
    else:
        half = r[n // 2:]
        decreasing = bool(np.all(np.diff(half) <= 0))
        out["vanishing"] = bool(decreasing and last.max() <= 0.5 * first.max())
    return out


def check_conditions(kind: str, vars: VariationSequence | None = None, params: dict | None = None,
                     horizon: int = 10**6, pair: BlockVariationPair | None = None) -> ConditionVerdict:
    """Decide a uniqueness condition at a finite horizon.

    ``square``: ``sum var_n**2 < inf``.  ``berbee_eps``: ``sum exp(-(1/2 + eps)
    (var_1 + ... + var_n)) = inf`` (``params["eps"]``).  ``main``: the block
    condition, ``limsup r_l = 0`` and ``sum b_l exp(-r_1 - ... - r_l) = inf``;
    the variant with exponent through ``r_{l-1}`` is reported alongside.
    """
    params = dict(params or {})
    threshold = params.get("threshold", DIVERGENCE_THRESHOLD)
    floor = params.get("floor", DECADE_RATIO_FLOOR)
    if kind == "square":
        v = vars.terms(horizon + 1)[1:]
        tail = vars.square_tail(horizon + 1) if vars.decay is not None or vars.tail_sq == 0.0 else None
        ev = _series(v * v, tail, threshold, floor)
        if ev["verdict"] == "converges":
            status = "holds_at_horizon"
        elif ev["verdict"] == "diverges":
            status = "fails"
            ev["violated"] = f"sum of squared variations is not finite ({ev['method']}, partial {ev['partial_sum']:.6g})"
        else:
            status = "inconclusive"
        return ConditionVerdict(status, horizon, ev)
    if kind == "berbee_eps":
        eps = float(params.get("eps", 0.1))
        v = vars.terms(horizon + 1)[1:]
        terms = np.exp(-(0.5 + eps) * np.cumsum(v))
        ev = _series(terms, None, threshold, floor)
        ev["eps"] = eps
        if ev["verdict"] == "diverges":
            status = "holds_at_horizon"
        elif ev["verdict"] == "converges":
            status = "fails"
            ev["violated"] = f"sum of exp(-(1/2+eps) S_n) appears finite ({ev['method']})"
        else:
            status = "inconclusive"
        return ConditionVerdict(status, horizon, ev)
    if kind == "main":
        if pair is None:
            strategy = params.get("blocks", "geometric")
            blocks = make_blocks(strategy, params, vars, M=params.get("M"), max_B=params.get("max_B", horizon))
            pair = r_from_variations(vars, blocks)
        r, b = pair.r, pair.b
        cum = np.cumsum(r)
        full_terms = b * np.exp(-cum)
        prefix_terms = b * np.exp(-np.concatenate([[0.0], cum[:-1]]))
        ev_full = _series(full_terms, None, threshold, floor)
        ev_prefix = _series(prefix_terms, None, threshold, floor)
        van = _vanishing(r, params.get("r_tol", 0.05))
        witness = {"levels": len(r), "B_M": int(pair.blocks.B[-1]), "sum_verdict": ev_full["verdict"],
                   "level_sum": ev_full, "prefix_variant": ev_prefix, **van}
        if ev_full["verdict"] == "diverges" and van["vanishing"]:
            status = "holds_at_horizon"
        elif ev_full["verdict"] == "converges":
            status = "fails"
            witness["violated"] = "sum of b_l exp(-r_1 - ... - r_l) appears finite"
        else:
            status = "inconclusive"
        return ConditionVerdict(status, horizon, witness)
    raise ValueError(f"unknown condition kind {kind!r}")
