"""Probabilities that independent offer prices fall in a given order.

A pattern is a left-to-right sequence of slots whose values must be
nondecreasing.  Slots are buy draws (``"b"``), sell draws (``"s"``), the
seller's own price (``"p"``, valued at ``rho``) or explicit numeric constants.
Draws are independent and labelled: ``b b`` means ``b1 <= b2``, so the three
draws of ``x x x`` from one distribution line up in order with probability
1/6.

``ordering_probability`` integrates the pattern exactly.  Densities are
uniform, so every iterated integral ``g_k(t) = int_{-inf}^t g_{k-1} f_k`` is a
piecewise polynomial between the distribution bounds and the constants; each
piece is stored in local coordinates on its own interval to keep the
coefficients well scaled.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Sequence, Union

import numpy as np

Slot = Union[str, float]


@dataclass(frozen=True)
class PriceDistribution:
    """Uniform offer-price distribution on ``[lower, upper]``."""

    lower: float
    upper: float
    kind: str = "uniform"

    def __post_init__(self):
        if self.kind != "uniform":
            raise ValueError(f"unsupported distribution kind {self.kind!r}")
        lo, hi = float(self.lower), float(self.upper)
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise ValueError(f"need finite lower < upper, got [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def density(self):
        return 1.0 / (self.upper - self.lower)

    def cdf(self, x):
        """Clamped to {0, 1} outside the support."""
        return np.clip((np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower), 0.0, 1.0)

    def sample(self, rng, size):
        return rng.uniform(self.lower, self.upper, size)

    def key(self):
        return (self.kind, self.lower, self.upper)


class PatternError(ValueError):
    pass


@dataclass(frozen=True)
class OrderingPattern:
    """Nondecreasing sequence of slots; see the module docstring."""

    slots: tuple

    def __post_init__(self):
        slots = []
        for s in self.slots:
            if isinstance(s, str):
                if s not in ("b", "s", "p"):
                    raise PatternError(f"unknown slot tag {s!r}")
                slots.append(s)
            else:
                v = float(s)
                if not np.isfinite(v):
                    raise PatternError("constant slots must be finite")
                slots.append(v)
        if slots.count("p") > 1:
            raise PatternError("at most one rho slot is allowed")
        object.__setattr__(self, "slots", tuple(slots))

    @classmethod
    def parse(cls, text: str) -> "OrderingPattern":
        """``"b b s p"`` or ``"60 s"``; whitespace separated."""
        out = []
        for tok in text.split():
            out.append(tok if tok in ("b", "s", "p") else float(tok))
        return cls(tuple(out))

    @property
    def n_buys(self):
        return self.slots.count("b")

    @property
    def n_sells(self):
        return self.slots.count("s")

    def __len__(self):
        return len(self.slots)

    def __str__(self):
        return " ".join(s if isinstance(s, str) else f"{s:g}" for s in self.slots)

    def refines(self, given: "OrderingPattern") -> bool:
        """True when ``given`` embeds in this pattern as a subsequence."""
        it = iter(self.slots)
        return all(any(_same_slot(g, e) for e in it) for g in given.slots)


def _same_slot(a, b):
    if isinstance(a, str) or isinstance(b, str):
        return a == b
    return float(a) == float(b)


def _as_pattern(p) -> OrderingPattern:
    if isinstance(p, OrderingPattern):
        return p
    if isinstance(p, str):
        return OrderingPattern.parse(p)
    return OrderingPattern(tuple(p))


def ordering_probability(pattern, buy_dist: PriceDistribution,
                         sell_dist: PriceDistribution, rho: float = 0.0) -> float:
    """Probability that independent draws realise ``pattern`` with ``p = rho``."""
    pattern = _as_pattern(pattern)
    uses_rho = "p" in pattern.slots
    return _ordering_cached(pattern.slots, buy_dist.key(), sell_dist.key(),
                            float(rho) if uses_rho else 0.0)


@lru_cache(maxsize=65536)
def _ordering_cached(slots, buy_key, sell_key, rho):
    buy = PriceDistribution(buy_key[1], buy_key[2], buy_key[0])
    sell = PriceDistribution(sell_key[1], sell_key[2], sell_key[0])
    return _integrate(slots, buy, sell, rho)


def _integrate(slots, buy, sell, rho):
    consts = [rho if s == "p" else s for s in slots if not (isinstance(s, str) and s in "bs")]
    xs = sorted({buy.lower, buy.upper, sell.lower, sell.upper, *consts})
    xs = np.array(xs)
    h = np.diff(xs)
    nseg = len(h)
    # g on segment j is sum_k coef[j][k] * u**k with u = (t - xs[j]) / h[j];
    # ``left`` is the value of g below xs[0].
    # ``right`` is the value of g above the last breakpoint.
    right = 1.0
    coefs = [np.array([1.0]) for _ in range(nseg)]
    for slot in slots:
        if slot in ("b", "s"):
            dist = buy if slot == "b" else sell
            lo, hi = dist.lower, dist.upper
            d = dist.density
            new = []
            acc = 0.0  # g_new at the left end of the current segment
            for j in range(nseg):
                inside = xs[j] >= lo and xs[j + 1] <= hi
                if inside:
                    c = coefs[j]
                    integ = np.concatenate(([0.0], c / np.arange(1, len(c) + 1))) * (d * h[j])
                    integ[0] = acc
                    acc = float(integ.sum())
                    new.append(integ)
                else:
                    new.append(np.array([acc]))
            coefs = new
            right = acc
        else:
            c = rho if slot == "p" else slot
            m = int(np.searchsorted(xs, c))
            # right-continuous value of g at the constant
            value = float(coefs[m][0]) if m < nseg else right
            coefs = [np.array([0.0]) if j < m else np.array([value]) for j in range(nseg)]
            right = value
    return min(max(float(right), 0.0), 1.0)


def conditional_ordering_probability(event, given, buy_dist: PriceDistribution,
                                     sell_dist: PriceDistribution, rho: float = 0.0) -> float:
    """``P(event) / P(given)`` where ``event`` refines ``given``; 0/0 is 0."""
    event, given = _as_pattern(event), _as_pattern(given)
    if not event.refines(given):
        raise PatternError(f"event '{event}' does not refine given '{given}'")
    num = ordering_probability(event, buy_dist, sell_dist, rho)
    den = ordering_probability(given, buy_dist, sell_dist, rho)
    if den <= 0.0:
        return 0.0
    return min(max(num / den, 0.0), 1.0)


def mc_oracle(pattern, buy_dist: PriceDistribution, sell_dist: PriceDistribution,
              rho: float = 0.0, n: int = 10**6, seed: int = 0, given=None,
              chunk: int = 250_000):
    """Monte-Carlo frequency of ``pattern`` (conditioned on ``given`` when set)
    and its standard error.  Deterministic for a fixed seed."""
    if n < 10**4:
        raise ValueError("the oracle needs at least 10^4 samples")
    event = _as_pattern(pattern)
    cols = None
    if given is not None:
        given = _as_pattern(given)
        if not event.refines(given):
            raise PatternError(f"event '{event}' does not refine given '{given}'")
        cols = _embedding(event, given)
    rng = np.random.default_rng(seed)
    hits = 0
    base = 0
    left = n
    while left > 0:
        m = min(chunk, left)
        left -= m
        vals = np.empty((m, len(event)))
        for k, slot in enumerate(event.slots):
            if slot == "b":
                vals[:, k] = buy_dist.sample(rng, m)
            elif slot == "s":
                vals[:, k] = sell_dist.sample(rng, m)
            else:
                vals[:, k] = rho if slot == "p" else slot
        ok = _nondecreasing(vals)
        if cols is None:
            hits += int(ok.sum())
            base += m
        else:
            g = _nondecreasing(vals[:, cols])
            hits += int((ok & g).sum())
            base += int(g.sum())
    if base == 0:
        return 0.0, 0.0
    est = hits / base
    return est, float(np.sqrt(max(est * (1 - est), 0.0) / base))


def _nondecreasing(vals):
    if vals.shape[1] < 2:
        return np.ones(vals.shape[0], dtype=bool)
    return np.all(np.diff(vals, axis=1) >= 0, axis=1)


def _embedding(event, given):
    cols, k = [], 0
    for g in given.slots:
        while not _same_slot(g, event.slots[k]):
            k += 1
        cols.append(k)
        k += 1
    return cols


def block_table(buy: PriceDistribution, sell: PriceDistribution, rhos: Sequence[float],
                max_buys: int, max_sells: int) -> np.ndarray:
    """``G[i, a, c] = P(b_1 <= .. <= b_a <= s_1 <= .. <= s_c <= rhos[i])``.

    Evaluated through the order-statistic identity: the top buy sits at ``t``
    with density ``F_b(t)^(a-1) f_b(t) / (a-1)!`` and the ``c`` sells fill
    ``[t, rho]`` with probability ``(F_s(rho) - F_s(t))^c / c!``.  The remaining
    1-D integral is a piecewise polynomial of degree ``a - 1 + c``, integrated
    exactly by Gauss-Legendre on each piece.
    """
    rhos = np.atleast_1d(np.asarray(rhos, dtype=float))
    A, C = max_buys + 1, max_sells + 1
    out = np.zeros((len(rhos), A, C))
    inv_fact_c = np.array([1.0 / factorial(c) for c in range(C)])
    Fs_rho = sell.cdf(rhos)
    out[:, 0, :] = Fs_rho[:, None] ** np.arange(C) * inv_fact_c
    if A == 1:
        return out
    nodes, weights = np.polynomial.legendre.leggauss((A - 2 + C - 1) // 2 + 2)
    inv_fact_a = np.array([1.0 / factorial(a - 1) for a in range(1, A)])
    # pieces of [b_lo, min(rho, b_hi)] split at the sell bounds
    for i, rho in enumerate(rhos):
        top = min(rho, buy.upper)
        if top <= buy.lower:
            continue
        cuts = sorted({buy.lower, top, *(x for x in (sell.lower, sell.upper) if buy.lower < x < top)})
        a_pts = np.array(cuts[:-1])
        b_pts = np.array(cuts[1:])
        half = (b_pts - a_pts) / 2
        t = (a_pts + b_pts)[:, None] / 2 + half[:, None] * nodes[None, :]
        w = (half[:, None] * weights[None, :]).ravel()
        t = t.ravel()
        fb = buy.cdf(t)
        ds = np.clip(Fs_rho[i] - sell.cdf(t), 0.0, None)
        pb = fb[:, None] ** np.arange(A - 1)[None, :] * (buy.density * inv_fact_a)
        ps = ds[:, None] ** np.arange(C)[None, :] * inv_fact_c
        out[i, 1:, :] = np.einsum("n,na,nc->ac", w, pb, ps)
    return out
