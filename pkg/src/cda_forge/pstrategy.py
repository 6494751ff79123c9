"""Seller that prices by expected utility over an absorbing-chain model of the book.

A transient state ``(nb, k, r)`` says that ``nb`` buys and ``k`` other sells
are standing and that our ask ``rho`` ranks ``r``-th among the ``k + 1`` sells
(1 = lowest).  Standing prices are treated as independent draws conditioned
only on the ordering the state implies::

    b_1 <= .. <= b_nb <= s_1 <= .. <= s_(r-1) <= rho <= s_r <= .. <= s_k

Each clearing interval brings at most one offer: a buy with probability
``p_b``, a sell with probability ``p_s``.  A buy that reaches our ask is
Success; being bumped from a full sell queue (or rejected on entry) is Failure.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import Callable, Optional

import numpy as np

from .chain import AbsorbingChain, RewardSpec, batch_start_outcomes, expected_utility
from .ordering import PriceDistribution, block_table, conditional_ordering_probability

log = logging.getLogger(__name__)

START, SUCCESS, FAILURE = "Start", "S", "F"
DEGENERATE = 1e-300


def enumerate_states(buy_capacity=5, sell_capacity=5):
    """Start, every transient ``(nb, k, r)``, then Success and Failure."""
    if buy_capacity < 1 or sell_capacity < 1:
        raise ValueError("capacities must be at least 1")
    transient = [(nb, k, r)
                 for nb in range(buy_capacity + 1)
                 for k in range(sell_capacity)
                 for r in range(1, k + 2)]
    return [START, *transient, SUCCESS, FAILURE]


@dataclass(frozen=True)
class AuctionBelief:
    p_b: float
    p_s: float
    buy_dist: PriceDistribution
    sell_dist: PriceDistribution
    quote: Optional[int] = None

    def __post_init__(self):
        if self.p_b < 0 or self.p_s < 0 or self.p_b + self.p_s > 1 + 1e-12:
            raise ValueError(f"need p_b, p_s >= 0 and p_b + p_s <= 1, got {self.p_b}, {self.p_s}")

    def key(self):
        return (self.p_b, self.p_s, self.buy_dist.key(), self.sell_dist.key(), self.quote)

    def with_quote(self, quote):
        return AuctionBelief(self.p_b, self.p_s, self.buy_dist, self.sell_dist, quote)

    def to_dict(self):
        return {"p_b": self.p_b, "p_s": self.p_s,
                "buy": [self.buy_dist.lower, self.buy_dist.upper],
                "sell": [self.sell_dist.lower, self.sell_dist.upper],
                "quote": self.quote}


@dataclass(frozen=True)
class SellerContext:
    cost: int
    delay_cost: float = 0.1
    grid_upper: int = 100
    buy_capacity: int = 5
    sell_capacity: int = 5
    utility: Optional[Callable[[float], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.delay_cost) or self.delay_cost < 0:
            raise ValueError("delay cost must be finite and >= 0")
        if self.cost > self.grid_upper:
            raise ValueError("cost above the price grid")

    def grid(self, quote=None):
        prices = set(range(int(self.cost), int(self.grid_upper) + 1))
        if quote is not None and quote >= self.cost:
            prices.add(int(quote))
        return np.array(sorted(prices))


# ---------------------------------------------------------------- single price

def initial_distribution(rho, belief: AuctionBelief, nb=0, ns=0, sell_capacity=5):
    """Distribution of the first state once our ask ``rho`` is submitted.

    Returns a dict state -> probability.  The rank of ``rho`` among the ``ns``
    standing sells uses the sells' conditional law given that all of them sit
    above the quote.
    """
    q = belief.quote
    if q is not None and rho <= q:
        return {SUCCESS: 1.0}
    sd = belief.sell_dist
    head = () if q is None or sd.cdf(q) >= 1.0 else (float(q),)
    given = head + ("s",) * ns
    out = {}
    for j in range(ns + 1):
        event = head + ("s",) * j + ("p",) + ("s",) * (ns - j)
        w = conditional_ordering_probability(event, given, belief.buy_dist, sd, rho)
        if ns == 0:
            w = 1.0
        if w <= 0.0:
            continue
        if ns < sell_capacity:
            target = (nb, ns, j + 1)
        elif j < ns:
            target = (nb, ns - 1, j + 1)  # highest other sell is bumped
        else:
            target = FAILURE  # rejected from a full queue
        out[target] = out.get(target, 0.0) + w
    return out


def build_chain(rho, belief: AuctionBelief, context: SellerContext, nb=0, ns=0) -> AbsorbingChain:
    P = _transition_stack(np.array([float(rho)]), belief, context, nb, ns)[0]
    states = enumerate_states(context.buy_capacity, context.sell_capacity)
    return AbsorbingChain(tuple(states), (SUCCESS, FAILURE), P, start=0,
                          success=SUCCESS, failure=FAILURE)


def evaluate_offer(rho, belief: AuctionBelief, context: SellerContext, nb=0, ns=0, method="fast"):
    """Expected utility of asking ``rho`` (clearing at the ask)."""
    U = context.utility or (lambda x: x)
    if belief.quote is not None and rho <= belief.quote:
        return float(U(rho - context.cost))
    chain = build_chain(rho, belief, context, nb, ns)
    rewards = RewardSpec(context.delay_cost, free_states=(START,))
    return expected_utility(chain, rho - context.cost, 0.0, rewards, context.utility, method)


# ---------------------------------------------------------------- batched over prices

def _transition_stack(rhos, belief, context, nb0, ns0):
    """Transition matrices for every price in ``rhos``, shape (G, n, n)."""
    Nb, Ns = context.buy_capacity, context.sell_capacity
    states = enumerate_states(Nb, Ns)
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)
    iS, iF = idx[SUCCESS], idx[FAILURE]
    Gn = len(rhos)
    P = np.zeros((Gn, n, n))
    P[:, iS, iS] = 1.0
    P[:, iF, iF] = 1.0

    bd, sd = belief.buy_dist, belief.sell_dist
    pb, ps = belief.p_b, belief.p_s
    G = block_table(bd, sd, rhos, Nb + 1, Ns)
    Fb = bd.cdf(rhos)
    Fs = sd.cdf(rhos)
    above = 1.0 - Fs
    stay = 1.0 - pb - ps

    for (nb, k, r) in states[1:-2]:
        i = idx[(nb, k, r)]
        D = G[:, nb, r - 1]
        tail = above ** (k - r + 1)
        ok = D * tail > DEGENERATE
        Dsafe = np.where(ok, D, 1.0)
        row = np.zeros((Gn, n))
        row[:, i] += stay

        # buy arrival
        if r == 1:
            cross, standp = 1.0 - Fb, Fb
            row[:, iS] += pb * cross
        else:
            standp = np.clip((nb + 1) * G[:, nb + 1, r - 1] / Dsafe, 0.0, 1.0)
            row[:, idx[(nb, k - 1, r - 1)]] += pb * (1.0 - standp)
        j = idx[(nb + 1, k, r)] if nb < Nb else i
        row[:, j] += pb * standp

        # sell arrival: below rho, above rho, or onto the highest buy
        a = above
        if nb == 0:
            lam = 1.0 - a
            m = np.zeros(Gn)
        else:
            lam = np.clip(r * G[:, nb, r] / Dsafe, 0.0, 1.0 - a)
            m = np.clip(1.0 - lam - a, 0.0, 1.0)
            row[:, idx[(nb - 1, k, r)]] += ps * m
        if k + 1 < Ns:
            row[:, idx[(nb, k + 1, r + 1)]] += ps * lam
            row[:, idx[(nb, k + 1, r)]] += ps * a
        elif r == k + 1:
            row[:, iF] += ps * lam
            row[:, i] += ps * a
        else:
            row[:, idx[(nb, k, r + 1)]] += ps * lam
            row[:, i] += ps * a

        row[~ok] = 0.0
        row[~ok, iF] = 1.0
        P[:, i, :] = row

    _route_stuck(P, iS, iF)
    P[:, 0, :] = _start_rows(rhos, belief, Nb, Ns, nb0, ns0, idx, n)
    return P


def _start_rows(rhos, belief, Nb, Ns, nb0, ns0, idx, n):
    nb0 = min(max(int(nb0), 0), Nb)
    ns0 = min(max(int(ns0), 0), Ns)
    sd = belief.sell_dist
    q = belief.quote
    Fs = sd.cdf(rhos)
    if q is not None and sd.cdf(q) < 1.0:
        Fq = float(sd.cdf(q))
        pi = np.clip((Fs - Fq) / (1.0 - Fq), 0.0, 1.0)
    else:
        pi = Fs
    rows = np.zeros((len(rhos), n))
    for j in range(ns0 + 1):
        w = comb(ns0, j) * pi ** j * (1.0 - pi) ** (ns0 - j)
        if ns0 < Ns:
            t = idx[(nb0, ns0, j + 1)]
        elif j < ns0:
            t = idx[(nb0, ns0 - 1, j + 1)]
        else:
            t = idx[FAILURE]
        rows[:, t] += w
    if q is not None:
        sure = rhos <= q
        rows[sure] = 0.0
        rows[sure, idx[SUCCESS]] = 1.0
    return rows


def _route_stuck(P, iS, iF):
    """Send transient states that can never be absorbed straight to Failure."""
    n = P.shape[1]
    trans = np.ones(n, dtype=bool)
    trans[[iS, iF]] = False
    trans[0] = False  # Start is handled separately
    pos = P > 0
    reach = pos[:, :, iS] | pos[:, :, iF]
    for _ in range(n):
        new = reach | (np.einsum("gij,gj->gi", pos, reach.astype(float)) > 0)
        if np.array_equal(new, reach):
            break
        reach = new
    stuck = ~reach & trans[None, :]
    if stuck.any():
        g, i = np.nonzero(stuck)
        P[g, i, :] = 0.0
        P[g, i, iF] = 1.0


@dataclass
class DecisionTable:
    prices: np.ndarray
    utility: np.ndarray
    p_success: np.ndarray
    td_success: np.ndarray
    td_failure: np.ndarray

    @property
    def unimodal(self):
        """True when the utility rises then falls along the grid (ties allowed)."""
        d = np.sign(np.round(np.diff(self.utility), 12))
        d = d[d != 0]
        return bool(np.all(np.diff(d) <= 0))

    def to_dict(self):
        return {"prices": self.prices.tolist(), "utility": self.utility.tolist(),
                "p_success": self.p_success.tolist(),
                "td_success": [None if np.isnan(x) else x for x in self.td_success.tolist()],
                "td_failure": [None if np.isnan(x) else x for x in self.td_failure.tolist()],
                "unimodal": self.unimodal}


def evaluate_grid(prices, belief: AuctionBelief, context: SellerContext, nb=0, ns=0) -> DecisionTable:
    prices = np.asarray(prices)
    U = context.utility or (lambda x: x)
    C, c = context.cost, context.delay_cost
    n_p = len(prices)
    ps_out = np.ones(n_p)
    tdS = np.zeros(n_p)
    tdF = np.full(n_p, np.nan)
    util = np.array([U(p - C) for p in prices], dtype=float)
    q = belief.quote
    open_ = np.ones(n_p, dtype=bool) if q is None else prices > q
    if open_.any():
        rhos = prices[open_].astype(float)
        P = _transition_stack(rhos, belief, context, nb, ns)
        m = P.shape[1] - 2  # Start and transients come first
        step = np.full(m, float(c))
        step[0] = 0.0
        prob, td = batch_start_outcomes(P[:, :m, :m], P[:, :m, m:], 0, step)
        pS, pF = prob[:, 0], prob[:, 1]
        tS, tF = td[:, 0], td[:, 1]
        hitS, hitF = pS > 1e-12, pF > 1e-12
        if context.utility is None:
            u = (np.where(hitS, pS * (rhos - C - np.nan_to_num(tS)), 0.0)
                 + np.where(hitF, pF * -np.nan_to_num(tF), 0.0))
        else:
            u = np.zeros(len(rhos))
            for g in range(len(rhos)):
                if hitS[g]:
                    u[g] += pS[g] * U(rhos[g] - C - tS[g])
                if hitF[g]:
                    u[g] += pF[g] * U(-tF[g])
        util[open_] = u
        ps_out[open_] = pS
        tdS[open_] = tS
        tdF[open_] = tF
    return DecisionTable(prices, util, ps_out, tdS, tdF)


def best_offer(belief: AuctionBelief, context: SellerContext, nb=0, ns=0, prices=None):
    """Grid argmax of expected utility; ties go to the lower price."""
    prices = context.grid(belief.quote) if prices is None else np.asarray(sorted(prices))
    if len(prices) == 0:
        raise ValueError("empty price grid")
    table = evaluate_grid(prices, belief, context, nb, ns)
    best = int(np.argmax(table.utility))
    return int(table.prices[best]), float(table.utility[best]), table


@lru_cache(maxsize=4096)
def _cached_best(belief, cost, delay_cost, grid_upper, Nb, Ns, nb, ns):
    ctx = SellerContext(cost, delay_cost, grid_upper, Nb, Ns)
    return best_offer(belief, ctx, nb, ns)


# ---------------------------------------------------------------- belief estimation

@dataclass
class BeliefEstimator:
    """Sliding-window estimate of arrival rates and price ranges.

    Rates are submissions per cycle over the window; price laws are uniform
    on ``[min, max + 1]`` of the windowed prices, which matches integer prices
    drawn uniformly from ``{min, .., max}``.  A side with fewer than
    ``min_samples`` observations falls back to the prior.
    """

    prior: AuctionBelief
    window: int = 500
    min_samples: int = 10
    start_cycle: int = 0
    buys: deque = field(default_factory=deque)
    sells: deque = field(default_factory=deque)

    def observe(self, cycle, side, price):
        (self.buys if side == "buy" else self.sells).append((cycle, price))

    def _trim(self, cycle):
        lo = cycle - self.window
        for q in (self.buys, self.sells):
            while q and q[0][0] <= lo:
                q.popleft()

    def estimate(self, cycle, quote=None) -> AuctionBelief:
        self._trim(cycle)
        span = max(1, min(self.window, cycle - self.start_cycle))
        pb, bd = self._side(self.buys, span, self.prior.p_b, self.prior.buy_dist)
        ps, sd = self._side(self.sells, span, self.prior.p_s, self.prior.sell_dist)
        tot = pb + ps
        if tot > 1.0:
            pb, ps = pb / tot, ps / tot
        return AuctionBelief(pb, ps, bd, sd, quote)

    def _side(self, q, span, prior_rate, prior_dist):
        if len(q) < self.min_samples:
            return prior_rate, prior_dist
        prices = [p for _, p in q]
        return len(q) / span, PriceDistribution(min(prices), max(prices) + 1)


def update_belief(estimator: BeliefEstimator, events, cycle, quote=None, exclude=()):
    """Feed submitted events into the estimator and return the new belief."""
    for ev in events:
        if ev.kind == "submitted" and ev.offer.agent not in exclude:
            estimator.observe(ev.cycle, ev.offer.side, ev.offer.price)
    return estimator.estimate(cycle, quote)


# ---------------------------------------------------------------- agent glue

@dataclass(frozen=True)
class PConfig:
    delay_cost: float = 0.1
    window: int = 500
    min_samples: int = 10
    oracle: bool = False

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in ("delay_cost", "window", "min_samples", "oracle") if k in d}
        return cls(**known)


class PSeller:
    """Stateful wrapper the market drives: observes events, prices on demand."""

    def __init__(self, agent_id, config: PConfig, prior: AuctionBelief, zone_upper,
                 buy_capacity=5, sell_capacity=5, clearing_rule="seller-price", dump=None):
        self.agent = agent_id
        self.config = config
        self.prior = prior
        self.zone_upper = zone_upper
        self.caps = (buy_capacity, sell_capacity)
        self.estimator = BeliefEstimator(prior, config.window, config.min_samples)
        self.dump = dump
        self.unimodal = []
        if clearing_rule != "seller-price":
            log.warning("p-strategy assumes the clearing price equals its ask; engine rule is %s",
                        clearing_rule)

    def observe(self, events):
        if self.config.oracle:
            return
        for ev in events:
            if ev.kind == "submitted" and ev.offer.agent != self.agent:
                self.estimator.observe(ev.cycle, ev.offer.side, ev.offer.price)

    def belief(self, cycle, quote):
        if self.config.oracle:
            return self.prior.with_quote(quote)
        return self.estimator.estimate(cycle, quote)

    def price(self, cycle, cost, quote, nb, ns):
        b = self.belief(cycle, quote)
        Nb, Ns = self.caps
        price, util, table = _cached_best(b, int(cost), float(self.config.delay_cost),
                                          int(self.zone_upper), Nb, Ns,
                                          min(nb, Nb), min(ns, Ns))
        self.unimodal.append(table.unimodal)
        if self.dump is not None:
            rec = {"agent": self.agent, "cycle": cycle, "cost": int(cost), "nb": nb, "ns": ns,
                   "belief": b.to_dict(), "price": price, "utility": util,
                   "table": table.to_dict()}
            self.dump.write(json.dumps(rec, sort_keys=True) + "\n")
        return price
