"""Agents and the cycle loop that feeds their offers through the book."""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import BUY, OrderBook
from .strategies import Observation, StrategySpec, seller_price, truthful_price


def agent_streams(seed, key):
    """Three independent ``random.Random`` streams (timing, value, strategy)
    for the agent identified by the integer ``key``.  Streams depend only on
    (seed, key), so swapping one agent's strategy leaves the others intact."""
    ss = np.random.SeedSequence(seed, spawn_key=(key,))
    return tuple(random.Random(int(c.generate_state(1, dtype=np.uint64)[0]))
                 for c in ss.spawn(3))


@dataclass
class Agent:
    id: str
    side: str
    spec: StrategySpec
    interval: int
    zone: tuple
    key: int
    seed: int
    pricer: Optional[object] = None  # stateful pricer (p-strategy)
    value: int = 0
    next_due: int = 0
    profit: float = 0.0
    offers: int = 0
    matches: int = 0
    bumps: int = 0
    rejections: int = 0
    offer_log: list = field(default_factory=list)  # [cycle, price, value, profit]

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("offer interval must be >= 1")
        self.t_rng, self.v_rng, self.s_rng = agent_streams(self.seed, self.key)
        self.next_due = self.t_rng.randint(1, self.interval)

    def draw_value(self):
        return self.v_rng.randint(self.zone[0], self.zone[1])

    def schedule(self, cycle):
        self.next_due = cycle + self.t_rng.randint(1, self.interval)


class Market:
    """Single-threaded market instance.

    Every cycle the due agents are shuffled (seeded) and each one submits a
    single offer, which replaces its standing offer and is processed fully
    before the next.  Each offer is for a fresh unit, so the agent draws a new
    private value right before pricing it.
    """

    def __init__(self, agents, seed=0, buy_capacity=5, sell_capacity=5, rule="seller-price",
                 delay_cost=0.0, discounted=False, keep_quotes=True):
        self.agents = list(agents)
        self.by_id = {a.id: a for a in self.agents}
        self._order = {a.id: i for i, a in enumerate(self.agents)}
        self._pricers = [a.pricer for a in self.agents if a.pricer is not None]
        if len(self.by_id) != len(self.agents):
            raise ValueError("duplicate agent ids")
        self.book = OrderBook(buy_capacity, sell_capacity, rule)
        self.cycle = 0
        self.shuffle_rng = agent_streams(seed, 10**6)[0]
        self.events = []
        self.trades = []
        self.quotes = [] if keep_quotes else None
        self.delay_cost = float(delay_cost)
        self.discounted = discounted
        self._due = defaultdict(list)
        self._open = {}  # offer id -> index into the submitter's offer_log
        for a in self.agents:
            self._due[a.next_due].append(a)

    def advance_cycle(self):
        self.cycle += 1
        due = sorted(self._due.pop(self.cycle, []), key=lambda a: self._order[a.id])
        self.shuffle_rng.shuffle(due)
        new = []
        for a in due:
            new.extend(self._act(a))
            a.schedule(self.cycle)
            self._due[a.next_due].append(a)
        if self.quotes is not None:
            self.quotes.append(self.book.quote())
        return new

    def run(self, cycles):
        for _ in range(cycles):
            self.advance_cycle()

    def _act(self, a):
        book = self.book
        a.value = a.draw_value()
        if a.side == BUY:
            price = truthful_price(a.value)
        else:
            mine = book.standing(a.id)
            if a.pricer is not None:
                ns = len(book.sells) - (mine is not None)
                price = a.pricer.price(self.cycle, a.value, book.quote(), len(book.buys), ns)
            else:
                obs = Observation(self.cycle, book.quote(), mine.price if mine else None,
                                  a.value, a.zone[0], a.zone[1], len(book.buys), len(book.sells))
                price = seller_price(a.spec, obs, a.s_rng)
        offer = book.new_offer(a.id, a.side, price, self.cycle)
        a.offers += 1
        self._open[offer.id] = len(a.offer_log)
        a.offer_log.append([self.cycle, price, a.value, 0.0])
        _, events = book.replace(offer, value=a.value)
        for ev in events:
            if ev.kind == "matched":
                self._settle(ev.trade)
            elif ev.kind == "bumped":
                self.by_id[ev.offer.agent].bumps += 1
            elif ev.kind == "rejected":
                a.rejections += 1
        self.events.extend(events)
        for pricer in self._pricers:
            pricer.observe(events)
        return events

    def _settle(self, trade):
        b = self.by_id[trade.buy_offer.agent]
        s = self.by_id[trade.sell_offer.agent]
        bi, si = self._open.pop(trade.buy_offer.id), self._open.pop(trade.sell_offer.id)
        V, C = b.offer_log[bi][2], s.offer_log[si][2]
        bp, sp = V - trade.price, trade.price - C
        if self.discounted:
            bp -= self.delay_cost * (trade.cycle - trade.buy_offer.cycle)
            sp -= self.delay_cost * (trade.cycle - trade.sell_offer.cycle)
        b.offer_log[bi][3] = bp
        s.offer_log[si][3] = sp
        b.profit += bp
        s.profit += sp
        b.matches += 1
        s.matches += 1
        self.trades.append((trade.cycle, b.id, s.id, trade.price, V, C))
