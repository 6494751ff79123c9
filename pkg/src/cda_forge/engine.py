"""Continuous double auction book: two bounded queues, immediate matching,
bumping, one standing offer per agent and a replayable JSON-lines event log."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

BUY, SELL = "buy", "sell"
RULES = ("seller-price", "buyer-price", "midpoint")
LOG_SCHEMA = "cda-forge/event-log"
LOG_VERSION = 1


class ContractViolation(ValueError):
    pass


class ReplayError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Offer:
    id: int
    agent: str
    side: str
    price: int
    cycle: int

    def __post_init__(self):
        if self.side not in (BUY, SELL):
            raise ContractViolation(f"bad side {self.side!r}")
        if self.price < 0:
            raise ContractViolation(f"negative price {self.price}")

    def to_dict(self):
        return {"id": self.id, "agent": self.agent, "side": self.side,
                "price": self.price, "cycle": self.cycle}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["id"]), str(d["agent"]), d["side"], int(d["price"]), int(d["cycle"]))


@dataclass(frozen=True)
class Trade:
    buy_offer: Offer
    sell_offer: Offer
    price: int
    cycle: int

    def __post_init__(self):
        if not self.sell_offer.price <= self.price <= self.buy_offer.price:
            raise ContractViolation("trade price outside the spread")

    def to_dict(self):
        return {"buy": self.buy_offer.to_dict(), "sell": self.sell_offer.to_dict(),
                "price": self.price, "cycle": self.cycle}


@dataclass(frozen=True)
class MarketEvent:
    """One log entry.

    ``kind`` is one of submitted, replaced, matched, stood, bumped, rejected
    or quote_changed.  ``offer`` is the subject offer (the withdrawn one for
    replaced, the victim for bumped), ``trade`` is set for matched and
    ``quote`` for quote_changed.  Submitted events may carry the submitting
    agent's private value for accounting.
    """

    kind: str
    cycle: int
    offer: Optional[Offer] = None
    trade: Optional[Trade] = None
    quote: Optional[int] = None
    value: Optional[int] = None

    def to_dict(self):
        d = {"kind": self.kind, "cycle": self.cycle}
        if self.offer is not None:
            d["offer"] = self.offer.to_dict()
        if self.trade is not None:
            d["trade"] = self.trade.to_dict()
        if self.kind == "quote_changed":
            d["quote"] = self.quote
        if self.value is not None:
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d):
        offer = Offer.from_dict(d["offer"]) if "offer" in d else None
        trade = None
        if "trade" in d:
            t = d["trade"]
            trade = Trade(Offer.from_dict(t["buy"]), Offer.from_dict(t["sell"]),
                          int(t["price"]), int(t["cycle"]))
        return cls(d["kind"], int(d["cycle"]), offer, trade, d.get("quote"), d.get("value"))


def clearing_price(bid, ask, rule="seller-price"):
    """Transaction price of a crossing pair; midpoint rounds half up."""
    if bid < ask:
        raise ContractViolation(f"bid {bid} below ask {ask}")
    if rule == "seller-price":
        return ask
    if rule == "buyer-price":
        return bid
    if rule == "midpoint":
        return (bid + ask + 1) // 2
    raise ContractViolation(f"unknown clearing rule {rule!r}")


@dataclass
class OrderBook:
    """Standing queues.

    ``sells`` is kept sorted by (price, id) and ``buys`` by (price, -id), so
    the best offer on either side is the oldest at the best price and the
    least competitive one (the bump victim) is the youngest at the worst
    price.
    """

    buy_capacity: int = 5
    sell_capacity: int = 5
    rule: str = "seller-price"
    buys: list = field(default_factory=list)
    sells: list = field(default_factory=list)
    next_id: int = 0

    def __post_init__(self):
        if self.buy_capacity < 1 or self.sell_capacity < 1:
            raise ValueError("capacities must be at least 1")
        if self.rule not in RULES:
            raise ValueError(f"unknown clearing rule {self.rule!r}")
        self._owner = {o.agent: o for o in self.buys + self.sells}

    def quote(self):
        return self.buys[-1].price if self.buys else None

    def standing(self, agent):
        return self._owner.get(agent)

    def new_offer(self, agent, side, price, cycle):
        offer = Offer(self.next_id, agent, side, int(price), int(cycle))
        self.next_id += 1
        return offer

    def withdraw(self, agent):
        old = self._owner.pop(agent, None)
        if old is not None:
            (self.buys if old.side == BUY else self.sells).remove(old)
        return old

    def replace(self, offer, value=None):
        """Withdraw the agent's standing offer (if any), then submit."""
        events = []
        before = self.quote()
        old = self.withdraw(offer.agent)
        if old is not None:
            events.append(MarketEvent("replaced", offer.cycle, offer=old))
        outcome, more = self._submit(offer, value)
        events.extend(more)
        self._quote_event(before, offer.cycle, events)
        return outcome, events

    def submit(self, offer, value=None):
        """Process one incoming offer; returns (outcome, events)."""
        if offer.agent in self._owner:
            raise ContractViolation(f"agent {offer.agent} already has a standing offer")
        before = self.quote()
        outcome, events = self._submit(offer, value)
        self._quote_event(before, offer.cycle, events)
        return outcome, events

    def _quote_event(self, before, cycle, events):
        after = self.quote()
        if after != before:
            events.append(MarketEvent("quote_changed", cycle, quote=after))

    def _submit(self, offer, value):
        events = [MarketEvent("submitted", offer.cycle, offer=offer, value=value)]
        if offer.side == BUY:
            own, other, cap = self.buys, self.sells, self.buy_capacity
            crosses = bool(other) and offer.price >= other[0].price
            best = other[0] if crosses else None
        else:
            own, other, cap = self.sells, self.buys, self.sell_capacity
            crosses = bool(other) and offer.price <= other[-1].price
            best = other[-1] if crosses else None
        if crosses:
            other.remove(best)
            del self._owner[best.agent]
            b, s = (offer, best) if offer.side == BUY else (best, offer)
            trade = Trade(b, s, clearing_price(b.price, s.price, self.rule), offer.cycle)
            events.append(MarketEvent("matched", offer.cycle, offer=offer, trade=trade))
            return "matched", events
        victim = None
        if len(own) >= cap:
            if offer.side == BUY:
                beats = offer.price > own[0].price
                victim = own[0] if beats else None
            else:
                beats = offer.price < own[-1].price
                victim = own[-1] if beats else None
            if victim is None:
                events.append(MarketEvent("rejected", offer.cycle, offer=offer))
                return "rejected", events
            own.remove(victim)
            del self._owner[victim.agent]
        self._insert(offer)
        events.append(MarketEvent("stood", offer.cycle, offer=offer))
        if victim is not None:
            events.append(MarketEvent("bumped", offer.cycle, offer=victim))
            return "bumped", events
        return "stood", events

    def _insert(self, offer):
        if offer.side == BUY:
            key = (offer.price, -offer.id)
            q = self.buys
            i = 0
            while i < len(q) and (q[i].price, -q[i].id) < key:
                i += 1
        else:
            key = (offer.price, offer.id)
            q = self.sells
            i = 0
            while i < len(q) and (q[i].price, q[i].id) < key:
                i += 1
        q.insert(i, offer)
        self._owner[offer.agent] = offer

    def snapshot(self):
        return {"buys": [o.to_dict() for o in self.buys],
                "sells": [o.to_dict() for o in self.sells],
                "next_id": self.next_id}

    def audit(self):
        """List of invariant violations (empty when the book is sound)."""
        bad = []
        if len(self.buys) > self.buy_capacity:
            bad.append("buy queue over capacity")
        if len(self.sells) > self.sell_capacity:
            bad.append("sell queue over capacity")
        if self.buys and self.sells and self.buys[-1].price >= self.sells[0].price:
            bad.append("book crossed")
        if [(o.price, -o.id) for o in self.buys] != sorted((o.price, -o.id) for o in self.buys):
            bad.append("buys out of order")
        if [(o.price, o.id) for o in self.sells] != sorted((o.price, o.id) for o in self.sells):
            bad.append("sells out of order")
        agents = [o.agent for o in self.buys + self.sells]
        if len(agents) != len(set(agents)):
            bad.append("agent with two standing offers")
        if set(agents) != set(self._owner):
            bad.append("owner index out of sync")
        if any(o.side != BUY for o in self.buys) or any(o.side != SELL for o in self.sells):
            bad.append("offer on the wrong side")
        return bad


def dumps_event(event):
    return json.dumps(event.to_dict(), sort_keys=True, separators=(",", ":"))


def log_header(buy_capacity=5, sell_capacity=5, rule="seller-price", meta=None):
    return {"schema": LOG_SCHEMA, "version": LOG_VERSION, "buy_capacity": buy_capacity,
            "sell_capacity": sell_capacity, "rule": rule, "meta": meta or {}}


def write_log(path, header, events):
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for ev in events:
            fh.write(dumps_event(ev) + "\n")


def read_log(path):
    """Returns (header, events); raises ReplayError naming the bad line."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    else:
        raise ReplayError(len(lines), "truncated log (missing final newline)")
    if not lines:
        raise ReplayError(1, "empty log")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ReplayError(1, f"bad header: {exc}") from None
    if header.get("schema") != LOG_SCHEMA or header.get("version") != LOG_VERSION:
        raise ReplayError(1, "unknown log schema")
    events = []
    for n, line in enumerate(lines[1:], start=2):
        try:
            events.append(MarketEvent.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ReplayError(n, f"unreadable event: {exc}") from None
    return header, events


def replay(header, events):
    """Re-run every logged submission through a fresh book.

    The engine's output is compared with the log event by event, so any
    divergence is reported at its line (header is line 1).  Returns the
    final book and the list of trades.
    """
    book = OrderBook(header["buy_capacity"], header["sell_capacity"], header["rule"])
    trades = []
    i = 0
    while i < len(events):
        ev = events[i]
        start = i
        if ev.kind == "replaced":
            i += 1
            if i >= len(events) or events[i].kind != "submitted":
                raise ReplayError(start + 2, "replaced without a following submission")
        elif ev.kind != "submitted":
            raise ReplayError(start + 2, f"unexpected {ev.kind} event")
        sub = events[i]
        _, produced = book.replace(sub.offer, sub.value)
        book.next_id = sub.offer.id + 1
        for k, got in enumerate(produced):
            j = start + k
            if j >= len(events) or events[j] != got:
                raise ReplayError(j + 2, f"replay diverged at {got.kind} event")
            if got.trade is not None:
                trades.append(got.trade)
        i = start + len(produced)
    return book, trades
