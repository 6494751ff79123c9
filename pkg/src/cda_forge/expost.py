"""Ex-post optimal pricing for one seller over a recorded event log.

At each of the target's offer opportunities the recorded book is restored,
the target's offer is injected at a candidate price and the other agents'
recorded submissions are replayed verbatim (open loop) until the target's
next opportunity.  The best candidate is the one with the highest realized
profit; ties go to the lower price.
"""

from __future__ import annotations

import json
from bisect import insort
from dataclasses import dataclass, field
from typing import Optional

from .engine import BUY, OrderBook, ReplayError, clearing_price, read_log

REPORT_SCHEMA = "cda-forge/opt-report"


@dataclass
class Opportunity:
    index: int           # position of the target's submission in the log
    cycle: int
    cost: int
    price: int           # logged ask
    offer_id: int
    buys: list           # book snapshot before the submission, as offers
    sells: list
    window: list         # other agents' submitted offers until the next opportunity
    end_cycle: int


@dataclass
class ReplayScenario:
    opportunities: list
    target: str
    buy_capacity: int = 5
    sell_capacity: int = 5
    rule: str = "seller-price"
    delay_cost: float = 0.0
    grid: Optional[tuple] = None   # (lo, hi) integer bounds; default per opportunity
    zone_upper: int = 100

    @classmethod
    def from_events(cls, header, events, target, delay_cost=0.0, grid=None, zone_upper=None):
        book = OrderBook(header["buy_capacity"], header["sell_capacity"], header["rule"])
        meta = header.get("meta", {})
        opps, cur = [], None
        for i, ev in enumerate(events):
            if ev.kind != "submitted":
                continue
            off = ev.offer
            if off.agent == target:
                if off.side != "sell":
                    raise ReplayError(i + 2, "target must be a seller")
                if ev.value is None:
                    raise ReplayError(i + 2, "target submission carries no private value")
                if cur is not None:
                    cur.end_cycle = off.cycle
                cur = Opportunity(i, off.cycle, int(ev.value), off.price, off.id,
                                  list(book.buys), list(book.sells), [], off.cycle)
                opps.append(cur)
            elif cur is not None:
                cur.window.append(off)
            book.replace(off, ev.value)
            book.next_id = off.id + 1
        if cur is not None:
            last = max(meta.get("cycles", 0), events[-1].cycle if events else 0)
            cur.end_cycle = last
        cycles = [o.cycle for o in opps]
        if any(b < a for a, b in zip(cycles, cycles[1:])):
            raise ReplayError(1, "target offer cycles are not increasing")
        return cls(opps, target, header["buy_capacity"], header["sell_capacity"],
                   header["rule"], float(delay_cost), grid,
                   int(zone_upper if zone_upper is not None else meta.get("zone_upper", 100)))

    @classmethod
    def from_log(cls, path, target, **kw):
        header, events = read_log(path)
        return cls.from_events(header, events, target, **kw)

    def grid_for(self, k):
        o = self.opportunities[k]
        if self.grid is not None:
            lo, hi = self.grid
        else:
            lo, hi = o.cost, self.zone_upper
        return min(lo, o.price), max(hi, o.price)


def _simulate(opp, rho, target, caps, rule):
    """Fate of the target's ask ``rho``: ('matched', price, cycle), or
    ('gone', None, cycle) when bumped or rejected, or ('open', None, None)."""
    Nb, Ns = caps
    # buys keyed (price, -id), sells keyed (price, id); best buy last, best sell first
    buys = [(o.price, -o.id, o.agent) for o in opp.buys]
    sells = [(o.price, o.id, o.agent) for o in opp.sells]
    own = {o.agent: (BUY, (o.price, -o.id, o.agent)) for o in opp.buys}
    own.update({o.agent: ("sell", (o.price, o.id, o.agent)) for o in opp.sells})

    def withdraw(agent):
        prev = own.pop(agent, None)
        if prev is not None:
            (buys if prev[0] == BUY else sells).remove(prev[1])

    withdraw(target)
    if buys and rho <= buys[-1][0]:
        return "matched", clearing_price(buys[-1][0], rho, rule), opp.cycle
    me = (rho, opp.offer_id, target)
    if len(sells) >= Ns:
        if rho < sells[-1][0]:
            own.pop(sells.pop()[2])
        else:
            return "gone", None, opp.cycle
    insort(sells, me)
    own[target] = ("sell", me)

    for off in opp.window:
        withdraw(off.agent)
        p = off.price
        if off.side == BUY:
            if sells and p >= sells[0][0]:
                hit = sells.pop(0)
                if hit[2] == target:
                    return "matched", clearing_price(p, rho, rule), off.cycle
                del own[hit[2]]
                continue
            key = (p, -off.id, off.agent)
            if len(buys) >= Nb:
                if p > buys[0][0]:
                    del own[buys.pop(0)[2]]
                else:
                    continue
            insort(buys, key)
            own[off.agent] = (BUY, key)
        else:
            if buys and p <= buys[-1][0]:
                del own[buys.pop()[2]]
                continue
            key = (p, off.id, off.agent)
            if len(sells) >= Ns:
                if p < sells[-1][0]:
                    victim = sells.pop()
                    if victim[2] == target:
                        insort(sells, key)
                        return "gone", None, off.cycle
                    del own[victim[2]]
                else:
                    continue
            insort(sells, key)
            own[off.agent] = ("sell", key)
    return "open", None, None


def counterfactual_window(scenario: ReplayScenario, k, price):
    """Realized profit of asking ``price`` at opportunity ``k``."""
    o = scenario.opportunities[k]
    fate, cp, when = _simulate(o, int(price), scenario.target,
                               (scenario.buy_capacity, scenario.sell_capacity), scenario.rule)
    c = scenario.delay_cost
    if fate == "matched":
        return cp - o.cost - c * (when - o.cycle)
    end = when if fate == "gone" else o.end_cycle
    return -c * (end - o.cycle)


def _candidates(scenario, k):
    o = scenario.opportunities[k]
    lo, hi = scenario.grid_for(k)
    if scenario.rule != "seller-price":
        return list(range(lo, hi + 1))
    # the outcome only depends on how the ask compares with the other prices,
    # so it is constant between them; profit rises with the ask inside a run
    vals = {x.price for x in o.buys} | {x.price for x in o.sells} | {x.price for x in o.window}
    cand = {lo, hi, o.price}
    for v in vals:
        cand.update((v - 1, v, v + 1))
    return sorted(x for x in cand if lo <= x <= hi)


def best_price(scenario: ReplayScenario, k):
    """(price, profit) maximizing the window profit; ties go to the lower price."""
    o = scenario.opportunities[k]
    cand = _candidates(scenario, k)
    if scenario.rule == "seller-price" and scenario.delay_cost == 0.0:
        top_buy = max([x.price for x in o.buys] +
                      [x.price for x in o.window if x.side == BUY], default=-1)
        best_p, best_v = None, None
        for p in reversed(cand):
            if p > top_buy:
                v = 0.0  # nothing can ever reach this ask
            else:
                v = counterfactual_window(scenario, k, p)
            if best_v is None or v >= best_v:
                best_p, best_v = p, v
            if v > 0 and v == p - o.cost:
                # a lower ask earns less when it sells and nothing when it does not,
                # so only equal-valued lower prices remain, and none exist
                break
        return best_p, float(best_v)
    vals = [counterfactual_window(scenario, k, p) for p in cand]
    best = max(range(len(cand)), key=lambda i: (vals[i], -cand[i]))
    return cand[best], float(vals[best])


@dataclass
class OptReport:
    target: str
    delay_cost: float
    rule: str
    rows: list = field(default_factory=list)

    @property
    def total(self):
        return float(sum(r["opt_profit"] for r in self.rows))

    @property
    def logged_total(self):
        return float(sum(r["logged_profit"] for r in self.rows))

    def to_json(self):
        return json.dumps({
            "schema": REPORT_SCHEMA, "version": 1,
            "header": {"target": self.target, "delay_cost": self.delay_cost, "rule": self.rule,
                       "counterfactual": "open-loop: other agents' logged offers replayed verbatim"},
            "opportunities": self.rows,
            "total": self.total, "logged_total": self.logged_total,
        }, sort_keys=True, indent=1)


def optimal_profit(scenario: ReplayScenario):
    """Per-opportunity optimum; returns (total, chosen prices, report)."""
    rep = OptReport(scenario.target, scenario.delay_cost, scenario.rule)
    for k, o in enumerate(scenario.opportunities):
        p, v = best_price(scenario, k)
        logged = counterfactual_window(scenario, k, o.price)
        if v < logged:
            raise AssertionError(f"opportunity {k}: optimum {v} below logged profit {logged}")
        rep.rows.append({"cycle": o.cycle, "cost": o.cost, "logged_price": o.price,
                         "logged_profit": float(logged), "opt_price": p, "opt_profit": v})
    return rep.total, [r["opt_price"] for r in rep.rows], rep
