import random

import pytest
from hypothesis import given, settings, strategies as st

from cda_forge.engine import (ContractViolation, MarketEvent, Offer, OrderBook, ReplayError,
                              Trade, clearing_price, log_header, read_log, replay, write_log)
from oracles import NaiveBook


def test_clearing_price_rules():
    assert clearing_price(80, 70, "seller-price") == 70
    assert clearing_price(80, 70, "buyer-price") == 80
    assert clearing_price(80, 70, "midpoint") == 75
    assert clearing_price(80, 71, "midpoint") == 76   # half rounds up
    with pytest.raises(ContractViolation):
        clearing_price(60, 70)
    with pytest.raises(ContractViolation):
        clearing_price(80, 70, "vickrey")


def test_offer_and_trade_contracts():
    with pytest.raises(ContractViolation):
        Offer(0, "a", "bid", 5, 0)
    with pytest.raises(ContractViolation):
        Offer(0, "a", "buy", -1, 0)
    b, s = Offer(0, "b", "buy", 10, 0), Offer(1, "s", "sell", 8, 0)
    with pytest.raises(ContractViolation):
        Trade(b, s, 11, 0)


def submit(book, agent, side, price, cycle=0):
    return book.replace(book.new_offer(agent, side, price, cycle))


def test_cross_and_stand():
    book = OrderBook()
    assert submit(book, "b1", "buy", 50)[0] == "stood"
    assert book.quote() == 50
    out, ev = submit(book, "s1", "sell", 40)
    assert out == "matched"
    assert [e.kind for e in ev] == ["submitted", "matched", "quote_changed"]
    trade = ev[1].trade
    assert trade.price == 40 and trade.buy_offer.agent == "b1"
    assert book.quote() is None


def test_oldest_at_best_price_is_hit():
    book = OrderBook()
    submit(book, "b1", "buy", 50)
    submit(book, "b2", "buy", 50)
    _, ev = submit(book, "s1", "sell", 45)
    assert ev[1].trade.buy_offer.agent == "b1"


def test_bump_youngest_worst_and_reject_ties():
    book = OrderBook(sell_capacity=2)
    submit(book, "s1", "sell", 60)
    submit(book, "s2", "sell", 60)
    assert submit(book, "s3", "sell", 60)[0] == "rejected"   # must strictly beat the victim
    out, ev = submit(book, "s4", "sell", 55)
    assert out == "bumped"
    assert ev[-1].kind == "bumped" and ev[-1].offer.agent == "s2"
    assert [o.agent for o in book.sells] == ["s4", "s1"]


def test_replace_withdraws_first():
    book = OrderBook()
    submit(book, "s1", "sell", 60)
    out, ev = submit(book, "s1", "sell", 58, cycle=3)
    assert out == "stood"
    assert [e.kind for e in ev] == ["replaced", "submitted", "stood"]
    assert len(book.sells) == 1 and book.sells[0].price == 58
    with pytest.raises(ContractViolation):
        book.submit(book.new_offer("s1", "sell", 57, 4))


def test_constructor_guards():
    with pytest.raises(ValueError):
        OrderBook(buy_capacity=0)
    with pytest.raises(ValueError):
        OrderBook(rule="nope")


def random_stream(rng, n, agents=12, hi=30):
    for _ in range(n):
        side = "buy" if rng.random() < 0.5 else "sell"
        yield f"{side[0]}{rng.randrange(agents)}", side, rng.randint(0, hi)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["seller-price", "buyer-price", "midpoint"]),
       st.integers(1, 5), st.integers(1, 5))
def test_engine_matches_naive_reference(seed, rule, nb, ns):
    rng = random.Random(seed)
    book, ref = OrderBook(nb, ns, rule), NaiveBook(nb, ns, rule)
    for agent, side, price in random_stream(rng, 300):
        offer = book.new_offer(agent, side, price, 0)
        out, ev = book.replace(offer)
        r_out, r_price, r_bumped = ref.submit(offer.id, agent, side, price)
        assert out == r_out
        if out == "matched":
            assert ev[-1 if ev[-1].kind == "matched" else -2].trade.price == r_price
        if out == "bumped":
            assert [e for e in ev if e.kind == "bumped"][0].offer.agent == r_bumped
        assert book.audit() == []
        assert sorted(o.id for o in book.buys) == sorted(o[0] for o in ref.buys)
        assert sorted(o.id for o in book.sells) == sorted(o[0] for o in ref.sells)


def run_random(seed, n, rule="seller-price"):
    rng = random.Random(seed)
    book = OrderBook(5, 5, rule)
    events = []
    for k, (agent, side, price) in enumerate(random_stream(rng, n, agents=20, hi=100)):
        _, ev = book.replace(book.new_offer(agent, side, price, k // 3), value=price)
        events.extend(ev)
    return book, events


def test_log_roundtrip_and_replay(tmp_path):
    book, events = run_random(7, 2000, "midpoint")
    path = tmp_path / "events.jsonl"
    header = log_header(5, 5, "midpoint", {"seed": 7})
    write_log(path, header, events)
    h2, ev2 = read_log(path)
    assert h2 == header and ev2 == events
    final, trades = replay(h2, ev2)
    assert final.snapshot() == book.snapshot()
    assert len(trades) == sum(e.kind == "matched" for e in events)
    for t in trades:
        assert t.sell_offer.price <= t.price <= t.buy_offer.price


def test_replay_detects_tampering(tmp_path):
    _, events = run_random(3, 300)
    i = next(k for k, e in enumerate(events) if e.kind == "matched")
    bad = list(events)
    bad[i] = MarketEvent("stood", bad[i].cycle, offer=bad[i].offer)
    with pytest.raises(ReplayError) as err:
        replay(log_header(), bad)
    assert err.value.line == i + 2


def test_truncated_and_corrupt_logs(tmp_path):
    _, events = run_random(4, 100)
    path = tmp_path / "events.jsonl"
    write_log(path, log_header(), events)
    text = path.read_text()
    (tmp_path / "cut.jsonl").write_text(text[:-7])
    with pytest.raises(ReplayError, match="truncated"):
        read_log(tmp_path / "cut.jsonl")
    lines = text.split("\n")
    lines[5] = "{not json"
    (tmp_path / "bad.jsonl").write_text("\n".join(lines))
    with pytest.raises(ReplayError) as err:
        read_log(tmp_path / "bad.jsonl")
    assert err.value.line == 6
    (tmp_path / "schema.jsonl").write_text('{"schema":"other"}\n')
    with pytest.raises(ReplayError, match="schema"):
        read_log(tmp_path / "schema.jsonl")
