import glob
import json
import os

import pytest

from cda_forge.harness import (ConfigError, ExperimentConfig, SellerGroup, cell_config,
                               compare_cell, load_config, majority, population_sweep, run,
                               verdict)
from cda_forge.strategies import StrategySpec

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def test_shipped_configs_load():
    paths = sorted(glob.glob(os.path.join(ROOT, "configs", "*_*.json")))
    cells = [p for p in paths if "sweep" not in p]
    assert len(cells) == 12
    for p in cells:
        cfg = load_config(p)
        assert cfg.target.label == "P" and cfg.opt


@pytest.mark.parametrize("doc,field", [
    ({"buyers": {"count": 10, "interval": 0}}, "buyers.interval"),
    ({"sellers": [{"strategy": "FM5", "count": 2, "interval": -3}]}, "sellers[0].interval"),
    ({"sellers": [{"strategy": "ZZ", "count": 2, "interval": 50}]}, "sellers[0].strategy"),
    ({"zone": "tiny"}, "zone"),
    ({"colour": "red"}, "colour"),
    ({"target": {"strategy": "OPT"}}, "target.strategy"),
    ({"rates": [0.4, 0.4]}, "rates"),
    ({"cycles": 1.5}, "cycles"),
])
def test_config_errors_name_the_field(doc, field):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(doc)
    assert err.value.field == field


def test_config_roundtrip():
    cfg = cell_config("wide", 0.1, 0.4, "CP5", cycles=500, seed=3, rates=(0.1, 0.4))
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.nominal_rates() == pytest.approx((0.1, 0.4))


def test_determinism():
    cfg = cell_config("medium", 0.4, 0.4, "P", cycles=1500, seed=11)
    a, _, ev_a = run(cfg)
    b, _, ev_b = run(cfg)
    assert a.trades == b.trades and ev_a == ev_b
    c, _, _ = run(cell_config("medium", 0.4, 0.4, "P", cycles=1500, seed=12))
    assert c.trades != a.trades


def test_swapping_the_target_leaves_other_agents_streams_alone():
    def buyer_offers(label):
        _, _, events = run(cell_config("medium", 0.4, 0.1, label, cycles=2000, seed=5))
        return [(e.cycle, e.offer.agent, e.value) for e in events
                if e.kind == "submitted" and e.offer.agent != "target"]
    assert buyer_offers("FM5") == buyer_offers("RM") == buyer_offers("CP5")


def test_conservation_with_zero_delay_cost():
    cfg = cell_config("narrow", 0.4, 0.4, "CP5", cycles=4000, delay_cost=0.0,
                      accounting="discounted")
    m, _, _ = run(cfg)
    assert m.total_profit() == pytest.approx(sum(t[4] - t[5] for t in m.trades))


def test_zero_buyers_means_no_trades():
    cfg = ExperimentConfig(buyers=0, cycles=2000, delay_cost=0.0)
    m, _, _ = run(cfg)
    assert m.trades == [] and all(a["profit"] == 0 for a in m.agents)


def test_verdict_and_majority():
    assert verdict([5.0, 6, 7, 5, 6], [1.0, 2, 1, 2, 1], "FM5")[0] == "P"
    assert verdict([1.0, 2, 1, 2, 1], [5.0, 6, 7, 5, 6], "FM5")[0] == "FM5"
    assert majority(["P", "P", "?", "FM5", "P"]) == "P"
    assert majority(["P", "P", "?", "?", "FM5"]) == "?"


def test_compare_cell_small():
    res = compare_cell("narrow", (0.4, 0.4), ["FM5", "RM"], seeds=(0, 1), cycles=1500, opt=True)
    assert set(res.verdicts) == {"FM5", "RM"}
    assert set(res.normalized) == {"FM5", "RM", "P"}
    rows = res.rows()
    assert len(rows) == 6
    assert all(r["opt_total"] >= r["profit"] for r in rows)


def test_population_sweep_endpoints():
    rows = population_sweep([(0, 0, 0), (0, 3, 0)], zone="medium", rates=(0.4, 0.4),
                            target="CP5", seeds=(0,), cycles=1500)
    assert [(r["fm"], r["cp"], r["p"]) for r in rows] == [(0, 0, 0), (0, 3, 0)]
    for r in rows:
        assert r["target"] == "CP5" and r["trades"] > 0
        assert r["total_profit"] == pytest.approx(r["trade_surplus"])


def test_seller_groups_in_config():
    cfg = ExperimentConfig(sellers=(SellerGroup(StrategySpec("FM", 5), 3, 50),
                                    SellerGroup(StrategySpec("TRUTH"), 2, 200)), cycles=500)
    m, _, _ = run(cfg)
    labels = [a["strategy"] for a in m.agents if a["side"] == "sell"]
    assert labels == ["FM5"] * 3 + ["TRUTH"] * 2 + ["FM5"]
