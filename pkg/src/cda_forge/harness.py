"""Experiment configs, single runs, strategy comparisons and population sweeps."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import BUY, SELL, log_header, write_log
from .expost import ReplayScenario, optimal_profit
from .market import Agent, Market
from .ordering import PriceDistribution
from .pstrategy import AuctionBelief, PConfig, PSeller
from .stats import welch_t_test
from .strategies import StrategySpec, parse_label

ZONES = {"narrow": (0, 20), "medium": (0, 50), "wide": (0, 100)}
RATE_INTERVAL = {0.1: 200, 0.4: 50}
SAMPLE_UNIT = "per-offer profit of the target seller (unmatched offers count as 0)"


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SellerGroup:
    spec: StrategySpec
    count: int
    interval: int


@dataclass(frozen=True)
class ExperimentConfig:
    zone: str = "medium"
    buyers: int = 10
    buyer_interval: int = 200
    sellers: tuple = (SellerGroup(StrategySpec("TRUTH"), 9, 200),)
    target: Optional[StrategySpec] = StrategySpec("FM", 5)
    target_interval: int = 200
    cycles: int = 20_000
    seed: int = 0
    rule: str = "seller-price"
    buy_capacity: int = 5
    sell_capacity: int = 5
    delay_cost: float = 0.1          # the p-strategy's per-interval delay cost
    accounting: str = "raw"          # or "discounted"
    p: dict = field(default_factory=dict, hash=False)
    opt: bool = False                # run the ex-post optimizer on the target
    opt_delay_cost: float = 0.0
    rates: Optional[tuple] = None    # nominal (buy, sell) rates, checked when given

    def __post_init__(self):
        validate_config(self)

    @property
    def bounds(self):
        return ZONES[self.zone]

    def nominal_rates(self):
        buy = 2 * self.buyers / self.buyer_interval
        sell = sum(2 * g.count / g.interval for g in self.sellers)
        if self.target is not None:
            sell += 2 / self.target_interval
        return buy, sell

    def to_dict(self):
        d = {
            "zone": self.zone,
            "buyers": {"count": self.buyers, "interval": self.buyer_interval},
            "sellers": [{"strategy": g.spec.to_dict(), "count": g.count, "interval": g.interval}
                        for g in self.sellers],
            "target": None if self.target is None else
            {"strategy": self.target.to_dict(), "interval": self.target_interval},
            "cycles": self.cycles, "seed": self.seed, "rule": self.rule,
            "capacities": [self.buy_capacity, self.sell_capacity],
            "delay_cost": self.delay_cost, "accounting": self.accounting,
            "p": dict(self.p), "opt": self.opt, "opt_delay_cost": self.opt_delay_cost,
        }
        if self.rates is not None:
            d["rates"] = list(self.rates)
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {"zone", "buyers", "sellers", "target", "cycles", "seed", "rule", "capacities",
                 "delay_cost", "accounting", "p", "opt", "opt_delay_cost", "rates"}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown field")
        kw = {}
        for k in ("zone", "rule", "accounting"):
            if k in d:
                if not isinstance(d[k], str):
                    raise ConfigError(k, f"expected a string, got {d[k]!r}")
                kw[k] = d[k]
        for k in ("cycles", "seed"):
            if k in d:
                kw[k] = _int(d[k], k)
        for k in ("delay_cost", "opt_delay_cost"):
            if k in d:
                if isinstance(d[k], bool) or not isinstance(d[k], (int, float)):
                    raise ConfigError(k, f"expected a number, got {d[k]!r}")
                kw[k] = float(d[k])
        if "opt" in d:
            if not isinstance(d["opt"], bool):
                raise ConfigError("opt", f"expected true or false, got {d['opt']!r}")
            kw["opt"] = d["opt"]
        if "buyers" in d:
            b = _obj(d["buyers"], "buyers")
            kw["buyers"] = _int(b.get("count", 10), "buyers.count")
            kw["buyer_interval"] = _int(b.get("interval", 200), "buyers.interval")
        if "sellers" in d:
            if not isinstance(d["sellers"], list):
                raise ConfigError("sellers", "expected a list")
            groups = []
            for i, g in enumerate(d["sellers"]):
                g = _obj(g, f"sellers[{i}]")
                groups.append(SellerGroup(_spec(g.get("strategy", "TRUTH"), f"sellers[{i}].strategy"),
                                          _int(g.get("count", 1), f"sellers[{i}].count"),
                                          _int(g.get("interval", 200), f"sellers[{i}].interval")))
            kw["sellers"] = tuple(groups)
        if "target" in d:
            t = d["target"]
            if t is None:
                kw["target"] = None
            else:
                t = _obj(t, "target")
                kw["target"] = _spec(t.get("strategy", "FM5"), "target.strategy")
                kw["target_interval"] = _int(t.get("interval", 200), "target.interval")
        if "capacities" in d:
            c = d["capacities"]
            if not (isinstance(c, list) and len(c) == 2):
                raise ConfigError("capacities", "expected [buy, sell]")
            kw["buy_capacity"] = _int(c[0], "capacities[0]")
            kw["sell_capacity"] = _int(c[1], "capacities[1]")
        if "p" in d:
            kw["p"] = dict(_obj(d["p"], "p"))
        if "rates" in d:
            r = d["rates"]
            if not (isinstance(r, list) and len(r) == 2):
                raise ConfigError("rates", "expected [buy, sell]")
            kw["rates"] = (float(r[0]), float(r[1]))
        return cls(**kw)


def _obj(x, name):
    if not isinstance(x, dict):
        raise ConfigError(name, "expected an object")
    return x


def _int(x, name):
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(name, f"expected an integer, got {x!r}")
    return x


def _spec(x, name):
    try:
        return StrategySpec.from_dict(x)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(name, str(exc)) from None


def validate_config(cfg: ExperimentConfig):
    if cfg.zone not in ZONES:
        raise ConfigError("zone", f"unknown zone {cfg.zone!r}")
    if cfg.buyers < 0:
        raise ConfigError("buyers.count", "must be >= 0")
    if cfg.buyer_interval < 1:
        raise ConfigError("buyers.interval", "must be >= 1")
    for i, g in enumerate(cfg.sellers):
        if g.count < 0:
            raise ConfigError(f"sellers[{i}].count", "must be >= 0")
        if g.interval < 1:
            raise ConfigError(f"sellers[{i}].interval", "must be >= 1")
        if g.spec.kind == "OPT":
            raise ConfigError(f"sellers[{i}].strategy", "OPT is an offline benchmark")
    if cfg.target is not None:
        if cfg.target_interval < 1:
            raise ConfigError("target.interval", "must be >= 1")
        if cfg.target.kind == "OPT":
            raise ConfigError("target.strategy", "OPT is computed from a log (set opt: true)")
    if cfg.cycles < 1:
        raise ConfigError("cycles", "must be >= 1")
    if cfg.rule not in ("seller-price", "buyer-price", "midpoint"):
        raise ConfigError("rule", f"unknown clearing rule {cfg.rule!r}")
    if cfg.buy_capacity < 1 or cfg.sell_capacity < 1:
        raise ConfigError("capacities", "must be >= 1")
    if not np.isfinite(cfg.delay_cost) or cfg.delay_cost < 0:
        raise ConfigError("delay_cost", "must be finite and >= 0")
    if cfg.accounting not in ("raw", "discounted"):
        raise ConfigError("accounting", "must be 'raw' or 'discounted'")
    if cfg.rates is not None:
        nb, ns = cfg.nominal_rates()
        if abs(nb - cfg.rates[0]) > 1e-9 or abs(ns - cfg.rates[1]) > 1e-9:
            raise ConfigError("rates", f"intervals give rates ({nb:g}, {ns:g}), "
                                       f"not {tuple(cfg.rates)}")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"line {exc.lineno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(d)


def cell_config(zone, buy_rate, sell_rate, target, **kw) -> ExperimentConfig:
    """A base-testbed cell: 10 truthful buyers, 9 true-cost sellers and a target."""
    bi, si = RATE_INTERVAL[buy_rate], RATE_INTERVAL[sell_rate]
    if isinstance(target, str):
        target = parse_label(target)
    background = kw.pop("sellers", (SellerGroup(StrategySpec("TRUTH"), 9, si),))
    return ExperimentConfig(zone=zone, buyers=10, buyer_interval=bi, sellers=tuple(background),
                            target=target, target_interval=si, **kw)


# ---------------------------------------------------------------- single run

@dataclass
class RunMetrics:
    config: ExperimentConfig
    agents: list                 # dicts, one per agent
    trades: list                 # (cycle, buyer, seller, price, V, C)
    quotes: list
    target_offers: list          # [cycle, price, cost, profit] per target offer
    buy_rate: float
    sell_rate: float
    wall_clock: float
    opt: Optional[dict] = None
    unimodal_share: Optional[float] = None

    def agent(self, agent_id):
        return next(a for a in self.agents if a["id"] == agent_id)

    @property
    def target(self):
        return self.agent("target") if self.config.target is not None else None

    def per_offer_profits(self):
        return np.array([r[3] for r in self.target_offers], dtype=float)

    def total_profit(self):
        return float(sum(a["profit"] for a in self.agents))

    def summary(self):
        d = {"config": self.config.to_dict(), "wall_clock": self.wall_clock,
             "trades": len(self.trades), "buy_rate": self.buy_rate, "sell_rate": self.sell_rate,
             "total_profit": self.total_profit(), "sample_unit": SAMPLE_UNIT}
        if self.config.target is not None:
            d["target"] = self.target
        if self.opt is not None:
            d["opt"] = {k: v for k, v in self.opt.items() if k != "rows"}
        if self.unimodal_share is not None:
            d["unimodal_share"] = self.unimodal_share
        return d


def build_agents(cfg: ExperimentConfig, dump=None):
    lo, hi = cfg.bounds
    zone = (lo, hi)
    agents = []
    for i in range(cfg.buyers):
        agents.append(Agent(f"b{i:02d}", BUY, StrategySpec("TRUTH"), cfg.buyer_interval,
                            zone, key=i, seed=cfg.seed))
    j = 0
    sellers = []
    for g in cfg.sellers:
        for _ in range(g.count):
            sellers.append((f"s{j:02d}", g.spec, g.interval, 100 + j))
            j += 1
    if cfg.target is not None:
        sellers.append(("target", cfg.target, cfg.target_interval, 999))
    buy_rate, sell_rate = cfg.nominal_rates()
    for aid, spec, interval, key in sellers:
        pricer = None
        if spec.kind == "P":
            others = sell_rate - 2 / interval
            pb, ps = buy_rate, max(others, 0.0)
            if pb + ps > 1:
                pb, ps = pb / (pb + ps), ps / (pb + ps)
            dist = PriceDistribution(lo, hi + 1)
            prior = AuctionBelief(pb, ps, dist, dist)
            pconf = PConfig.from_dict({"delay_cost": cfg.delay_cost, **cfg.p, **spec.params})
            pricer = PSeller(aid, pconf, prior, hi, cfg.buy_capacity, cfg.sell_capacity,
                             cfg.rule, dump=dump)
        agents.append(Agent(aid, SELL, spec, interval, zone, key=key, seed=cfg.seed,
                            pricer=pricer))
    return agents


def run(cfg: ExperimentConfig, dump=None, keep_quotes=True):
    """Simulate one configuration; returns (metrics, header, events)."""
    t0 = time.perf_counter()
    agents = build_agents(cfg, dump)
    market = Market(agents, seed=cfg.seed, buy_capacity=cfg.buy_capacity,
                    sell_capacity=cfg.sell_capacity, rule=cfg.rule, delay_cost=cfg.delay_cost,
                    discounted=cfg.accounting == "discounted", keep_quotes=keep_quotes)
    market.run(cfg.cycles)
    lo, hi = cfg.bounds
    header = log_header(cfg.buy_capacity, cfg.sell_capacity, cfg.rule,
                        {"cycles": cfg.cycles, "seed": cfg.seed, "zone_upper": hi,
                         "config": cfg.to_dict()})
    rows = []
    for a in agents:
        rows.append({"id": a.id, "side": a.side, "strategy": a.spec.label,
                     "profit": float(a.profit), "offers": a.offers, "matches": a.matches,
                     "bumps": a.bumps, "rejections": a.rejections})
    n_buy = sum(a.offers for a in agents if a.side == BUY)
    n_sell = sum(a.offers for a in agents if a.side == SELL)
    target_offers = []
    unimodal = None
    if cfg.target is not None:
        t = market.by_id["target"]
        target_offers = [list(r) for r in t.offer_log]
        if t.pricer is not None and t.pricer.unimodal:
            unimodal = float(np.mean(t.pricer.unimodal))
    metrics = RunMetrics(cfg, rows, market.trades, market.quotes or [], target_offers,
                         n_buy / cfg.cycles, n_sell / cfg.cycles, 0.0, unimodal_share=unimodal)
    if cfg.opt and cfg.target is not None:
        scen = ReplayScenario.from_events(header, market.events, "target",
                                          delay_cost=cfg.opt_delay_cost, zone_upper=hi)
        total, prices, rep = optimal_profit(scen)
        metrics.opt = {"total": total, "logged_total": rep.logged_total,
                       "opportunities": len(rep.rows),
                       "dominated": all(r["opt_profit"] >= r["logged_profit"] for r in rep.rows),
                       "rows": rep.rows}
    metrics.wall_clock = time.perf_counter() - t0
    return metrics, header, market.events


# ---------------------------------------------------------------- comparisons

def _run_summary(cfg):
    m, _, _ = run(cfg, keep_quotes=False)
    return {"label": cfg.target.label, "seed": cfg.seed, "profit": m.target["profit"],
            "offers": m.target["offers"], "matches": m.target["matches"],
            "per_offer": m.per_offer_profits().tolist(),
            "opt": None if m.opt is None else {k: m.opt[k] for k in
                                                ("total", "logged_total", "opportunities",
                                                 "dominated")},
            "opt_rows_ok": None if m.opt is None else m.opt["dominated"],
            "wall_clock": m.wall_clock}


def default_jobs():
    try:
        return max(1, int(os.environ.get("CDA_FORGE_JOBS", "1")))
    except ValueError:
        return 1


def map_runs(configs, jobs=1):
    if jobs <= 1:
        return [_run_summary(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_run_summary, configs))


def verdict(p_samples, other_samples, other_label, confidence=0.90):
    """'P', the other label, or '?' when the interval straddles zero."""
    res = welch_t_test(other_samples, p_samples, confidence)
    return {"B": "P", "A": other_label}.get(res.better, "?"), res


def majority(verdicts):
    top, n = Counter(verdicts).most_common(1)[0]
    return top if n * 2 > len(verdicts) else "?"


@dataclass
class CellResult:
    zone: str
    rates: tuple
    runs: list                    # run summaries
    verdicts: dict                # label -> list of per-seed verdicts
    majority: dict                # label -> majority verdict
    normalized: dict              # label -> list of per-seed profit / OPT

    def rows(self):
        out = []
        for r in self.runs:
            norm = None
            if r["opt"] and r["opt"]["total"] > 0:
                norm = r["profit"] / r["opt"]["total"]
            out.append({"zone": self.zone, "buy_rate": self.rates[0], "sell_rate": self.rates[1],
                        "strategy": r["label"], "seed": r["seed"], "profit": r["profit"],
                        "offers": r["offers"], "matches": r["matches"],
                        "profit_per_offer": r["profit"] / max(r["offers"], 1),
                        "opt_total": None if not r["opt"] else r["opt"]["total"],
                        "opt_normalized": norm,
                        "verdict_vs_p": "" if r["label"] == "P" else
                        self.verdicts[r["label"]][self._seed_pos(r["seed"])]})
        return out

    def _seed_pos(self, seed):
        seeds = sorted({r["seed"] for r in self.runs})
        return seeds.index(seed)


def compare_cell(zone, rates, targets=("FM5", "RM", "CP5", "P"), seeds=(0, 1, 2, 3, 4),
                 cycles=20_000, opt=True, jobs=1, **kw) -> CellResult:
    """Run every target strategy in the same scenario and test each against P."""
    specs = [parse_label(t) if isinstance(t, str) else t for t in targets]
    if not any(s.kind == "P" for s in specs):
        specs.append(StrategySpec("P"))
    configs = [cell_config(zone, rates[0], rates[1], s, cycles=cycles, seed=seed, opt=opt, **kw)
               for seed in seeds for s in specs]
    runs = map_runs(configs, jobs)
    by = {(r["label"], r["seed"]): r for r in runs}
    verdicts, normalized = {}, {}
    for s in specs:
        normalized[s.label] = [
            (by[(s.label, seed)]["profit"] / by[(s.label, seed)]["opt"]["total"])
            if opt and by[(s.label, seed)]["opt"]["total"] > 0 else None for seed in seeds]
        if s.kind == "P":
            continue
        verdicts[s.label] = [verdict(by[("P", seed)]["per_offer"], by[(s.label, seed)]["per_offer"],
                                     s.label)[0] for seed in seeds]
    return CellResult(zone, tuple(rates), runs, verdicts,
                      {k: majority(v) for k, v in verdicts.items()}, normalized)


def population_sweep(points, zone="medium", rates=(0.4, 0.4), target="CP5", seeds=(0,),
                     cycles=20_000, jobs=1, fm_markup=5, cp_markup=0, **kw):
    """Background mixtures of (FM, CP, P) sellers around one target.

    ``points`` is a list of (n_fm, n_cp, n_p) background counts.  Background
    FM sellers default to markup 5 and background CP sellers to markup 0.  Returns one
    record per (point, seed) with the target's and the whole market's profit.
    """
    si = RATE_INTERVAL[rates[1]]
    out = []
    cfgs = []
    for n_fm, n_cp, n_p in points:
        groups = tuple(g for g in (SellerGroup(StrategySpec("FM", fm_markup), n_fm, si),
                                   SellerGroup(StrategySpec("CP", cp_markup), n_cp, si),
                                   SellerGroup(StrategySpec("P"), n_p, si)) if g.count)
        for seed in seeds:
            cfgs.append(((n_fm, n_cp, n_p), cell_config(zone, rates[0], rates[1], target,
                                                        sellers=groups, cycles=cycles,
                                                        seed=seed, **kw)))
    if jobs <= 1:
        results = [run(c, keep_quotes=False)[0] for _, c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = [r[0] for r in ex.map(_run_quiet, [c for _, c in cfgs])]
    for (pt, c), m in zip(cfgs, results):
        out.append({"fm": pt[0], "cp": pt[1], "p": pt[2], "seed": c.seed,
                    "target": c.target.label, "target_profit": m.target["profit"],
                    "target_offers": m.target["offers"], "total_profit": m.total_profit(),
                    "trade_surplus": float(sum(t[4] - t[5] for t in m.trades)),
                    "trades": len(m.trades)})
    return out


def _run_quiet(cfg):
    m, _, _ = run(cfg, keep_quotes=False)
    return m, None, None


# ---------------------------------------------------------------- outputs

def agents_csv(metrics: RunMetrics) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["id", "side", "strategy", "profit", "offers", "matches",
                                        "bumps", "rejections"], lineterminator="\n")
    w.writeheader()
    for a in metrics.agents:
        w.writerow(a)
    return buf.getvalue()


def series_csv(metrics: RunMetrics) -> str:
    """Plot data: one row per target offer (cycle, ask, cost, profit)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cycle", "price", "cost", "profit"])
    for row in metrics.target_offers:
        w.writerow(row)
    return buf.getvalue()


def rows_csv(rows) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_run(out_dir, metrics, header, events):
    os.makedirs(out_dir, exist_ok=True)
    write_log(os.path.join(out_dir, "events.jsonl"), header, events)
    with open(os.path.join(out_dir, "agents.csv"), "w") as fh:
        fh.write(agents_csv(metrics))
    with open(os.path.join(out_dir, "series.csv"), "w") as fh:
        fh.write(series_csv(metrics))
    summary = metrics.summary()
    summary.pop("wall_clock")  # keeps artifacts byte-identical across reruns
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
