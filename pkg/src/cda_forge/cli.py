"""Command line: run, compare, sweep, opt and report.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import json
import os
import sys

from .engine import ReplayError
from .harness import (ConfigError, compare_cell, default_jobs, load_config, population_sweep,
                      rows_csv, run, write_run)
from .expost import ReplayScenario, optimal_profit

ZONE_ORDER = ("narrow", "medium", "wide")
RATE_ORDER = ((0.1, 0.1), (0.1, 0.4), (0.4, 0.1), (0.4, 0.4))


def _parser():
    p = argparse.ArgumentParser(prog="cda-forge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="simulate one configuration")
    r.add_argument("--config", required=True, help="experiment config (JSON)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, help="override the config's seed")
    r.add_argument("--dump-decisions", action="store_true",
                   help="write p-strategy decision records to decisions.jsonl")

    c = sub.add_parser("compare", help="compare target strategies in one zone/rate cell")
    c.add_argument("--zone", choices=ZONE_ORDER, required=True)
    c.add_argument("--rates", required=True, help="buy,sell arrival rates, e.g. 0.1,0.4")
    c.add_argument("--targets", default="FM5,RM,CP5,P", help="comma-separated strategy labels")
    c.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    c.add_argument("--cycles", type=int, default=20_000)
    c.add_argument("--no-opt", action="store_true", help="skip the ex-post benchmark")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--jobs", type=int, help="parallel runs (default: $CDA_FORGE_JOBS or 1)")

    s = sub.add_parser("sweep", help="background population sweep around one target")
    s.add_argument("--config", required=True,
                   help="sweep spec (JSON): points, zone, rates, target, seeds, cycles, "
                        "fm_markup, cp_markup")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="run only this seed")
    s.add_argument("--jobs", type=int)

    o = sub.add_parser("opt", help="ex-post optimal profit over an event log")
    o.add_argument("--log", required=True, help="events.jsonl written by 'run'")
    o.add_argument("--target", default="target", help="agent id of the seller")
    o.add_argument("--grid", help="lo,hi integer price bounds (default: cost..zone upper)")
    o.add_argument("--delay-cost", type=float, default=0.0)
    o.add_argument("--out", required=True, help="report path (JSON)")

    rp = sub.add_parser("report", help="verdict grid from 'compare' outputs")
    rp.add_argument("--in", dest="inputs", nargs="+", required=True,
                    help="compare output directories (or a glob)")
    rp.add_argument("--out", required=True)
    return p


def _floats(text, name):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(name, f"expected comma-separated numbers, got {text!r}") from None


def _ints(text, name):
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(name, f"expected comma-separated integers, got {text!r}") from None


def cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    dump = open(os.path.join(args.out, "decisions.jsonl"), "w") if args.dump_decisions else None
    try:
        metrics, header, events = run(cfg, dump=dump)
    finally:
        if dump is not None:
            dump.close()
    write_run(args.out, metrics, header, events)
    if metrics.opt is not None:
        with open(os.path.join(args.out, "opt.json"), "w") as fh:
            json.dump(metrics.opt, fh, sort_keys=True, indent=1)
    return 0


def cmd_compare(args):
    rates = _floats(args.rates, "--rates")
    if len(rates) != 2:
        raise ConfigError("--rates", "expected two numbers")
    seeds = _ints(args.seeds, "--seeds")
    targets = [t for t in args.targets.split(",") if t]
    jobs = args.jobs or default_jobs()
    try:
        res = compare_cell(args.zone, tuple(rates), targets, seeds, args.cycles,
                           opt=not args.no_opt, jobs=jobs)
    except KeyError as exc:
        raise ConfigError("--rates", f"unsupported rate {exc}") from None
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "cell.csv"), "w") as fh:
        fh.write(rows_csv(res.rows()))
    summary = {"zone": res.zone, "rates": list(res.rates), "seeds": seeds,
               "verdicts": res.verdicts, "majority": res.majority,
               "opt_normalized": res.normalized,
               "sample_unit": "per-offer profit of the target seller"}
    with open(os.path.join(args.out, "cell.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return 0


def cmd_sweep(args):
    with open(args.config) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"line {exc.lineno}: {exc.msg}") from None
    if "points" not in spec:
        raise ConfigError("points", "missing")
    seeds = [args.seed] if args.seed is not None else spec.get("seeds", [0])
    rows = population_sweep([tuple(p) for p in spec["points"]], spec.get("zone", "medium"),
                            tuple(spec.get("rates", (0.4, 0.4))), spec.get("target", "CP5"),
                            seeds, spec.get("cycles", 20_000), jobs=args.jobs or default_jobs(),
                            fm_markup=spec.get("fm_markup", 5), cp_markup=spec.get("cp_markup", 0))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.csv"), "w") as fh:
        fh.write(rows_csv(rows))
    return 0


def cmd_opt(args):
    grid = None
    if args.grid:
        g = _ints(args.grid, "--grid")
        if len(g) != 2 or g[0] > g[1]:
            raise ConfigError("--grid", "expected lo,hi with lo <= hi")
        grid = tuple(g)
    scen = ReplayScenario.from_log(args.log, args.target, delay_cost=args.delay_cost, grid=grid)
    _, _, rep = optimal_profit(scen)
    with open(args.out, "w") as fh:
        fh.write(rep.to_json() + "\n")
    return 0


def cmd_report(args):
    paths = []
    for item in args.inputs:
        paths.extend(sorted(glob.glob(item)) or [item])
    cells = []
    for d in paths:
        f = os.path.join(d, "cell.json")
        if not os.path.exists(f):
            print(f"missing artifact: {f}", file=sys.stderr)
            return 1
        with open(f) as fh:
            cells.append(json.load(fh))
    if not cells:
        print("no artifacts given", file=sys.stderr)
        return 1
    labels = sorted({k for c in cells for k in c["majority"]})
    grid = {}
    for c in cells:
        for lab, v in c["majority"].items():
            grid[(lab, c["zone"], tuple(c["rates"]))] = v
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "verdicts.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "zone"] + [f"{b:g}&{s:g}" for b, s in RATE_ORDER])
        for lab in labels:
            for z in ZONE_ORDER:
                w.writerow([lab, z] + [grid.get((lab, z, r), "") for r in RATE_ORDER])
    lines = []
    for lab in labels:
        lines.append(f"{lab} vs P")
        lines.append(f"{'':8}" + "".join(f"{f'{b:g}&{s:g}':>10}" for b, s in RATE_ORDER))
        for z in ZONE_ORDER:
            lines.append(f"{z:8}" + "".join(f"{grid.get((lab, z, r), '-'):>10}" for r in RATE_ORDER))
        lines.append("")
    with open(os.path.join(args.out, "verdicts.txt"), "w") as fh:
        fh.write("\n".join(lines))
    print("\n".join(lines))
    return 0


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep, "opt": cmd_opt,
            "report": cmd_report}


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.verbose:
        import logging
        logging.basicConfig(level=logging.INFO)
    try:
        return COMMANDS[args.cmd](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ReplayError as exc:
        print(f"replay error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if args.cmd in ("opt", "report") else 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
