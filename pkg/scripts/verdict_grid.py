"""Run the 3 zones x 4 rate cells, FM5/RM/CP5 against P, and print the verdict grid.

    python3 scripts/verdict_grid.py --out results/verdicts [--seeds 0,1,2,3,4] [--cycles 20000]
"""

import argparse
import json
import os
import time

from cda_forge.harness import compare_cell, default_jobs, rows_csv

ZONES = ("narrow", "medium", "wide")
RATES = ((0.1, 0.1), (0.1, 0.4), (0.4, 0.1), (0.4, 0.4))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/verdicts")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--cycles", type=int, default=20_000)
    ap.add_argument("--delay-cost", type=float, default=0.1)
    ap.add_argument("--jobs", type=int, default=default_jobs())
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out, exist_ok=True)
    rows, cells = [], []
    t0 = time.time()
    for zone in ZONES:
        for rates in RATES:
            res = compare_cell(zone, rates, seeds=seeds, cycles=args.cycles, jobs=args.jobs,
                               delay_cost=args.delay_cost)
            rows.extend(res.rows())
            cells.append({"zone": zone, "rates": list(rates), "verdicts": res.verdicts,
                          "majority": res.majority, "opt_normalized": res.normalized})
            print(f"{zone:7} {rates}  {res.majority}  ({time.time() - t0:.0f}s)", flush=True)
    with open(os.path.join(args.out, "cells.csv"), "w") as fh:
        fh.write(rows_csv(rows))
    with open(os.path.join(args.out, "cells.json"), "w") as fh:
        json.dump(cells, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
