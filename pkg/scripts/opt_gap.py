"""OPT-normalized profit of each target strategy, per zone and rate cell.

    python3 scripts/opt_gap.py --out results/opt_gap [--zones medium] [--seeds 0,1,2]

Prints the mean of profit / OPT over seeds and the gap 1 - mean for P.
"""

import argparse
import json
import os

import numpy as np

from cda_forge.harness import compare_cell, default_jobs

RATES = ((0.1, 0.1), (0.1, 0.4), (0.4, 0.1), (0.4, 0.4))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/opt_gap")
    ap.add_argument("--zones", default="narrow,medium,wide")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--cycles", type=int, default=20_000)
    ap.add_argument("--jobs", type=int, default=default_jobs())
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out, exist_ok=True)
    out = []
    for zone in args.zones.split(","):
        for rates in RATES:
            res = compare_cell(zone, rates, seeds=seeds, cycles=args.cycles, opt=True,
                               jobs=args.jobs)
            means = {k: float(np.mean([x for x in v if x is not None]))
                     for k, v in res.normalized.items() if any(x is not None for x in v)}
            out.append({"zone": zone, "rates": list(rates), "normalized": res.normalized,
                        "mean": means})
            cells = "  ".join(f"{k}={v:.3f}" for k, v in sorted(means.items()))
            print(f"{zone:7} {rates}  {cells}  P gap={1 - means.get('P', float('nan')):.3f}",
                  flush=True)
    with open(os.path.join(args.out, "opt_gap.json"), "w") as fh:
        json.dump(out, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
