"""Profit of a CP5 target as FM background sellers are replaced by CP or P sellers.

    python3 scripts/cp_contention.py [--config configs/sweep_cp_contention.json] [--out results/cp]
"""

import argparse
import json
import os
from collections import defaultdict

import numpy as np

from cda_forge.harness import default_jobs, population_sweep, rows_csv

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs",
                                                     "sweep_cp_contention.json"))
    ap.add_argument("--out", default="results/cp_contention")
    ap.add_argument("--jobs", type=int, default=default_jobs())
    args = ap.parse_args()
    with open(args.config) as fh:
        spec = json.load(fh)
    rows = population_sweep([tuple(p) for p in spec["points"]], spec["zone"],
                            tuple(spec["rates"]), spec["target"], spec["seeds"],
                            spec["cycles"], jobs=args.jobs, fm_markup=spec.get("fm_markup", 5),
                            cp_markup=spec.get("cp_markup", 0))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.csv"), "w") as fh:
        fh.write(rows_csv(rows))
    by = defaultdict(list)
    for r in rows:
        by[(r["fm"], r["cp"], r["p"])].append(r)
    print("fm cp  p   target_profit   total_profit")
    for pt, rs in by.items():
        print(f"{pt[0]:2} {pt[1]:2} {pt[2]:2}   {np.mean([r['target_profit'] for r in rs]):13.1f}"
              f"   {np.mean([r['total_profit'] for r in rs]):12.1f}")


if __name__ == "__main__":
    main()
