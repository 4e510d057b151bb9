"""Pilot run for the frozen Stratonovich threshold.

Uses a seed disjoint from the suite default and stores the pilot median at
the finest ladder point times the headroom factor.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from regsde.acceptance import SuiteContext, _stratonovich_sups

KEY = "c03_stratonovich_median_at_2^-8"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=777)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--headroom", type=float, default=2.0)
    ap.add_argument("--write", action="store_true")
    args = ap.parse_args()
    ctx = SuiteContext(seed=args.seed)
    med = np.median(_stratonovich_sups(ctx, args.seed, args.reps), axis=0)
    print("medians along the ladder:", med.tolist())
    entry = {"threshold": float(args.headroom * med[-1]), "pilot_median": float(med[-1]),
             "pilot_seed": args.seed, "headroom": args.headroom}
    print(json.dumps(entry))
    if args.write:
        path = Path(__file__).resolve().parents[1] / "src" / "regsde" / "acceptance_thresholds.json"
        data = json.loads(path.read_text())
        data[KEY] = entry
        path.write_text(json.dumps(data, indent=2) + "\n")


if __name__ == "__main__":
    main()
