"""Training-set geometry values across the learning-rate decays of plain AT.

Prints the per-epoch median kappa for each seed, then the pooled median just
before the first decay against the final-epoch median.

    python3 scripts/robust_overfitting_kappa.py --seeds 5
"""
import argparse

import numpy as np

from gairlab.studies import KAPPA_GROWTH_SETTINGS, kappa_growth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--window", type=int, default=5)
    args = ap.parse_args()
    g = kappa_growth(range(args.seeds), window=args.window)
    print("settings:", KAPPA_GROWTH_SETTINGS)
    for seed, rows in enumerate(g.rows):
        meds = [r["kappa_median"] for r in rows]
        rob = [round(r["train_rob_err"], 2) for r in rows]
        print(f"seed {seed} median kappa per epoch: {meds}")
        print(f"       train robust error: {rob}")
    print(f"pre-decay {g.pre_decay} (median {np.median(g.pre_decay)})")
    print(f"final     {g.final} (median {np.median(g.final)})")


if __name__ == "__main__":
    main()
