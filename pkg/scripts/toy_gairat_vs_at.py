"""Best-checkpoint PGD-20 robust error of AT vs GAIRAT on overlapping blobs.

    python3 scripts/toy_gairat_vs_at.py --seeds 5 --epochs 30
"""
import argparse

import numpy as np

from gairlab.studies import compare_at_gairat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--sigma", type=float, default=0.7)
    ap.add_argument("--eps", type=float, default=0.5)
    args = ap.parse_args()
    res = compare_at_gairat(range(args.seeds), epochs=args.epochs, sigma=args.sigma, eps=args.eps)
    print("seed  at_best  gairat_best")
    for s, (a, g) in enumerate(zip(res.at_best, res.gairat_best)):
        print(f"{s:4d}  {a:7.3f}  {g:11.3f}")
    print(f"median AT {res.at_median:.3f}  GAIRAT {res.gairat_median:.3f}  "
          f"diff {100 * (res.at_median - res.gairat_median):+.1f} pp")
    print(f"mean   AT {np.mean(res.at_best):.3f}  GAIRAT {np.mean(res.gairat_best):.3f}")


if __name__ == "__main__":
    main()
