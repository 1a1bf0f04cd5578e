"""Test mAP and planted-pair hit rates as the number of kept pairs k varies.

    python demos/k_sweep.py --ks 1 5 10 20 30 45
"""

import argparse

from pbpa.experiments import run, standard_split


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ks", type=int, nargs="+", default=[1, 5, 10, 20, 30, 45])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=3000)
    args = ap.parse_args()
    split = standard_split()
    for k in args.ks:
        r = run(split, seed=args.seed, steps=args.steps, k=k)
        print(f"k {k:2d} map {r.map:.4f} top1 {r.top1:.3f} top5 {r.top5:.3f} seconds {r.seconds:.0f}", flush=True)


if __name__ == "__main__":
    main()
