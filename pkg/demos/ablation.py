"""Ablation analogues: union vs tight object boxes, k=20 vs k=45, pairs branch
on vs off. Prints per-seed test mAP and the mean per variant.

    python demos/ablation.py --seeds 5
"""

import argparse

import numpy as np

from pbpa.experiments import run, standard_split

VARIANTS = {
    "union, k=20, pairs on": {},
    "tight object box": {"object_mode": "tight"},
    "no selection (k=45)": {"k": 45},
    "pairs branch off": {"attention_mode": "off"},
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--steps", type=int, default=3000)
    args = ap.parse_args()
    split = standard_split()
    for name, kw in VARIANTS.items():
        maps = [run(split, seed=s, steps=args.steps, **kw).map for s in range(args.seeds)]
        per = " ".join(f"{m:.4f}" for m in maps)
        print(f"{name:24s} mean {np.mean(maps):.4f}  per seed {per}", flush=True)


if __name__ == "__main__":
    main()
