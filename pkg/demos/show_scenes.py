"""Write a strip of synthetic scenes as a PPM image and list their labels.

    python demos/show_scenes.py --n 6 --out scenes.ppm
"""

import argparse

import numpy as np

from pbpa.synthdata import CATALOGUE, generate_scene


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scale", type=int, default=4)
    ap.add_argument("--out", default="scenes.ppm")
    args = ap.parse_args()
    tiles = []
    for s in range(args.seed, args.seed + args.n):
        scene = generate_scene(s)
        names = [CATALOGUE[c].name for c in np.nonzero(scene.labels)[0]]
        print(f"scene {s} persons {len(scene.persons)} objects {len(scene.objects)} labels {' '.join(names) or '-'}")
        tiles.append(scene.image.transpose(1, 2, 0))
    strip = np.concatenate(tiles, axis=1).repeat(args.scale, axis=0).repeat(args.scale, axis=1)
    pix = (np.clip(strip, 0, 1) * 255).astype(np.uint8)
    with open(args.out, "wb") as f:
        f.write(f"P6 {pix.shape[1]} {pix.shape[0]} 255\n".encode())
        f.write(pix.tobytes())
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
