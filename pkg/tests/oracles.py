"""Independent reference implementations shared by the test modules."""

import math

import numpy as np

from pbpa.geometry import BoundingBox
from pbpa.pooling import MASKED


def sort_oracle(scores, k):
    """Take the k largest by a full descending sort (scores assumed distinct)."""
    ranked = sorted(range(len(scores)), key=lambda i: -scores[i])
    return sorted(ranked[:k])


def brute_pool(fmap, box1, box2, H, W):
    """Per-cell max by direct enumeration of the region, written independently
    of the plan machinery. Returns (values, argmax)."""
    C, fh, fw = fmap.shape

    def clip(b):
        if b is None or b.empty:
            return None
        r0, c0 = max(int(b.r), 0), max(int(b.c), 0)
        r1, c1 = min(int(b.r + b.h), fh), min(int(b.c + b.w), fw)
        return (r0, c0, r1, c1) if r1 > r0 and c1 > c0 else None

    b1 = clip(box1)
    b2 = clip(box2)
    out = np.zeros((C, H, W))
    arg = np.full((C, H, W), MASKED)
    if b1 is None and b2 is None:
        return out, arg
    if b1 is None or b2 is None:
        keep = [b1 or b2]
    else:
        keep = [b1, b2]
    r0 = min(k[0] for k in keep)
    c0 = min(k[1] for k in keep)
    r1 = max(k[2] for k in keep)
    c1 = max(k[3] for k in keep)
    h, w = r1 - r0, c1 - c0

    def inside(y, x):
        return any(k[0] <= y < k[2] and k[1] <= x < k[3] for k in keep)

    for ch in range(C):
        for i in range(H):
            ys = range(r0 + math.floor(i * h / H), r0 + math.ceil((i + 1) * h / H))
            for j in range(W):
                xs = range(c0 + math.floor(j * w / W), c0 + math.ceil((j + 1) * w / W))
                best, best_idx = None, None
                for y in ys:
                    for x in xs:
                        v, idx = (fmap[ch, y, x], y * fw + x) if inside(y, x) else (0.0, MASKED)
                        if best is None or v > best:
                            best, best_idx = v, idx
                out[ch, i, j] = best
                arg[ch, i, j] = best_idx
    return out, arg


def random_box(rng, fh, fw, allow_empty=False):
    if allow_empty and rng.random() < 0.05:
        return BoundingBox.make_empty()
    r, c = int(rng.integers(0, fh)), int(rng.integers(0, fw))
    return BoundingBox(float(r), float(c), float(rng.integers(1, fh - r + 1)), float(rng.integers(1, fw - c + 1)))


def random_map(rng, C, fh, fw):
    # Small integer values create plenty of ties; signs exercise the masked zeros.
    return rng.integers(-3, 6, (C, fh, fw)).astype(np.float64)
