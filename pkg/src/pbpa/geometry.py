"""Boxes, keypoints and body-part layouts.

Boxes are stored as ``(r, c, h, w)``: top-left row and column plus height and
width. Keypoints are ``(x, y)`` pixel coordinates, so ``x`` maps to the column
and ``y`` to the row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DegeneratePoseError

PART_NAMES = (
    "l.ankle",
    "r.ankle",
    "l.knee",
    "r.knee",
    "l.wrist",
    "r.wrist",
    "l.elbow",
    "r.elbow",
    "neck",
    "pelvis",
)
N_PARTS = len(PART_NAMES)
NECK = PART_NAMES.index("neck")
PELVIS = PART_NAMES.index("pelvis")


@dataclass(frozen=True)
class BoundingBox:
    r: float
    c: float
    h: float
    w: float
    empty: bool = False

    def __post_init__(self):
        if not self.empty and not (self.h > 0 and self.w > 0):
            raise ContractError(f"box needs positive size, got h={self.h}, w={self.w}")

    @classmethod
    def make_empty(cls) -> "BoundingBox":
        return cls(0.0, 0.0, 0.0, 0.0, empty=True)

    @classmethod
    def from_corners(cls, r0, c0, r1, c1) -> "BoundingBox":
        if r1 <= r0 or c1 <= c0:
            return cls.make_empty()
        return cls(r0, c0, r1 - r0, c1 - c0)

    @property
    def r1(self) -> float:
        return self.r + self.h

    @property
    def c1(self) -> float:
        return self.c + self.w

    @property
    def area(self) -> float:
        return 0.0 if self.empty else self.h * self.w

    def as_tuple(self) -> tuple:
        return (self.r, self.c, self.h, self.w)

    def translate(self, dr: float, dc: float) -> "BoundingBox":
        if self.empty:
            return self
        return BoundingBox(self.r + dr, self.c + dc, self.h, self.w)

    def contains(self, other: "BoundingBox") -> bool:
        if other.empty:
            return True
        if self.empty:
            return False
        return self.r <= other.r and self.c <= other.c and other.r1 <= self.r1 and other.c1 <= self.c1

    def intersects(self, other: "BoundingBox") -> bool:
        if self.empty or other.empty:
            return False
        return self.r < other.r1 and other.r < self.r1 and self.c < other.c1 and other.c < self.c1

    def clip(self, height: float, width: float) -> "BoundingBox":
        """Restrict to the canvas ``[0, height) x [0, width)``; empty if nothing is left."""
        if self.empty:
            return self
        return BoundingBox.from_corners(
            max(self.r, 0.0), max(self.c, 0.0), min(self.r1, height), min(self.c1, width)
        )


@dataclass
class Keypoints:
    """Ten ``(x, y)`` points in :data:`PART_NAMES` order plus a visibility flag each."""

    points: np.ndarray
    visible: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (N_PARTS, 2):
            raise ContractError(f"expected {N_PARTS} keypoints of shape (x, y), got {self.points.shape}")
        if self.visible is None:
            self.visible = np.ones(N_PARTS, dtype=bool)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.visible.shape != (N_PARTS,):
            raise ContractError("visibility needs one flag per keypoint")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.points[PART_NAMES.index(name)]

    @property
    def torso_length(self) -> float:
        return float(np.hypot(*(self.points[NECK] - self.points[PELVIS])))


@dataclass
class PartLayout:
    parts: list
    pairs: list

    @property
    def n(self) -> int:
        return len(self.parts)

    @property
    def m(self) -> int:
        return len(self.pairs)


def enumerate_pairs(n: int) -> list:
    """All ``(i, j)`` with ``0 <= i < j < n`` in lexicographic order."""
    if n < 2:
        raise ContractError(f"need at least 2 parts to form a pair, got {n}")
    return list(combinations(range(n), 2))


PAIRS = tuple(enumerate_pairs(N_PARTS))


def pair_name(index: int) -> str:
    i, j = PAIRS[index]
    return f"{PART_NAMES[i]}-{PART_NAMES[j]}"


def part_boxes_from_keypoints(kp: Keypoints, ratio: float = 0.5) -> PartLayout:
    """Square box of side ``ratio * torso`` centred on each keypoint.

    Torso length is the neck-pelvis distance. Invisible keypoints get an empty
    box.
    """
    if ratio <= 0:
        raise ContractError(f"part-box ratio must be positive, got {ratio}")
    if not (kp.visible[NECK] and kp.visible[PELVIS]):
        raise ContractError("neck and pelvis must be visible to size part boxes")
    t = kp.torso_length
    if t == 0:
        raise DegeneratePoseError("neck and pelvis coincide; torso length is zero")
    side = ratio * t
    parts = []
    for (x, y), vis in zip(kp.points, kp.visible):
        if vis:
            parts.append(BoundingBox(float(y) - side / 2, float(x) - side / 2, side, side))
        else:
            parts.append(BoundingBox.make_empty())
    return PartLayout(parts=parts, pairs=list(PAIRS))


def union_box(a: BoundingBox, b: BoundingBox) -> BoundingBox:
    """Smallest box containing both; empty if either input is empty."""
    if a.empty or b.empty:
        return BoundingBox.make_empty()
    r0, c0 = min(a.r, b.r), min(a.c, b.c)
    return BoundingBox(r0, c0, max(a.r1, b.r1) - r0, max(a.c1, b.c1) - c0)


def union_all(boxes: Sequence[BoundingBox]) -> Optional[BoundingBox]:
    boxes = [b for b in boxes if not b.empty]
    if not boxes:
        return None
    out = boxes[0]
    for b in boxes[1:]:
        out = union_box(out, b)
    return out


def project_to_feature(box: BoundingBox, stride: int, fmap_h: int, fmap_w: int) -> BoundingBox:
    """Map an image box onto a feature map of the given stride.

    The top-left corner is floored and the bottom-right ceiled, so any box that
    overlaps the canvas covers at least one whole cell.
    """
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if box.empty:
        return box
    r0 = max(math.floor(box.r / stride), 0)
    c0 = max(math.floor(box.c / stride), 0)
    r1 = min(math.ceil(box.r1 / stride), fmap_h)
    c1 = min(math.ceil(box.c1 / stride), fmap_w)
    return BoundingBox.from_corners(float(r0), float(c0), float(r1), float(c1))
