"""Seeded synthetic scenes whose labels are set by known body-part pairs.

Each class is bound to one part pair and a geometric predicate on the stored
keypoints (and, for object classes, the object boxes). A scene holds one to
three stick figures; every body part is drawn as a blob in its own colour so
the parts are identifiable from pixels, and the parts of every pair whose
predicate holds are overlaid with a fine checker texture. For every person the generator
randomly *enacts* some classes by posing the relevant limbs, then evaluates
every predicate from the final geometry, so labels always agree with what
was stored.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ContractError, FormatError, GenerationError
from .geometry import (
    N_PARTS,
    PAIRS,
    PART_NAMES,
    BoundingBox,
    Keypoints,
    part_boxes_from_keypoints,
    union_all,
)

_P = {name: i for i, name in enumerate(PART_NAMES)}


@dataclass(frozen=True)
class ClassSpec:
    name: str
    pair: tuple
    kind: str  # near | above | left_of | touch
    a: int
    b: int = -1
    margin: float = 0.0

    @property
    def pair_index(self) -> int:
        return PAIRS.index(tuple(sorted(self.pair)))

    @property
    def needs_object(self) -> bool:
        return self.kind == "touch"


def _near(name, a, b):
    return ClassSpec(name, (_P[a], _P[b]), "near", _P[a], _P[b])


def _above(name, a, b, margin):
    return ClassSpec(name, (_P[a], _P[b]), "above", _P[a], _P[b], margin)


def _left_of(name, a, b, margin):
    return ClassSpec(name, (_P[a], _P[b]), "left_of", _P[a], _P[b], margin)


def _touch(name, a, other):
    return ClassSpec(name, (_P[a], _P[other]), "touch", _P[a])


CATALOGUE = (
    _near("adjust-tie", "r.wrist", "neck"),
    _near("scratch-neck", "l.wrist", "neck"),
    _near("clap", "l.wrist", "r.wrist"),
    _touch("hold-left", "l.wrist", "l.elbow"),
    _touch("hold-right", "r.wrist", "r.elbow"),
    _touch("kick-ball", "r.ankle", "r.knee"),
    _near("hand-on-hip", "l.wrist", "pelvis"),
    _near("pocket-right", "r.wrist", "pelvis"),
    _near("cross-legs", "l.ankle", "r.ankle"),
    _touch("step-on", "l.ankle", "l.knee"),
    _near("cross-arms", "l.wrist", "r.elbow"),
    _near("grab-elbow", "r.wrist", "l.elbow"),
)
MAX_CLASSES = 16


@dataclass(frozen=True)
class GenConfig:
    n_classes: int = 12
    image_size: int = 64
    max_persons: int = 3
    max_objects: int = 4
    part_ratio: float = 0.5
    torso_min: float = 20.0
    torso_max: float = 24.0
    enact_prob: float = 0.14
    noise: float = 0.04
    near_dist: float = 0.35

    def __post_init__(self):
        if not 1 <= self.n_classes <= min(MAX_CLASSES, len(CATALOGUE)):
            raise ContractError(f"n_classes must be in 1..{len(CATALOGUE)}, got {self.n_classes}")
        if self.max_persons < 1 or self.max_objects < 0:
            raise ContractError("need max_persons >= 1 and max_objects >= 0")
        if self.part_ratio <= 0 or not 0 < self.torso_min <= self.torso_max:
            raise ContractError("part_ratio and torso range must be positive")
        if not 0 <= self.enact_prob <= 1:
            raise ContractError("enact_prob must lie in [0, 1]")

    @property
    def classes(self) -> tuple:
        return CATALOGUE[: self.n_classes]

    def digest(self) -> bytes:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


@dataclass
class Person:
    keypoints: Keypoints
    box: BoundingBox


@dataclass
class Scene:
    image: np.ndarray  # float32 [3, S, S]
    persons: list
    objects: list
    labels: np.ndarray  # uint8 [C]
    planted: list = field(default_factory=list)  # (class, person, pair_index)
    seed: int = 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        if self.seed != other.seed or len(self.persons) != len(other.persons):
            return False
        if not np.array_equal(self.image, other.image) or self.image.dtype != other.image.dtype:
            return False
        for p, q in zip(self.persons, other.persons):
            if not (np.array_equal(p.keypoints.points, q.keypoints.points)
                    and np.array_equal(p.keypoints.visible, q.keypoints.visible) and p.box == q.box):
                return False
        return (self.objects == other.objects and np.array_equal(self.labels, other.labels)
                and [tuple(x) for x in self.planted] == [tuple(x) for x in other.planted])


# --------------------------------------------------------------------------
# predicates


def _inside(pt, box: BoundingBox) -> bool:
    x, y = pt
    return not box.empty and box.r <= y < box.r1 and box.c <= x < box.c1


def person_labels(kp: Keypoints, objects: list, cfg: GenConfig) -> np.ndarray:
    """Evaluate every class predicate for one person."""
    t = kp.torso_length
    pts = kp.points
    out = np.zeros(cfg.n_classes, dtype=bool)
    for ci, spec in enumerate(cfg.classes):
        a = spec.a
        if not kp.visible[a] or (spec.b >= 0 and not kp.visible[spec.b]):
            continue
        if spec.kind == "near":
            out[ci] = bool(np.hypot(*(pts[a] - pts[spec.b])) < cfg.near_dist * t)
        elif spec.kind == "above":
            out[ci] = pts[a, 1] < pts[spec.b, 1] - spec.margin * t
        elif spec.kind == "left_of":
            out[ci] = pts[a, 0] < pts[spec.b, 0] - spec.margin * t
        elif spec.kind == "touch":
            out[ci] = any(_inside(pts[a], o) for o in objects)
    return out


def scene_labels(persons: list, objects: list, cfg: GenConfig) -> tuple:
    """Image labels (OR over persons) and the planted ``(class, person, pair)`` list."""
    per = np.array([person_labels(p.keypoints, objects, cfg) for p in persons])
    labels = per.any(axis=0).astype(np.uint8)
    planted = []
    for ci, spec in enumerate(cfg.classes):
        if labels[ci]:
            planted.append((ci, int(np.argmax(per[:, ci])), spec.pair_index))
    return labels, planted


# --------------------------------------------------------------------------
# skeleton sampling

_UPPER_ARM, _FOREARM, _THIGH, _SHIN = 0.6, 0.55, 0.62, 0.6
_SHOULDER, _HIP = 0.3, 0.18


def _unit(angle: float) -> np.ndarray:
    """Direction rotated ``angle`` radians from straight down, toward +x."""
    return np.array([np.sin(angle), np.cos(angle)])


def _two_link(root, target, l1, l2, bend_sign) -> Optional[tuple]:
    d = target - root
    dist = float(np.hypot(*d))
    if dist > (l1 + l2) * 0.98 or dist < abs(l1 - l2) * 1.02:
        return None
    cos_a = (l1 * l1 + dist * dist - l2 * l2) / (2 * l1 * dist)
    a = np.arccos(np.clip(cos_a, -1.0, 1.0))
    base = np.arctan2(d[1], d[0])
    ang = base + bend_sign * a
    mid = root + l1 * np.array([np.cos(ang), np.sin(ang)])
    return mid, target.copy()


class _Skeleton:
    """Articulated stick figure in image coordinates (y points down).

    The figure faces the viewer, so its left side sits at larger x.
    """

    def __init__(self, rng: np.random.Generator, t: float):
        self.t = t
        lean = rng.uniform(-0.2, 0.2)
        self.pelvis = np.zeros(2)
        self.neck = self.pelvis + t * np.array([np.sin(lean), -np.cos(lean)])
        perp = np.array([np.cos(lean), np.sin(lean)])
        self.shoulder = {"l": self.neck + _SHOULDER * t * perp + np.array([0, 0.1 * t]),
                         "r": self.neck - _SHOULDER * t * perp + np.array([0, 0.1 * t])}
        self.hip = {"l": self.pelvis + _HIP * t * perp, "r": self.pelvis - _HIP * t * perp}
        self.elbow, self.wrist, self.knee, self.ankle = {}, {}, {}, {}
        for side, sgn in (("l", 1.0), ("r", -1.0)):
            a1 = sgn * rng.uniform(0.35, 0.9)
            a2 = a1 + sgn * rng.uniform(-0.2, 0.9)
            self.elbow[side] = self.shoulder[side] + _UPPER_ARM * t * _unit(a1)
            self.wrist[side] = self.elbow[side] + _FOREARM * t * _unit(a2)
            l1 = sgn * rng.uniform(0.05, 0.35)
            l2 = l1 + sgn * rng.uniform(-0.3, 0.15)
            self.set_leg(side, l1, l2)

    def set_leg(self, side, thigh, shin):
        self.knee[side] = self.hip[side] + _THIGH * self.t * _unit(thigh)
        self.ankle[side] = self.knee[side] + _SHIN * self.t * _unit(shin)

    def step(self, side: str, target: np.ndarray) -> bool:
        sgn = 1.0 if side == "l" else -1.0
        sol = _two_link(self.hip[side], target, _THIGH * self.t, _SHIN * self.t, sgn)
        if sol is None:
            return False
        self.knee[side], self.ankle[side] = sol
        return True

    def reach(self, side: str, target: np.ndarray) -> bool:
        sgn = 1.0 if side == "l" else -1.0
        sol = _two_link(self.shoulder[side], target, _UPPER_ARM * self.t, _FOREARM * self.t, -sgn)
        if sol is None:
            return False
        self.elbow[side], self.wrist[side] = sol
        return True

    def keypoints(self) -> np.ndarray:
        pts = {
            "l.ankle": self.ankle["l"], "r.ankle": self.ankle["r"],
            "l.knee": self.knee["l"], "r.knee": self.knee["r"],
            "l.wrist": self.wrist["l"], "r.wrist": self.wrist["r"],
            "l.elbow": self.elbow["l"], "r.elbow": self.elbow["r"],
            "neck": self.neck, "pelvis": self.pelvis,
        }
        return np.array([pts[n] for n in PART_NAMES], dtype=np.float64)


def _enact(sk: _Skeleton, spec: ClassSpec, rng: np.random.Generator, objects: list, origin_hint) -> bool:
    """Pose the skeleton so that ``spec`` holds; returns False if it gave up."""
    t = sk.t
    side_of = {"l.wrist": "l", "r.wrist": "r", "l.elbow": "l", "r.elbow": "r",
               "l.knee": "l", "r.knee": "r", "l.ankle": "l", "r.ankle": "r"}
    a_name = PART_NAMES[spec.a]
    b_name = PART_NAMES[spec.b] if spec.b >= 0 else None
    kp = dict(zip(PART_NAMES, sk.keypoints()))
    jitter = lambda: rng.uniform(-0.3, 0.3, 2) * t * 0.5  # noqa: E731
    if spec.kind == "near":
        if a_name.endswith("wrist") and b_name.endswith("wrist"):
            mid = sk.neck + np.array([rng.uniform(-0.2, 0.2) * t, rng.uniform(0.35, 0.8) * t])
            small = lambda: rng.uniform(-0.08, 0.08, 2) * t  # noqa: E731
            return sk.reach("l", mid + small()) and sk.reach("r", mid + small())
        if a_name.endswith("ankle") and b_name.endswith("ankle"):
            mid = sk.pelvis + np.array([rng.uniform(-0.15, 0.15) * t, rng.uniform(0.95, 1.1) * t])
            small = lambda: rng.uniform(-0.08, 0.08, 2) * t  # noqa: E731
            return sk.step("l", mid + small()) and sk.step("r", mid + small())
        return sk.reach(side_of[a_name], kp[b_name] + jitter())
    if spec.kind == "above":
        if a_name.endswith("wrist"):
            side = side_of[a_name]
            target = np.array([sk.shoulder[side][0] + rng.uniform(-0.3, 0.3) * t,
                               sk.neck[1] - (spec.margin + rng.uniform(0.15, 0.45)) * t])
            return sk.reach(side, target)
        if a_name.endswith("elbow"):
            side = side_of[a_name]
            sgn = 1.0 if side == "l" else -1.0
            up = np.pi - sgn * rng.uniform(0.0, 0.6)
            sk.elbow[side] = sk.shoulder[side] + _UPPER_ARM * t * _unit(up)
            sk.wrist[side] = sk.elbow[side] + _FOREARM * t * _unit(up + sgn * rng.uniform(-0.8, 0.8))
            return True
        if a_name.endswith("knee"):
            side = side_of[a_name]
            sgn = 1.0 if side == "l" else -1.0
            thigh = sgn * rng.uniform(1.75, 2.3)
            sk.set_leg(side, thigh, thigh - sgn * rng.uniform(1.2, 1.9))
            return True
        if a_name.endswith("ankle"):
            side = side_of[a_name]
            sgn = 1.0 if side == "l" else -1.0
            thigh = sgn * rng.uniform(0.0, 0.5)
            sk.set_leg(side, thigh, thigh + sgn * rng.uniform(1.9, 2.6))
            return True
    if spec.kind == "left_of":
        if a_name.endswith("ankle"):
            sk.set_leg("l", -rng.uniform(0.2, 0.45), -rng.uniform(0.25, 0.5))
            sk.set_leg("r", rng.uniform(0.2, 0.45), rng.uniform(0.25, 0.5))
            return True
        if a_name.endswith("wrist"):
            y = sk.neck[1] + rng.uniform(0.3, 0.8) * t
            okl = sk.reach("l", np.array([sk.neck[0] - rng.uniform(0.25, 0.5) * t, y + rng.uniform(-0.1, 0.1) * t]))
            okr = sk.reach("r", np.array([sk.neck[0] + rng.uniform(0.25, 0.5) * t, y + rng.uniform(-0.1, 0.1) * t]))
            return okl and okr
    if spec.kind == "touch":
        return True  # objects are placed after the figure is positioned
    return False


# --------------------------------------------------------------------------
# rendering

PART_COLORS = np.array([
    [1.0, 0.15, 0.15],  # l.ankle
    [0.15, 1.0, 0.15],  # r.ankle
    [0.15, 0.15, 1.0],  # l.knee
    [1.0, 1.0, 0.15],   # r.knee
    [1.0, 0.15, 1.0],   # l.wrist
    [0.15, 1.0, 1.0],   # r.wrist
    [1.0, 0.6, 0.15],   # l.elbow
    [0.6, 0.15, 1.0],   # r.elbow
    [1.0, 1.0, 1.0],    # neck
    [0.15, 0.6, 1.0],   # pelvis
])
_LIMBS = [(8, 9), (8, 6), (6, 4), (8, 7), (7, 5), (9, 2), (2, 0), (9, 3), (3, 1)]


def _draw_segment(img, p0, p1, color, width, yy, xx):
    d = p1 - p0
    L2 = float(d @ d) or 1e-9
    u = np.clip(((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / L2, 0.0, 1.0)
    dist = np.hypot(xx - (p0[0] + u * d[0]), yy - (p0[1] + u * d[1]))
    m = dist <= width
    img[:, m] = color[:, None]


def active_parts(kp: Keypoints, objects: list, cfg: GenConfig) -> set:
    """Parts of every pair whose class predicate holds for this person."""
    out = set()
    for spec, on in zip(cfg.classes, person_labels(kp, objects, cfg)):
        if on:
            out.update(spec.pair)
    return out


def _render(rng, cfg: GenConfig, persons_kp: list, objects: list, marked: list) -> np.ndarray:
    S = cfg.image_size
    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64) + 0.5
    base = rng.uniform(0.0, 0.25, 3)
    img = np.broadcast_to(base[:, None, None], (3, S, S)).copy()
    img += rng.normal(0.0, cfg.noise, (3, S, S))
    for box in objects:
        color = np.array([0.85, 0.75, 0.2]) + rng.uniform(-0.1, 0.1, 3)
        r0, c0 = int(round(box.r)), int(round(box.c))
        r1, c1 = int(round(box.r1)), int(round(box.c1))
        patch = ((yy[r0:r1, c0:c1].astype(int) + xx[r0:r1, c0:c1].astype(int)) // 2) % 2
        img[:, r0:r1, c0:c1] = color[:, None, None] * (0.6 + 0.4 * patch)[None]
    checker = ((yy.astype(int) + xx.astype(int)) % 2).astype(np.float64)
    for (pts, t), active in zip(persons_kp, marked):
        for i, j in _LIMBS:
            _draw_segment(img, pts[i], pts[j], np.array([0.5, 0.5, 0.5]), max(0.8, 0.07 * t), yy, xx)
        rad = max(1.8, 0.2 * t)
        for p in range(N_PARTS):
            m = np.hypot(xx - pts[p, 0], yy - pts[p, 1]) <= rad
            if p in active:
                # parts of a satisfied pair carry a fine checker texture
                img[:, m] = PART_COLORS[p][:, None] * (0.3 + 0.7 * checker[m])[None]
            else:
                img[:, m] = PART_COLORS[p][:, None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# --------------------------------------------------------------------------
# generation


def _person_extent(pts: np.ndarray, cfg: GenConfig) -> BoundingBox:
    kp = Keypoints(pts)
    return union_all(part_boxes_from_keypoints(kp, cfg.part_ratio).parts)


def generate_scene(seed: int, cfg: GenConfig = GenConfig()) -> Scene:
    """Build one scene; a pure function of ``(seed, cfg)``."""
    for spec in cfg.classes:
        if spec.needs_object and cfg.max_objects == 0:
            raise GenerationError(f"class {spec.name!r} needs an object but max_objects is 0")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x5EED])
    S = cfg.image_size
    n_persons = int(rng.integers(1, cfg.max_persons + 1))
    n_objects = int(rng.integers(0, cfg.max_objects + 1))
    persons_pts, torsos, enacted = [], [], []
    for _ in range(n_persons):
        for _attempt in range(20):
            t = rng.uniform(cfg.torso_min, cfg.torso_max)
            sk = _Skeleton(rng, t)
            wants = [ci for ci in range(cfg.n_classes) if rng.random() < cfg.enact_prob]
            rng.shuffle(wants)
            done = []
            for ci in wants:
                spec = cfg.classes[ci]
                if spec.needs_object and n_objects == 0:
                    continue
                if _enact(sk, spec, rng, [], None):
                    done.append(ci)
            pts = sk.keypoints()
            ext = _person_extent(pts, cfg)
            if ext.h < S - 1 and ext.w < S - 1:
                break
        else:
            raise GenerationError("could not fit a figure on the canvas; lower torso_max")
        dy = rng.uniform(-ext.r, S - ext.r1)
        dx = rng.uniform(-ext.c, S - ext.c1)
        pts = pts + np.array([dx, dy])
        persons_pts.append(pts)
        torsos.append(t)
        enacted.append(done)

    objects = []
    touch_targets = [(pi, cfg.classes[ci].a) for pi, done in enumerate(enacted) for ci in done
                     if cfg.classes[ci].needs_object]
    for oi in range(n_objects):
        h, w = rng.uniform(6.0, 14.0, 2)
        if oi < len(touch_targets):
            pi, part = touch_targets[oi]
            cx, cy = persons_pts[pi][part] + rng.uniform(-0.25, 0.25, 2) * torsos[pi]
        else:
            cx, cy = rng.uniform(0, S, 2)
        box = BoundingBox(cy - h / 2, cx - w / 2, h, w).clip(S, S)
        if box.empty:
            box = BoundingBox(0.0, 0.0, h, w)
        objects.append(box)

    persons = []
    for pts in persons_pts:
        kp = Keypoints(pts)
        ext = _person_extent(pts, cfg).clip(S, S)
        persons.append(Person(keypoints=kp, box=ext))
    labels, planted = scene_labels(persons, objects, cfg)
    marked = [active_parts(p.keypoints, objects, cfg) for p in persons]
    image = _render(rng, cfg, list(zip(persons_pts, torsos)), objects, marked)
    return Scene(image=image, persons=persons, objects=objects, labels=labels, planted=planted, seed=int(seed))


# --------------------------------------------------------------------------
# dataset files

MAGIC = b"PBPD"
VERSION = 1
_HEADER = struct.Struct("<4sIIII32s")


@dataclass
class Dataset:
    cfg_digest: bytes
    n_classes: int
    image_size: int
    class_pairs: list
    scenes: list

    def __len__(self) -> int:
        return len(self.scenes)

    def __iter__(self):
        return iter(self.scenes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.cfg_digest == other.cfg_digest and self.n_classes == other.n_classes
                and self.image_size == other.image_size and list(map(tuple, self.class_pairs)) == list(map(tuple, other.class_pairs))
                and self.scenes == other.scenes)

    def labels(self) -> np.ndarray:
        return np.array([s.labels for s in self.scenes], dtype=np.uint8)


def _box_bytes(b: BoundingBox) -> bytes:
    return struct.pack("<B4d", int(b.empty), *b.as_tuple())


def _encode_scene(s: Scene, C: int) -> bytes:
    parts = [struct.pack("<Q", s.seed), np.ascontiguousarray(s.image, dtype="<f4").tobytes()]
    parts.append(struct.pack("<B", len(s.persons)))
    for p in s.persons:
        parts.append(np.ascontiguousarray(p.keypoints.points, dtype="<f8").tobytes())
        parts.append(p.keypoints.visible.astype(np.uint8).tobytes())
        parts.append(_box_bytes(p.box))
    parts.append(struct.pack("<B", len(s.objects)))
    for o in s.objects:
        parts.append(_box_bytes(o))
    labels = np.asarray(s.labels, dtype=np.uint8)
    if labels.shape != (C,):
        raise FormatError(f"scene {s.seed} carries {labels.shape} labels, header says {C}")
    parts.append(labels.tobytes())
    parts.append(struct.pack("<B", len(s.planted)))
    for cls, person, pair in s.planted:
        parts.append(struct.pack("<BBB", cls, person, pair))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("dataset file is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))

    def box(self) -> BoundingBox:
        empty, r, c, h, w = self.unpack("<B4d")
        return BoundingBox.make_empty() if empty else BoundingBox(r, c, h, w)


def write_dataset(path, scenes: Iterable[Scene], cfg: GenConfig) -> Dataset:
    scenes = list(scenes)
    C = cfg.n_classes
    header = _HEADER.pack(MAGIC, VERSION, len(scenes), C, cfg.image_size, cfg.digest())
    table = b"".join(struct.pack("<BB", *spec.pair) for spec in cfg.classes)
    body = b"".join(_encode_scene(s, C) for s in scenes)
    Path(path).write_bytes(header + table + body)
    return Dataset(cfg.digest(), C, cfg.image_size, [spec.pair for spec in cfg.classes], scenes)


def read_dataset(path) -> Dataset:
    rd = _Reader(Path(path).read_bytes())
    magic, version, count, C, S, digest = rd.unpack(_HEADER.format)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    pairs = [rd.unpack("<BB") for _ in range(C)]
    scenes = []
    for _ in range(count):
        (seed,) = rd.unpack("<Q")
        image = np.frombuffer(rd.take(3 * S * S * 4), dtype="<f4").reshape(3, S, S).astype(np.float32)
        (np_,) = rd.unpack("<B")
        persons = []
        for _ in range(np_):
            pts = np.frombuffer(rd.take(N_PARTS * 16), dtype="<f8").reshape(N_PARTS, 2).astype(np.float64)
            vis = np.frombuffer(rd.take(N_PARTS), dtype=np.uint8).astype(bool)
            persons.append(Person(keypoints=Keypoints(pts, vis), box=rd.box()))
        (no,) = rd.unpack("<B")
        objects = [rd.box() for _ in range(no)]
        labels = np.frombuffer(rd.take(C), dtype=np.uint8).copy()
        (npl,) = rd.unpack("<B")
        planted = [rd.unpack("<BBB") for _ in range(npl)]
        scenes.append(Scene(image=image, persons=persons, objects=objects, labels=labels, planted=planted, seed=seed))
    if rd.pos != len(rd.buf):
        raise FormatError("trailing bytes after the last record")
    return Dataset(digest, C, S, pairs, scenes)


def generate_dataset(seed: int, n: int, cfg: GenConfig = GenConfig(), path=None) -> Dataset:
    """Scenes for seeds ``seed .. seed+n-1``; written to ``path`` when given."""
    if n < 1:
        raise ContractError(f"need n >= 1 scenes, got {n}")
    scenes = [generate_scene(seed + i, cfg) for i in range(n)]
    if path is not None:
        return write_dataset(path, scenes, cfg)
    return Dataset(cfg.digest(), cfg.n_classes, cfg.image_size, [spec.pair for spec in cfg.classes], scenes)
