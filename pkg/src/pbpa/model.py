"""The full recognition network and its training/evaluation helpers.

Per person the network builds two feature vectors on one shared backbone map:

* global: 5x5 ROI pools of the whole image, the person box and up to
  ``max_objects`` object regions (the person/object union box by default,
  zeros for missing objects);
* local: 3x3 pairwise pools of the 45 body-part pairs, passed through the
  attention module (score, keep top k, rescale).

Each branch has its own two-layer MLP; the two outputs are concatenated and a
final MLP with a sigmoid gives per-class scores. Image scores are the max over
persons.

Work is batched: each scene is turned once into integer pooling plans
(:class:`ScenePlan`), and a batch of scenes runs as one backbone call plus two
:func:`~pbpa.pooling.gather_max` calls.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .attention import AttentionState, ScoreHead, rescale, score_pairs, select_top_k
from .autograd import Tensor, _make
from .errors import ContractError, DimensionError, FormatError, NumericError
from .geometry import (
    N_PARTS,
    PAIRS,
    BoundingBox,
    part_boxes_from_keypoints,
    project_to_feature,
    union_box,
)
from .pooling import MASKED, gather_max, make_plan, stack_plans

logger = logging.getLogger(__name__)

N_PAIRS = len(PAIRS)
ATTENTION_MODES = ("pairs", "pairs+parts", "off")
OBJECT_MODES = ("union", "tight")


@dataclass
class ModelConfig:
    n_classes: int = 12
    k: int = 20
    attention_mode: str = "pairs"
    object_mode: str = "union"
    max_humans: int = 3
    max_objects: int = 4
    pair_pool: int = 3
    roi_pool: int = 5
    part_ratio: float = 0.5
    w_p: float = 10.0
    w_n: float = 1.0
    hidden: int = 256
    head_hidden: int = 128
    channels: tuple = (8, 16, 16)
    image_size: int = 64
    lr: float = 1e-2
    lr_decay: float = 0.1
    decay_at: float = 2 / 3
    momentum: float = 0.0
    steps: int = 3000
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.attention_mode not in ATTENTION_MODES:
            raise ContractError(f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}")
        if self.object_mode not in OBJECT_MODES:
            raise ContractError(f"object_mode must be one of {OBJECT_MODES}, got {self.object_mode!r}")
        if self.k < 1 or self.k > self.n_candidates and self.attention_mode != "off":
            raise ContractError(f"k must lie in 1..{self.n_candidates} for mode {self.attention_mode}, got {self.k}")
        if self.max_humans < 1 or self.max_objects < 1:
            raise ContractError("max_humans and max_objects must be >= 1")
        if len(self.channels) != 3:
            raise ContractError("backbone takes exactly three conv widths")

    @property
    def n_candidates(self) -> int:
        return N_PAIRS + (N_PARTS if self.attention_mode == "pairs+parts" else 0)

    @property
    def stride(self) -> int:
        return 4

    @property
    def fmap_size(self) -> int:
        return self.image_size // self.stride


# --------------------------------------------------------------------------
# pooling plans


@dataclass
class ScenePlan:
    """Integer pooling tables for every ROI in one scene (feature coordinates)."""

    n_persons: int
    roi: np.ndarray  # [1 + P*(1+max_objects), 25, L]: scene, then person + objects per person
    local: np.ndarray  # [P*n_candidates, 9, L]


def plan_person(person_box: BoundingBox, keypoints, objects: Sequence[BoundingBox], cfg: ModelConfig) -> tuple:
    """Global ROI plans (person + padded objects) and local candidate plans."""
    if person_box.empty:
        raise ContractError("person box is empty")
    fs, stride = cfg.fmap_size, cfg.stride
    hw = (fs, fs)
    proj = lambda b: project_to_feature(b, stride, fs, fs)  # noqa: E731
    pbox = proj(person_box)
    if pbox.empty:
        raise ContractError("person box lies outside the image")
    R = cfg.roi_pool
    rois = [make_plan(hw, pbox, None, R, R)]
    objs = list(objects)[: cfg.max_objects]
    for o in objs:
        region = union_box(person_box, o) if cfg.object_mode == "union" and not o.empty else o
        rois.append(make_plan(hw, proj(region), None, R, R))
    for _ in range(cfg.max_objects - len(objs)):
        rois.append(np.full((R * R, 1), MASKED, dtype=np.int64))
    local = []
    if cfg.attention_mode != "off":
        layout = part_boxes_from_keypoints(keypoints, cfg.part_ratio)
        parts = [proj(b) for b in layout.parts]
        G = cfg.pair_pool
        for i, j in PAIRS:
            local.append(make_plan(hw, parts[i], parts[j], G, G))
        if cfg.attention_mode == "pairs+parts":
            for b in parts:
                local.append(make_plan(hw, b, None, G, G))
    return rois, local


def plan_scene(scene, cfg: ModelConfig) -> ScenePlan:
    persons = list(scene.persons)[: cfg.max_humans]
    if not persons:
        raise ContractError(f"scene {scene.seed} has no persons")
    S = cfg.image_size
    fs = cfg.fmap_size
    whole = project_to_feature(BoundingBox(0.0, 0.0, float(S), float(S)), cfg.stride, fs, fs)
    rois = [make_plan((fs, fs), whole, None, cfg.roi_pool, cfg.roi_pool)]
    local = []
    for p in persons:
        r, lo = plan_person(p.box, p.keypoints, scene.objects, cfg)
        rois += r
        local += lo
    G = cfg.pair_pool
    local_arr = stack_plans(local) if local else np.zeros((0, G * G, 1), dtype=np.int64)
    return ScenePlan(n_persons=len(persons), roi=stack_plans(rois), local=local_arr)


# --------------------------------------------------------------------------
# layers


def _channel_major(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [C, B*H*W] so every image shares one flat index space."""
    B, C, H, W = x.shape
    out = x.data.transpose(1, 0, 2, 3).reshape(C, B * H * W)
    return _make(out, (x,), lambda g: (g.reshape(C, B, H, W).transpose(1, 0, 2, 3),), "channel_major")


def segment_max(x: Tensor, segments: Sequence[int]) -> Tensor:
    """Max over consecutive row groups of sizes ``segments``; ``[sum(segments), C] -> [len(segments), C]``.

    Each output takes its gradient back to the first row that attains the max.
    """
    rows, C = x.shape
    if sum(segments) != rows:
        raise DimensionError(f"segments cover {sum(segments)} rows, input has {rows}")
    if any(n < 1 for n in segments):
        raise ContractError("every segment needs at least one row")
    starts = np.concatenate([[0], np.cumsum(segments)[:-1]]).astype(np.int64)
    out = np.empty((len(segments), C))
    winners = np.empty((len(segments), C), dtype=np.int64)
    for s, (a, n) in enumerate(zip(starts, segments)):
        block = x.data[a:a + n]
        arg = block.argmax(axis=0)
        winners[s] = a + arg
        out[s] = block[arg, np.arange(C)]

    def bw(g):
        gx = np.zeros((rows, C))
        np.add.at(gx, (winners, np.broadcast_to(np.arange(C), winners.shape)), g)
        return (gx,)

    return _make(out, (x,), bw, "segment_max")


def mil_aggregate(per_person: Tensor) -> Tensor:
    """Per-class max over persons: ``[P, C] -> [C]``."""
    if per_person.ndim != 2 or per_person.shape[0] < 1:
        raise ContractError(f"need at least one person row, got shape {per_person.shape}")
    return ag.reshape(segment_max(per_person, [per_person.shape[0]]), (per_person.shape[1],))


CLAMP = 1e-7


def weighted_bce_loss(yhat: Tensor, y, w_p: float = 10.0, w_n: float = 1.0) -> Tensor:
    """``-sum(w_p*y*log(yhat) + w_n*(1-y)*log(1-yhat))`` with yhat clamped to
    ``[1e-7, 1-1e-7]``."""
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y.shape != yhat.shape:
        raise DimensionError(f"labels {y.shape} and predictions {yhat.shape} differ")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("labels must be 0 or 1")
    p = np.clip(yhat.data, CLAMP, 1.0 - CLAMP)
    inside = (yhat.data >= CLAMP) & (yhat.data <= 1.0 - CLAMP)
    val = -np.sum(w_p * y * np.log(p) + w_n * (1.0 - y) * np.log(1.0 - p))

    def bw(g):
        d = -w_p * y / p + w_n * (1.0 - y) / (1.0 - p)
        return (float(g) * d * inside,)

    return _make(np.array(val), (yhat,), bw, "weighted_bce")


# --------------------------------------------------------------------------
# the network


@dataclass
class Prediction:
    person_scores: Tensor  # [P_total, C]
    image_scores: Tensor  # [B, C]
    segments: list
    attention: Optional[AttentionState] = None


class Model:
    """Parameters plus the batched forward pass."""

    def __init__(self, cfg: ModelConfig, params: Optional[dict] = None):
        self.cfg = cfg
        self.params = params if params is not None else self._init_params(np.random.default_rng(cfg.seed))
        self._velocity = {}

    def _init_params(self, rng: np.random.Generator) -> dict:
        cfg = self.cfg
        p = {}

        def he(name, shape, fan_in):
            p[name] = Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), shape), requires_grad=True, name=name)

        def zeros(name, n):
            p[name] = Tensor(np.zeros(n), requires_grad=True, name=name)

        cin = 3
        for i, cout in enumerate(cfg.channels):
            he(f"conv{i}.K", (cout, cin, 3, 3), cin * 9)
            zeros(f"conv{i}.b", cout)
            cin = cout
        C = cfg.channels[-1]
        g_in = C * cfg.roi_pool ** 2 * (2 + cfg.max_objects)
        he("global.0.W", (g_in, cfg.hidden), g_in)
        zeros("global.0.b", cfg.hidden)
        he("global.1.W", (cfg.hidden, cfg.hidden), cfg.hidden)
        zeros("global.1.b", cfg.hidden)
        head_in = cfg.hidden
        if cfg.attention_mode != "off":
            d = C * cfg.pair_pool ** 2
            # Non-negative score weights start by favouring strongly activated
            # pairs; signed ones tend to learn to shrink them instead.
            p["score.W"] = Tensor(np.abs(rng.normal(0.0, math.sqrt(1.0 / d), (d, 1))), requires_grad=True,
                                  name="score.W")
            zeros("score.b", 1)
            l_in = cfg.k * d
            he("local.0.W", (l_in, cfg.hidden), l_in)
            zeros("local.0.b", cfg.hidden)
            he("local.1.W", (cfg.hidden, cfg.hidden), cfg.hidden)
            zeros("local.1.b", cfg.hidden)
            head_in += cfg.hidden
        he("head.0.W", (head_in, cfg.head_hidden), head_in)
        if cfg.attention_mode != "off":
            # The head starts blind to the local branch. Otherwise the random
            # projection of pair features rewards the score head for muting
            # whatever pairs carry the most signal.
            p["head.0.W"].data[cfg.hidden:] = 0.0
        zeros("head.0.b", cfg.head_hidden)
        p["head.1.W"] = Tensor(rng.normal(0.0, math.sqrt(1.0 / cfg.head_hidden), (cfg.head_hidden, cfg.n_classes)),
                               requires_grad=True, name="head.1.W")
        zeros("head.1.b", cfg.n_classes)
        return p

    def parameters(self) -> list:
        return list(self.params.values())

    @property
    def score_head(self) -> ScoreHead:
        return ScoreHead(self.params["score.W"], self.params["score.b"])

    # -- pieces ------------------------------------------------------------

    def backbone(self, images: Tensor) -> Tensor:
        """Three 3x3 conv + relu layers; the first two are followed by 2x2 max
        pooling, giving a stride-4 map."""
        x = images
        for i in range(3):
            x = ag.relu(ag.conv2d(x, self.params[f"conv{i}.K"], stride=1, pad=1, bias=self.params[f"conv{i}.b"]))
            if i < 2:
                x = ag.max_pool2d(x, 2)
        return x

    def _mlp(self, x: Tensor, prefix: str, n: int = 2) -> Tensor:
        for i in range(n):
            x = ag.relu(ag.fc(x, self.params[f"{prefix}.{i}.W"], self.params[f"{prefix}.{i}.b"]))
        return x

    def heads(self, fmap_flat: Tensor, roi_plan: np.ndarray, local_plan: np.ndarray,
              scene_rows: np.ndarray, person_rows: np.ndarray) -> tuple:
        """Person scores from pooled features.

        ``scene_rows[p]`` is the scene ROI row for person ``p``; the person's
        own ROI rows start at ``person_rows[p]`` (person box, then objects).
        """
        cfg = self.cfg
        P = len(person_rows)
        C = fmap_flat.shape[0]
        rois, _ = gather_max(fmap_flat, roi_plan)
        rois = ag.reshape(rois, (rois.shape[0], -1))
        per = 1 + cfg.max_objects
        idx = np.concatenate([scene_rows[:, None], person_rows[:, None] + np.arange(per)[None]], axis=1)
        g = ag.reshape(ag.index_select(rois, idx.reshape(-1), axis=0), (P, -1))
        feats = [self._mlp(g, "global")]
        state = None
        if cfg.attention_mode != "off":
            m = cfg.n_candidates
            pooled, _ = gather_max(fmap_flat, local_plan)
            pairs = ag.reshape(pooled, (P, m, C * cfg.pair_pool ** 2))
            s = score_pairs(pairs, self.score_head)
            phi = select_top_k(s, cfg.k)
            f = rescale(pairs, s, phi)
            state = AttentionState(scores=s.data.copy(), selected=phi, features=f, pair_data=pairs.data, score_tensor=s)
            feats.append(self._mlp(ag.reshape(f, (P, -1)), "local"))
        h = ag.concat(feats, axis=1)
        h = ag.relu(ag.fc(h, self.params["head.0.W"], self.params["head.0.b"]))
        out = ag.sigmoid(ag.fc(h, self.params["head.1.W"], self.params["head.1.b"]))
        return out, state

    # -- batched forward ---------------------------------------------------

    def forward(self, images: np.ndarray, plans: Sequence[ScenePlan]) -> Prediction:
        cfg = self.cfg
        x = Tensor(np.asarray(images, dtype=np.float64))
        fmap = self.backbone(x)
        B, C, H, W = fmap.shape
        flat = _channel_major(fmap)
        hw = H * W
        offsets = [b * hw for b in range(B)]
        roi_plan = stack_plans([p.roi for p in plans], offsets)
        segments = [p.n_persons for p in plans]
        scene_rows, person_rows = [], []
        row = 0
        for p in plans:
            for j in range(p.n_persons):
                scene_rows.append(row)
                person_rows.append(row + 1 + j * (1 + cfg.max_objects))
            row += p.roi.shape[0]
        local_plan = stack_plans([p.local for p in plans], offsets) if cfg.attention_mode != "off" else None
        scores, state = self.heads(flat, roi_plan, local_plan, np.array(scene_rows), np.array(person_rows))
        image_scores = segment_max(scores, segments)
        return Prediction(person_scores=scores, image_scores=image_scores, segments=segments, attention=state)

    def predict(self, dataset, plans=None, batch_size: int = 32) -> tuple:
        """Image scores ``[N, C]`` and per-scene attention selections (no gradients)."""
        plans = plans if plans is not None else [plan_scene(s, self.cfg) for s in dataset]
        scores, selections, person_scores = [], [], []
        with ag.no_grad():
            for a in range(0, len(plans), batch_size):
                chunk = range(a, min(a + batch_size, len(plans)))
                imgs = np.stack([dataset.scenes[i].image for i in chunk]) if hasattr(dataset, "scenes") else \
                    np.stack([dataset[i].image for i in chunk])
                pred = self.forward(imgs, [plans[i] for i in chunk])
                scores.append(pred.image_scores.data)
                start = 0
                for n in pred.segments:
                    person_scores.append(pred.person_scores.data[start:start + n])
                    if pred.attention is not None:
                        selections.append((pred.attention.selected[start:start + n], pred.attention.scores[start:start + n]))
                    start += n
        return np.concatenate(scores, axis=0), selections, person_scores


def forward_person(model: Model, fmap: Tensor, person, objects: Sequence[BoundingBox]) -> tuple:
    """Class scores ``[C]`` and attention state for one person on a ``[C, Hf, Wf]`` map."""
    cfg = model.cfg
    if fmap.ndim != 3:
        raise DimensionError(f"expected a [C, Hf, Wf] feature map, got {fmap.shape}")
    if person.box.empty:
        raise ContractError("person box is empty")
    C, H, W = fmap.shape
    fs = cfg.fmap_size
    whole = project_to_feature(BoundingBox(0.0, 0.0, float(cfg.image_size), float(cfg.image_size)), cfg.stride, fs, fs)
    rois, local = plan_person(person.box, person.keypoints, objects, cfg)
    roi_plan = stack_plans([make_plan((H, W), whole, None, cfg.roi_pool, cfg.roi_pool)] + rois)
    local_plan = stack_plans(local) if local else None
    flat = ag.reshape(fmap, (C, H * W))
    scores, state = model.heads(flat, roi_plan, local_plan, np.array([0]), np.array([1]))
    return ag.reshape(scores, (cfg.n_classes,)), state


# --------------------------------------------------------------------------
# training


def lr_at(cfg: ModelConfig, step: int) -> float:
    return cfg.lr * (cfg.lr_decay if step >= int(cfg.decay_at * cfg.steps) else 1.0)


def batch_indices(cfg: ModelConfig, n: int, step: int) -> np.ndarray:
    """Scene indices for ``step``: consecutive slices of per-epoch permutations,
    a pure function of ``(seed, step)`` so training can resume anywhere."""
    flat = step * cfg.batch_size + np.arange(cfg.batch_size)
    epochs = flat // n
    out = np.empty(cfg.batch_size, dtype=np.int64)
    for e in np.unique(epochs):
        perm = np.random.default_rng([cfg.seed, 7, int(e)]).permutation(n)
        sel = epochs == e
        out[sel] = perm[flat[sel] % n]
    return out


def batch_loss(model: Model, scenes: Sequence, plans: Sequence[ScenePlan]) -> tuple:
    cfg = model.cfg
    images = np.stack([s.image for s in scenes])
    labels = np.stack([s.labels for s in scenes]).astype(np.float64)
    pred = model.forward(images, plans)
    total = weighted_bce_loss(pred.image_scores, labels, cfg.w_p, cfg.w_n)
    loss = ag.mul(total, Tensor(1.0 / len(scenes)))
    if not np.isfinite(loss.data):
        p = np.clip(pred.image_scores.data, CLAMP, 1 - CLAMP)
        per = -(cfg.w_p * labels * np.log(p) + cfg.w_n * (1 - labels) * np.log(1 - p)).sum(axis=1)
        bad = int(np.argmax(~np.isfinite(per))) if not np.isfinite(per).all() else 0
        raise NumericError(f"non-finite loss on scene {scenes[bad].seed}")
    return loss, pred


def train_step(model: Model, scenes: Sequence, plans: Sequence[ScenePlan], lr: float) -> float:
    """One SGD step on a batch; returns the loss before the update."""
    if not scenes:
        raise ContractError("empty batch")
    for p in model.parameters():
        p.grad = None
    loss, _ = batch_loss(model, scenes, plans)
    ag.backward(loss)
    mom = model.cfg.momentum
    for name, p in model.params.items():
        if p.grad is None:
            continue
        if not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient for {name}")
        if mom:
            v = model._velocity.get(name)
            v = p.grad if v is None else mom * v + p.grad
            model._velocity[name] = v
            p.data -= lr * v
        else:
            p.data -= lr * p.grad
    return float(loss.data)


def train(model: Model, dataset, plans=None, start_step: int = 0, steps: Optional[int] = None,
          log_every: int = 0, callback=None) -> list:
    """Run ``steps`` SGD steps (``cfg.steps`` by default) and return the loss trace."""
    cfg = model.cfg
    scenes = dataset.scenes if hasattr(dataset, "scenes") else list(dataset)
    plans = plans if plans is not None else [plan_scene(s, cfg) for s in scenes]
    end = cfg.steps if steps is None else start_step + steps
    trace = []
    for step in range(start_step, end):
        idx = batch_indices(cfg, len(scenes), step)
        lr = lr_at(cfg, step)
        loss = train_step(model, [scenes[i] for i in idx], [plans[i] for i in idx], lr)
        trace.append(loss)
        if log_every and (step % log_every == 0 or step == end - 1):
            logger.info("step %d loss %.6f lr %g", step, loss, lr)
            if callback is not None:
                callback(step, loss, lr)
    return trace


# --------------------------------------------------------------------------
# evaluation


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean of precision at the rank of every positive; ties broken by index."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    npos = int(labels.sum())
    if npos == 0:
        raise ContractError("average precision needs at least one positive")
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = labels[order]
    ranks = np.nonzero(hits)[0] + 1
    return float(np.mean(np.arange(1, npos + 1) / ranks))


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> tuple:
    """``(mAP, per_class_ap)``; classes without positives get ``nan`` and are
    left out of the mean."""
    labels = np.asarray(labels)
    if not labels.any():
        raise ContractError("no positive labels in the dataset")
    aps = np.full(labels.shape[1], np.nan)
    for c in range(labels.shape[1]):
        if labels[:, c].any():
            aps[c] = average_precision(scores[:, c], labels[:, c])
    return float(np.nanmean(aps)), aps


def evaluate_map(model: Model, dataset, plans=None) -> tuple:
    scores, _, _ = model.predict(dataset, plans)
    return mean_average_precision(scores, dataset.labels())


@dataclass
class AttentionReport:
    counts: dict  # class -> [n_candidates] selection counts over positive scenes
    top: dict  # class -> list of candidate indices, most selected first
    top1: float = float("nan")
    top5: float = float("nan")
    omitted: list = field(default_factory=list)


def inspect_attention(model: Model, dataset, plans=None, top: int = 5) -> AttentionReport:
    """Per class, how often each candidate lands in the kept set.

    For each positive scene the person with the highest score for that class
    is inspected. Candidates are ranked by selection count, then by mean
    attention score over the same scenes. When scenes carry planted pairs,
    top-1/top-5 hit rates against them are averaged over classes.
    """
    cfg = model.cfg
    if cfg.attention_mode == "off":
        raise ContractError("model has no attention branch")
    _, selections, person_scores = model.predict(dataset, plans)
    labels = dataset.labels()
    m = cfg.n_candidates
    counts, ranked, omitted = {}, {}, []
    hits1, hits5 = [], []
    for c in range(labels.shape[1]):
        pos = np.nonzero(labels[:, c])[0]
        if len(pos) == 0:
            omitted.append(c)
            continue
        cnt = np.zeros(m)
        ssum = np.zeros(m)
        for i in pos:
            who = int(np.argmax(person_scores[i][:, c]))
            sel, sc = selections[i]
            cnt[sel[who]] += 1
            ssum += sc[who]
        order = np.lexsort((np.arange(m), -ssum, -cnt))
        counts[c] = cnt
        ranked[c] = [int(j) for j in order[:top]]
        planted = {pair for (cls, _, pair) in _planted_of(dataset, pos) if cls == c}
        if planted:
            target = next(iter(planted))
            hits1.append(float(order[0] == target))
            hits5.append(float(target in order[:5]))
    rep = AttentionReport(counts=counts, top=ranked, omitted=omitted)
    if hits1:
        rep.top1 = float(np.mean(hits1))
        rep.top5 = float(np.mean(hits5))
    return rep


def _planted_of(dataset, idx):
    for i in idx:
        yield from dataset.scenes[i].planted


# --------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"PBPA"
CKPT_VERSION = 1


def save_checkpoint(path, model: Model, extra: Optional[dict] = None) -> None:
    """Write named float64 tensors: model parameters plus ``extra`` arrays."""
    items = list(model.params.items()) + [(k, Tensor(v)) for k, v in (extra or {}).items()]
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(items))]
    for name, t in items:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def read_checkpoint(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if pos + 8 * size > len(buf):
                raise FormatError("checkpoint is truncated")
            tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise FormatError("checkpoint is truncated") from exc
    if pos != len(buf):
        raise FormatError("trailing bytes in checkpoint")
    return tensors


def load_checkpoint(path, cfg: ModelConfig) -> tuple:
    """Model built from ``cfg`` with parameters from ``path``, plus the
    non-parameter tensors stored alongside."""
    tensors = read_checkpoint(path)
    model = Model(cfg)
    for name, p in model.params.items():
        if name not in tensors:
            raise FormatError(f"checkpoint lacks parameter {name}")
        if tensors[name].shape != p.shape:
            raise FormatError(f"parameter {name} has shape {tensors[name].shape}, model expects {p.shape}")
        p.data = tensors.pop(name)
    return model, tensors


def config_fields() -> list:
    return [f.name for f in fields(ModelConfig)]


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
