"""Pairwise body-part attention: score, keep the top k, rescale.

A single shared linear head followed by a sigmoid scores every candidate
feature. The k best-scored candidates are kept, in ascending candidate order,
and each kept feature is multiplied by its own score. Selection passes no
gradient of its own: kept features get ``score * upstream`` and their score
gets ``<feature, upstream>``; dropped candidates get exactly zero.

Functions accept either a single person (``[m, D]``) or a batch of persons
(``[P, m, D]``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .autograd import Tensor, concat, fc, index_select, mul, reshape, sigmoid
from .errors import ContractError, DimensionError
from .pooling import PooledFeature


@dataclass
class ScoreHead:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, scale: float = None) -> "ScoreHead":
        scale = np.sqrt(1.0 / dim) if scale is None else scale
        return cls(
            W=Tensor(rng.normal(0.0, scale, (dim, 1)), requires_grad=True, name="score.W"),
            b=Tensor(np.zeros(1), requires_grad=True, name="score.b"),
        )

    @classmethod
    def zeros(cls, dim: int) -> "ScoreHead":
        return cls(W=Tensor(np.zeros((dim, 1)), requires_grad=True), b=Tensor(np.zeros(1), requires_grad=True))

    def parameters(self) -> list:
        return [self.W, self.b]


@dataclass
class AttentionState:
    """Outcome of one attention pass.

    ``selected`` holds the kept candidate indices (ascending); position ``j``
    of ``features`` came from candidate ``selected[j]`` (the index map is the
    identity lookup into ``selected``).
    """

    scores: np.ndarray
    selected: np.ndarray
    features: Tensor
    pair_data: np.ndarray
    score_tensor: Tensor = None

    def index_map(self, j: int) -> int:
        return int(self.selected[..., j]) if self.selected.ndim == 1 else self.selected[..., j]

    @property
    def k(self) -> int:
        return self.selected.shape[-1]


def stack_pooled(pairs: Sequence[PooledFeature]) -> Tensor:
    """Flatten and stack per-pair pooled grids into one ``[m, D]`` tensor."""
    if not pairs:
        raise ContractError("need at least one pair feature")
    shape = pairs[0].shape
    for p in pairs[1:]:
        if p.shape != shape:
            raise DimensionError(f"pair features differ in shape: {shape} vs {p.shape}")
    d = int(np.prod(shape))
    return concat([reshape(p.data, (1, d)) for p in pairs], axis=0)


def _as_pair_tensor(pairs: Union[Tensor, Sequence[PooledFeature]]) -> Tensor:
    return pairs if isinstance(pairs, Tensor) else stack_pooled(pairs)


def score_pairs(pairs, head: ScoreHead) -> Tensor:
    """Sigmoid score in (0, 1) per candidate; ``[m]`` or ``[P, m]``."""
    x = _as_pair_tensor(pairs)
    if x.ndim not in (2, 3):
        raise DimensionError(f"expected pair features [m, D] or [P, m, D], got {x.shape}")
    D = x.shape[-1]
    if head.W.shape[0] != D:
        raise DimensionError(f"score head expects {head.W.shape[0]} features, pairs have {D}")
    lead = x.shape[:-1]
    s = sigmoid(fc(reshape(x, (-1, D)), head.W, head.b))
    return reshape(s, lead)


def select_top_k(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores along the last axis, ascending.

    Equal scores favour the smaller index. With ``k >= m`` every index is kept.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    s = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=np.float64)
    if s.shape[-1] < 1:
        raise ContractError("need at least one score")
    m = s.shape[-1]
    if k >= m:
        return np.broadcast_to(np.arange(m), s.shape).copy()
    order = np.argsort(-s, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


def rescale(pairs, scores: Tensor, selected: np.ndarray) -> Tensor:
    """Kept features times their scores: ``[k, D]`` or ``[P, k, D]``."""
    x = _as_pair_tensor(pairs)
    selected = np.asarray(selected, dtype=np.int64)
    m = x.shape[-2]
    if selected.size and (selected.min() < 0 or selected.max() >= m):
        raise ContractError(f"selected index out of range for {m} candidates")
    if scores.shape != x.shape[:-1]:
        raise DimensionError(f"scores {scores.shape} do not line up with pairs {x.shape}")
    if x.ndim == 2:
        picked = index_select(x, selected, axis=0)
        s = index_select(scores, selected, axis=0)
        return mul(picked, reshape(s, (-1, 1)))
    P, _, D = x.shape
    k = selected.shape[-1]
    flat = (selected + np.arange(P)[:, None] * m).reshape(-1)
    picked = index_select(reshape(x, (P * m, D)), flat, axis=0)
    s = index_select(reshape(scores, (P * m,)), flat, axis=0)
    return reshape(mul(picked, reshape(s, (-1, 1))), (P, k, D))


def attend(pairs, head: ScoreHead, k: int) -> AttentionState:
    """Score every candidate, keep the top ``k`` and rescale them."""
    x = _as_pair_tensor(pairs)
    s = score_pairs(x, head)
    phi = select_top_k(s, k)
    f = rescale(x, s, phi)
    return AttentionState(scores=s.data.copy(), selected=phi, features=f, pair_data=x.data, score_tensor=s)


def attention_backward(state: AttentionState, grad_f) -> tuple:
    """Gradients w.r.t. the candidate features and their scores.

    Only single-person states are accepted. ``grad_f`` is ``[k, D]`` (or a
    list of k per-feature gradients).
    """
    if isinstance(grad_f, (list, tuple)):
        grad_f = np.stack([np.asarray(g.data if isinstance(g, Tensor) else g).reshape(-1) for g in grad_f])
    grad_f = np.asarray(grad_f, dtype=np.float64)
    if state.selected.ndim != 1:
        raise ContractError("attention_backward handles one person at a time")
    k = len(state.selected)
    p = state.pair_data
    if grad_f.shape[0] != k or grad_f.reshape(k, -1).shape[1] != p.shape[1]:
        raise ContractError(f"grad_f has shape {grad_f.shape}, expected ({k}, {p.shape[1]})")
    grad_f = grad_f.reshape(k, -1)
    grad_pairs = np.zeros_like(p)
    grad_s = np.zeros(p.shape[0])
    sel = state.selected
    grad_pairs[sel] = state.scores[sel, None] * grad_f
    grad_s[sel] = np.sum(p[sel] * grad_f, axis=1)
    return grad_pairs, grad_s
