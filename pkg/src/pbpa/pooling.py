"""ROI max pooling and ROI-pairwise pooling over a shared feature map.

Both poolings reduce to the same primitive. A *plan* lists, for every output
cell, the flat feature-map positions competing for the max, in increasing flat
index order. Positions that lie in the pooled region but outside both part
boxes compete with value 0 (``MASKED``); ``PAD`` fills ragged rows and never
wins. :func:`gather_max` evaluates any number of plans in one vectorized pass
and scatters gradients back to the winning sources.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autograd import Tensor, _make
from .errors import ContractError, DimensionError
from .geometry import BoundingBox, union_box

MASKED = -1
PAD = -2


@dataclass
class PooledFeature:
    """Pooled grid plus, per output entry, the flat source index that won
    (``MASKED`` when a zeroed position won or the region was empty)."""

    data: Tensor
    argmax: np.ndarray
    source_shape: tuple

    @property
    def shape(self) -> tuple:
        return self.data.shape


def cell_edges(extent: int, cells: int) -> list:
    """Integer ``[start, end)`` offsets of each grid cell along one axis."""
    return [((i * extent) // cells, -((-(i + 1) * extent) // cells)) for i in range(cells)]


def _int_box(box: BoundingBox) -> tuple:
    r0, c0 = int(box.r), int(box.c)
    if r0 != box.r or c0 != box.c or int(box.h) != box.h or int(box.w) != box.w:
        raise ContractError(f"pooling needs integer feature-map boxes, got {box.as_tuple()}")
    return r0, c0, r0 + int(box.h), c0 + int(box.w)


def _clip_int(box: BoundingBox, fh: int, fw: int) -> Optional[tuple]:
    if box.empty:
        return None
    box = box.clip(fh, fw)
    if box.empty:
        return None
    return _int_box(box)


def make_plan(
    fmap_hw: tuple,
    box1: BoundingBox,
    box2: Optional[BoundingBox],
    H: int,
    W: int,
) -> np.ndarray:
    """Candidate table of shape ``[H*W, L]`` for one ROI.

    With ``box2=None`` this is plain ROI max pooling over ``box1``. Otherwise
    the region is the union of the two boxes and positions outside both are
    ``MASKED``. If one of the two boxes is empty the other one is pooled alone.
    """
    if H < 1 or W < 1:
        raise ContractError(f"pooled grid must be at least 1x1, got {H}x{W}")
    fh, fw = fmap_hw
    b1 = _clip_int(box1, fh, fw)
    pairwise = box2 is not None
    b2 = _clip_int(box2, fh, fw) if pairwise else None
    if b1 is None and b2 is None:
        return np.full((H * W, 1), MASKED, dtype=np.int64)
    if b1 is None or b2 is None:
        region = b1 or b2
        inside = [region]
    else:
        u = union_box(BoundingBox.from_corners(*b1), BoundingBox.from_corners(*b2))
        region = _int_box(u)
        inside = [b1, b2]
    r0, c0, r1, c1 = region
    h, w = r1 - r0, c1 - c0
    rows = np.arange(r0, r1)[:, None]
    cols = np.arange(c0, c1)[None, :]
    keep = np.zeros((h, w), dtype=bool)
    for br0, bc0, br1, bc1 in inside:
        keep |= (rows >= br0) & (rows < br1) & (cols >= bc0) & (cols < bc1)
    flat = np.where(keep, rows * fw + cols, MASKED)
    cells = []
    for ys, ye in cell_edges(h, H):
        for xs, xe in cell_edges(w, W):
            cells.append(flat[ys:ye, xs:xe].reshape(-1))
    L = max(len(c) for c in cells)
    plan = np.full((H * W, L), PAD, dtype=np.int64)
    for i, c in enumerate(cells):
        plan[i, : len(c)] = c
    return plan


def stack_plans(plans: list, offsets: Optional[list] = None) -> np.ndarray:
    """Stack plans into one ``[R, cells, L]`` table.

    Each item is one ROI plan ``[cells, L]`` or a block ``[n, cells, L]``;
    real indices of item ``i`` are shifted by ``offsets[i]`` (the position of
    its image in a flat batch). Shorter rows are padded with ``PAD``.
    """
    blocks = [p[None] if p.ndim == 2 else p for p in plans]
    cells = blocks[0].shape[1]
    L = max(b.shape[2] for b in blocks)
    out = np.full((sum(b.shape[0] for b in blocks), cells, L), PAD, dtype=np.int64)
    row = 0
    for i, b in enumerate(blocks):
        if b.shape[1] != cells:
            raise DimensionError("all plans in a stack need the same grid size")
        if offsets is not None and offsets[i]:
            b = np.where(b >= 0, b + offsets[i], b)
        out[row:row + b.shape[0], :, : b.shape[2]] = b
        row += b.shape[0]
    return out


def gather_max(fmap_flat: Tensor, plan: np.ndarray) -> tuple:
    """Evaluate stacked plans against ``fmap_flat`` of shape ``[C, N]``.

    Returns ``(pooled, source)``: ``pooled`` is a ``[R, C, cells]`` tensor and
    ``source`` the winning flat index per entry, ``MASKED`` where a zeroed
    position won. Ties go to the earliest candidate, i.e. the smallest flat
    index, because plans list candidates in increasing order.
    """
    if fmap_flat.ndim != 2:
        raise DimensionError(f"gather_max expects a [C, N] map, got {fmap_flat.shape}")
    C, N = fmap_flat.shape
    if plan.size and plan.max() >= N:
        raise ContractError(f"plan index {plan.max()} outside feature map of {N} positions")
    ext = np.empty((N + 2, C))
    ext[:N] = fmap_flat.data.T
    ext[N] = 0.0
    ext[N + 1] = -np.inf
    idx = np.where(plan == MASKED, N, np.where(plan == PAD, N + 1, plan))
    vals = ext[idx]  # [R, cells, L, C]
    arg = vals.argmax(axis=2)
    out = np.take_along_axis(vals, arg[:, :, None], axis=2)[:, :, 0]
    src = idx[np.arange(idx.shape[0])[:, None, None], np.arange(idx.shape[1])[None, :, None], arg]
    source = np.where(src >= N, MASKED, src).transpose(0, 2, 1)
    pooled = np.ascontiguousarray(out.transpose(0, 2, 1))

    def bw(g):
        return (scatter_to_sources(g, source, C, N),)

    return _make(pooled, (fmap_flat,), bw, "gather_max"), source


def scatter_to_sources(grad_out: np.ndarray, source: np.ndarray, C: int, N: int) -> np.ndarray:
    """Adjoint of :func:`gather_max`: add each entry's gradient at its winning
    source, skipping ``MASKED`` entries. ``grad_out``/``source`` are ``[R, C, cells]``."""
    valid = source >= 0
    chan = np.broadcast_to(np.arange(C)[None, :, None], source.shape)
    flat = (chan * N + source)[valid]
    return np.bincount(flat, weights=grad_out[valid], minlength=C * N).reshape(C, N)


def _pool_single(fmap: Tensor, plan: np.ndarray, H: int, W: int) -> PooledFeature:
    if fmap.ndim != 3:
        raise DimensionError(f"expected a [C, Hf, Wf] feature map, got {fmap.shape}")
    C, fh, fw = fmap.shape
    flat = _flatten_map(fmap)
    pooled, source = gather_max(flat, plan[None])
    data = _reshape_pooled(pooled, C, H, W)
    return PooledFeature(data=data, argmax=source[0].reshape(C, H, W), source_shape=(C, fh, fw))


def _flatten_map(fmap: Tensor) -> Tensor:
    C, fh, fw = fmap.shape
    return _make(fmap.data.reshape(C, fh * fw), (fmap,), lambda g: (g.reshape(C, fh, fw),), "reshape")


def _reshape_pooled(pooled: Tensor, C: int, H: int, W: int) -> Tensor:
    return _make(pooled.data.reshape(C, H, W), (pooled,), lambda g: (g.reshape(1, C, H * W),), "reshape")


def roi_max_pool(fmap: Tensor, box: BoundingBox, H: int, W: int) -> PooledFeature:
    """Max-pool the feature-map region ``box`` into an ``H`` x ``W`` grid.

    Cell ``(i, j)`` covers rows ``[floor(i*h/H), ceil((i+1)*h/H))`` of the box
    and likewise for columns. An empty box pools to all zeros.
    """
    return _pool_single(fmap, make_plan(fmap.shape[1:], box, None, H, W), H, W)


def roi_pairwise_pool(fmap: Tensor, box1: BoundingBox, box2: BoundingBox, H: int, W: int) -> PooledFeature:
    """Pool the union of two part boxes, treating everything outside both
    boxes as zero activation."""
    return _pool_single(fmap, make_plan(fmap.shape[1:], box1, box2, H, W), H, W)


def pool_backward(pf: PooledFeature, grad_out) -> np.ndarray:
    """Gradient w.r.t. the source map given the gradient of a pooled grid."""
    g = np.asarray(grad_out.data if isinstance(grad_out, Tensor) else grad_out, dtype=np.float64)
    if g.shape != pf.argmax.shape:
        raise DimensionError(f"grad shape {g.shape} does not match pooled shape {pf.argmax.shape}")
    C, fh, fw = pf.source_shape
    src = pf.argmax.reshape(1, C, -1)
    return scatter_to_sources(g.reshape(1, C, -1), src, C, fh * fw).reshape(C, fh, fw)
