"""Minimal float64 tensor with reverse-mode differentiation.

Only the operations the pairwise-attention pipeline needs are provided. Every
op computes its forward value with numpy and, when gradients are enabled,
records a closure that maps the output gradient to one gradient per parent.

>>> x = Tensor([1.0, 2.0], requires_grad=True)
>>> loss = sum(mul(x, x))
>>> backward(loss)
>>> x.grad
array([2., 4.])
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, GraphStateError, NumericError

__all__ = [
    "Tensor",
    "Graph",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "grad_check",
    "fc",
    "conv2d",
    "pointwise",
    "relu",
    "sigmoid",
    "max_pool2d",
    "concat",
    "slice_axis",
    "reshape",
    "scale_mul",
    "mul",
    "add",
    "sum",
    "mean",
    "index_select",
]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run the enclosed ops without recording backward closures."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense float64 array that can take part in a differentiation graph.

    Leaves are created directly; interior nodes come out of the op functions
    in this module and remember their parents plus a backward closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out._consumed = False
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


class Graph:
    """Operations reachable from one output, in topological order.

    ``nodes`` lists every interior tensor such that each one's parents come
    before it. ``run`` walks them in reverse exactly once.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = self._toposort(output)

    @staticmethod
    def _toposort(root: Tensor) -> list:
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    @property
    def consumed(self) -> bool:
        return any(n._consumed for n in self.nodes)

    def run(self, seed_grad: np.ndarray) -> None:
        if self.consumed:
            raise GraphStateError("backward already ran on this graph; rebuild it with a new forward pass")
        grads = {id(self.output): seed_grad}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                if node.requires_grad and g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            fn = node._backward
            node._backward = None
            node._consumed = True
            if g is None:
                continue
            parent_grads = fn(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in self.nodes:
            node._parents = () if not node.is_leaf and node._consumed else node._parents


def backward(loss: Tensor, graph: Optional[Graph] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphStateError("backward already ran on this graph; rebuild it with a new forward pass")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    graph = graph or Graph(loss)
    graph.run(np.ones_like(loss.data))


# --------------------------------------------------------------------------
# ops


def fc(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ W + b`` for x of shape [B, I]."""
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1:
        raise DimensionError(f"fc expects x[B,I], W[I,O], b[O]; got {x.shape}, {W.shape}, {b.shape}")
    if x.shape[1] != W.shape[0]:
        raise DimensionError(f"fc inner axis mismatch: x axis 1 has {x.shape[1]}, W axis 0 has {W.shape[0]}")
    if W.shape[1] != b.shape[0]:
        raise DimensionError(f"fc output axis mismatch: W axis 1 has {W.shape[1]}, b axis 0 has {b.shape[0]}")
    xd, Wd = x.data, W.data
    out = xd @ Wd + b.data

    def bw(g):
        return g @ Wd.T, xd.T @ g, g.sum(axis=0)

    return _make(out, (x, W, b), bw, "fc")


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, K: Tensor, stride: int = 1, pad: int = 0, bias: Optional[Tensor] = None) -> Tensor:
    """2-D cross-correlation of x[B,C,H,W] with K[F,C,kh,kw] via im2col."""
    if x.ndim != 4 or K.ndim != 4:
        raise DimensionError(f"conv2d expects x[B,C,H,W] and K[F,C,kh,kw]; got {x.shape}, {K.shape}")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d needs stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    B, C, H, W = x.shape
    F, Ck, kh, kw = K.shape
    if Ck != C:
        raise DimensionError(f"conv2d channel axis mismatch: x axis 1 has {C}, K axis 1 has {Ck}")
    if kh > H + 2 * pad or kw > W + 2 * pad:
        raise DimensionError(f"conv2d kernel {kh}x{kw} larger than padded input {H + 2 * pad}x{W + 2 * pad}")
    if bias is not None and bias.shape != (F,):
        raise DimensionError(f"conv2d bias must have shape ({F},), got {bias.shape}")
    Ho, Wo = _conv_out(H, kh, stride, pad), _conv_out(W, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    cols = np.empty((B, Ho, Wo, C, kh, kw))
    for dy in range(kh):
        for dx in range(kw):
            cols[..., dy, dx] = xp[:, :, dy:dy + hs:stride, dx:dx + ws:stride].transpose(0, 2, 3, 1)
    cols = cols.reshape(B * Ho * Wo, C * kh * kw)
    Kf = K.data.reshape(F, C * kh * kw)
    out = cols @ Kf.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2))

    def bw(g):
        gt = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        gK = (gt.T @ cols).reshape(F, C, kh, kw)
        gcols = (gt @ Kf).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros(xp.shape)
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, :, dy:dy + hs:stride, dx:dx + ws:stride] += gcols[..., dy, dx].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        if bias is None:
            return gx, gK
        return gx, gK, gt.sum(axis=0)

    parents = (x, K) if bias is None else (x, K, bias)
    return _make(out, parents, bw, "conv2d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)
    return _make(out, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def pointwise(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ContractError(f"unknown pointwise kind {kind!r}")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size`` x ``size`` max pooling; trailing rows/cols that do
    not fill a window are dropped. Ties go to the first element in row-major
    window order."""
    if x.ndim != 4:
        raise DimensionError(f"max_pool2d expects x[B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    Ho, Wo = H // size, W // size
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"max_pool2d window {size} larger than input {H}x{W}")
    offsets = [(dy, dx) for dy in range(size) for dx in range(size)]
    views = [x.data[:, :, dy:Ho * size:size, dx:Wo * size:size] for dy, dx in offsets]
    out = views[0].copy()
    arg = np.zeros(out.shape, dtype=np.int8)
    for i, v in enumerate(views[1:], 1):
        upd = v > out
        np.copyto(out, v, where=upd)
        arg[upd] = i

    def bw(g):
        gx = np.zeros((B, C, H, W))
        for i, (dy, dx) in enumerate(offsets):
            gx[:, :, dy:Ho * size:size, dx:Wo * size:size] = g * (arg == i)
        return (gx,)

    return _make(out, (x,), bw, "max_pool2d")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(t) for t in xs]
    if not xs:
        raise ContractError("concat needs at least one tensor")
    nd = xs[0].ndim
    axis = axis % nd if nd else 0
    for t in xs[1:]:
        if t.ndim != nd:
            raise DimensionError(f"concat rank mismatch: {xs[0].shape} vs {t.shape}")
        for ax in range(nd):
            if ax != axis and t.shape[ax] != xs[0].shape[ax]:
                raise DimensionError(f"concat axis {ax} mismatch: {xs[0].shape[ax]} vs {t.shape[ax]}")
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def bw(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs))]

    return _make(out, xs, bw, "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """``x`` restricted to ``start:stop`` along ``axis``."""
    axis = axis % x.ndim
    if not 0 <= start <= stop <= x.shape[axis]:
        raise DimensionError(f"slice {start}:{stop} out of range for axis {axis} of length {x.shape[axis]}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = x.data[idx].copy()
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape)
        gx[idx] = g
        return (gx,)

    return _make(out, (x,), bw, "slice")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def scale_mul(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``x`` by the scalar tensor ``s``."""
    if s.size != 1:
        raise DimensionError(f"scale_mul needs a scalar factor, got shape {s.shape}")
    xd, sv = x.data, s.data
    out = xd * sv.reshape(())

    def bw(g):
        return g * sv.reshape(()), np.array(np.sum(xd * g)).reshape(sv.shape)

    return _make(out, (x, s), bw, "scale_mul")


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    x, y = _as_tensor(x), _as_tensor(y)
    xd, yd = x.data, y.data
    try:
        out = xd * yd
    except ValueError as exc:
        raise DimensionError(f"mul cannot broadcast {xd.shape} with {yd.shape}") from exc

    def bw(g):
        return _unbroadcast(g * yd, xd.shape), _unbroadcast(g * xd, yd.shape)

    return _make(out, (x, y), bw, "mul")


def add(x: Tensor, y: Tensor) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    try:
        out = x.data + y.data
    except ValueError as exc:
        raise DimensionError(f"add cannot broadcast {x.shape} with {y.shape}") from exc
    xs, ys = x.shape, y.shape
    return _make(out, (x, y), lambda g: (_unbroadcast(g, xs), _unbroadcast(g, ys)), "add")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _make(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


def index_select(x: Tensor, index: np.ndarray, axis: int = 0) -> Tensor:
    """Gather slices of ``x`` along ``axis``; the backward scatters (and sums
    repeated indices) so rows that were not picked receive exactly zero."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    n = x.shape[axis]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ContractError(f"index out of range for axis {axis} of length {n}")
    out = np.take(x.data, index, axis=axis)
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape)
        gm = np.moveaxis(gx, axis, 0)
        np.add.at(gm, index.reshape(-1), np.moveaxis(g, axis, 0).reshape((-1,) + gm.shape[1:]))
        return (gx,)

    return _make(out, (x,), bw, "index_select")


# --------------------------------------------------------------------------
# verification


def grad_check(fn: Callable[..., Tensor], inputs: Iterable[Tensor], eps: float = 1e-6) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``fn`` maps the ``inputs`` to a scalar tensor. Relative error per entry is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    inputs = list(inputs)
    saved = [(t.requires_grad, t.grad) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        out = fn(*inputs)
        if out.size != 1:
            raise ContractError(f"grad_check closure must return a scalar, got shape {out.shape}")
        if not np.isfinite(out.data).all():
            raise NumericError("closure produced a non-finite value")
        backward(out)
        analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]
        worst = 0.0
        with no_grad():
            for t, a in zip(inputs, analytic):
                flat = t.data.reshape(-1)
                af = a.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    fp = float(fn(*inputs).data)
                    flat[i] = orig - eps
                    fm = float(fn(*inputs).data)
                    flat[i] = orig
                    if not (np.isfinite(fp) and np.isfinite(fm)):
                        raise NumericError(f"non-finite value while probing entry {i}")
                    num = (fp - fm) / (2 * eps)
                    err = abs(af[i] - num) / max(1e-8, abs(af[i]) + abs(num))
                    worst = max(worst, err)
        return worst
    finally:
        for t, (rg, g) in zip(inputs, saved):
            t.requires_grad = rg
            t.grad = g
