"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor wraps a C-contiguous ``numpy.ndarray``.  Operations that see at
least one operand with ``requires_grad`` record a closure computing the
vector-Jacobian product for each parent; :meth:`Tensor.backward` replays
those closures in reverse topological order.

Matrix products and convolutions report their multiply-accumulate counts to
an optional :class:`MacCounter`, which the complexity module uses to check
its closed-form FLOP model against real executions.
"""

from __future__ import annotations

import contextlib
import threading
from collections import defaultdict
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import DimensionError, GeometryError, NonFiniteError, UsageError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference mode)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


# ---------------------------------------------------------------- MAC counting


class MacCounter:
    """Tally of multiply-accumulates keyed by the active scope path."""

    def __init__(self) -> None:
        self.by_scope: dict[str, int] = defaultdict(int)

    @property
    def total(self) -> int:
        return sum(self.by_scope.values())

    def under(self, prefix: str) -> int:
        """Sum of counts whose scope path starts with ``prefix``."""
        return sum(v for k, v in self.by_scope.items()
                   if k == prefix or k.startswith(prefix + "/"))

    def with_leaf(self, *leaves: str) -> int:
        """Sum of counts whose innermost scope name is one of ``leaves``."""
        return sum(v for k, v in self.by_scope.items() if k.rsplit("/", 1)[-1] in leaves)


def _scopes() -> list[str]:
    if not hasattr(_state, "scopes"):
        _state.scopes = []
    return _state.scopes


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    prev = getattr(_state, "counter", None)
    _state.counter = counter
    try:
        yield counter
    finally:
        _state.counter = prev


@contextlib.contextmanager
def mac_scope(name: str) -> Iterator[None]:
    stack = _scopes()
    stack.append(name)
    try:
        yield
    finally:
        stack.pop()


def _record_macs(n: int) -> None:
    counter = getattr(_state, "counter", None)
    if counter is not None:
        counter.by_scope["/".join(_scopes())] += int(n)


# ---------------------------------------------------------------- core type

Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A float64 array, optionally attached to the autodiff graph."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Backward | None = None
        self.op = "leaf"

    # -- construction helpers
    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], backward: Backward,
                op: str) -> "Tensor":
        if not np.isfinite(data).all():
            raise NonFiniteError(f"{op} produced non-finite values")
        out = Tensor.__new__(Tensor)
        out.data = np.array(data, dtype=np.float64, order="C", copy=None)
        out.grad = None
        out.op = op
        track = _grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    # -- basic attributes
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring it."""
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that is not part of a graph")
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


class Parameter(Tensor):
    """A named leaf tensor owned by a module."""

    def __init__(self, data, name: str = "", trainable: bool = True) -> None:
        super().__init__(data, requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def backward(loss: Tensor, params: Iterable[tuple[str, Parameter]] | None = None):
    """Run reverse mode from ``loss``.

    When ``params`` (name, parameter) pairs are given, their ``.grad`` fields
    are reset first and a ``{name: gradient}`` dict is returned; parameters
    not reachable from the loss get zero gradients.
    """
    if params is None:
        loss.backward()
        return None
    params = list(params)
    for _, p in params:
        p.grad = None
    loss.backward()
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params}


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._result(ad * bd, (a, b),
                          lambda g: (_unbroadcast(g * bd, ad.shape),
                                     _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._result(ad / bd, (a, b),
                          lambda g: (_unbroadcast(g / bd, ad.shape),
                                     _unbroadcast(-g * ad / (bd * bd), bd.shape)), "div")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._result(xd * xd, (x,), lambda g: (2.0 * xd * g,), "square")


def tabs(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._result(np.abs(xd), (x,), lambda g: (np.sign(xd) * g,), "abs")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor._result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF (no tanh approximation)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
    return Tensor._result(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),), "gelu")


# ---------------------------------------------------------------- reductions / shape


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape

    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def bw(g):
        return (np.broadcast_to(np.reshape(g, kept), shape).copy(),)

    return Tensor._result(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return tsum(x, axes, keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._result(x.data.transpose(axes), (x,),
                          lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    fancy = any(isinstance(i, (list, np.ndarray)) for i in
                (index if isinstance(index, tuple) else (index,)))

    def bw(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return Tensor._result(x.data[index], (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                          lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    axis = axis % x.ndim
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover extent {x.shape[axis]}")
    out, start = [], 0
    for n in sizes:
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, start + n)
        out.append(getitem(x, tuple(index)))
        start += n
    return out


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[..., m, k] @ [..., k, p]`` with broadcast batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents not broadcastable: {a.shape} @ {b.shape}") from None
    m, k = a.shape[-2:]
    p = b.shape[-1]
    _record_macs(int(np.prod(batch, dtype=np.int64)) * m * k * p)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._result(ad @ bd, (a, b), bw, "matmul")


def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma``/``beta``."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(xhat * gd + beta.data, (x, gamma, beta), bw, "layer_norm")


# ---------------------------------------------------------------- image ops


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected a c×h×w or b×c×h×w feature map, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: int | None = None) -> Tensor:
    """Stride-1 2-D convolution with zero padding (default ``k // 2``).

    ``x`` is ``c_in×h×w`` or ``b×c_in×h×w``; ``weight`` is ``c_out×c_in×k×k``.
    """
    x, squeeze = _batched(as_tensor(x))
    cout, cin, kh, kw = weight.shape
    B, C, H, W = x.shape
    if C != cin:
        raise DimensionError(f"conv2d input has {C} channels, weight expects {cin} "
                             f"(input {x.shape}, weight {weight.shape})")
    p = kh // 2 if padding is None else padding
    if H + 2 * p < kh or W + 2 * p < kw:
        raise DimensionError(f"kernel {kh}×{kw} larger than padded input {H + 2 * p}×{W + 2 * p}")
    Ho, Wo = H + 2 * p - kh + 1, W + 2 * p - kw + 1
    _record_macs(B * cout * cin * kh * kw * Ho * Wo)
    wmat = weight.data.reshape(cout, -1)
    if kh == 1 and kw == 1 and p == 0:
        cols = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # B,C,Ho,Wo,kh,kw
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, cin * kh * kw)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(B, Ho, Wo, cout).transpose(0, 3, 1, 2)
    xshape = x.shape

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape)
        gb = g2.sum(axis=0) if bias is not None else None
        gcols = g2 @ wmat
        if kh == 1 and kw == 1 and p == 0:
            gx = gcols.reshape(B, Ho, Wo, cin).transpose(0, 3, 1, 2)
        else:
            gcols = gcols.reshape(B, Ho, Wo, cin, kh, kw)
            gxp = np.zeros((B, cin, H + 2 * p, W + 2 * p))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + Ho, j:j + Wo] += gcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        return np.ascontiguousarray(gx).reshape(xshape), gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    y = Tensor._result(out, parents, bw, "conv2d")
    return reshape(y, y.shape[1:]) if squeeze else y


def _lattice(extent: int, k: int, s: int) -> int:
    return (extent - k) // s + 1


def unfold(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Extract (possibly overlapping) ``kernel×kernel`` patches as tokens.

    ``b×c×h×w -> b×L×(c·k·k)`` with ``L`` enumerated row-major over the patch
    lattice and each token flattened channel-major, then row, then column.
    """
    x, squeeze = _batched(as_tensor(x))
    B, C, H, W = x.shape
    if kernel > H or kernel > W or kernel < 1 or stride < 1:
        raise GeometryError(f"cannot unfold {H}×{W} with kernel {kernel}, stride {stride}")
    nh, nw = _lattice(H, kernel, stride), _lattice(W, kernel, stride)
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    out = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, nh * nw, C * kernel * kernel)
    y = Tensor._result(out, (x,),
                       lambda g: (_fold_array(g, C, H, W, kernel, stride),), "unfold")
    return reshape(y, y.shape[1:]) if squeeze else y


def _fold_array(tokens: np.ndarray, C: int, H: int, W: int, k: int, s: int) -> np.ndarray:
    B = tokens.shape[0]
    nh, nw = _lattice(H, k, s), _lattice(W, k, s)
    blocks = tokens.reshape(B, nh, nw, C, k, k)
    out = np.zeros((B, C, H, W))
    he, we = s * (nh - 1) + 1, s * (nw - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + he:s, j:j + we:s] += blocks[..., i, j].transpose(0, 3, 1, 2)
    return out


def fold(tokens: Tensor, channels: int, size: tuple[int, int], kernel: int, stride: int) -> Tensor:
    """Inverse layout of :func:`unfold`; overlapping contributions are summed."""
    tokens = as_tensor(tokens)
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = reshape(tokens, (1,) + tokens.shape)
    H, W = size
    B, L, D = tokens.shape
    if kernel > H or kernel > W:
        raise GeometryError(f"kernel {kernel} larger than canvas {H}×{W}")
    nh, nw = _lattice(H, kernel, stride), _lattice(W, kernel, stride)
    if L != nh * nw or D != channels * kernel * kernel:
        raise GeometryError(
            f"token grid {L}×{D} inconsistent with canvas {channels}×{H}×{W}, "
            f"kernel {kernel}, stride {stride} (expects {nh * nw}×{channels * kernel * kernel})")
    out = _fold_array(tokens.data, channels, H, W, kernel, stride)

    def bw(g):
        win = sliding_window_view(g, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
        return (win.transpose(0, 2, 3, 1, 4, 5).reshape(B, L, D),)

    y = Tensor._result(out, (tokens,), bw, "fold")
    return reshape(y, y.shape[1:]) if squeeze else y


def pixel_shuffle(x: Tensor, scale: int) -> Tensor:
    """Depth-to-space: channel ``c·s²+i·s+j`` moves to sub-pixel ``(i, j)`` of channel ``c``."""
    x, squeeze = _batched(as_tensor(x))
    B, C, H, W = x.shape
    if C % (scale * scale):
        raise GeometryError(f"pixel_shuffle needs channels divisible by {scale * scale}, got {C}")
    c = C // (scale * scale)
    y = reshape(x, (B, c, scale, scale, H, W))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    y = reshape(y, (B, c, H * scale, W * scale))
    return reshape(y, y.shape[1:]) if squeeze else y


def pixel_unshuffle(x: Tensor, scale: int) -> Tensor:
    """Space-to-depth, the inverse of :func:`pixel_shuffle`."""
    x, squeeze = _batched(as_tensor(x))
    B, c, Hs, Ws = x.shape
    if Hs % scale or Ws % scale:
        raise GeometryError(f"pixel_unshuffle needs extents divisible by {scale}, got {Hs}×{Ws}")
    H, W = Hs // scale, Ws // scale
    y = reshape(x, (B, c, H, scale, W, scale))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    y = reshape(y, (B, c * scale * scale, H, W))
    return reshape(y, y.shape[1:]) if squeeze else y
