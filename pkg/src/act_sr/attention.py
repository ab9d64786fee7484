"""Self-attention, cross-scale token attention (CSTA), FFN and the transformer block.

MAC scopes used inside this module (see :func:`tensor.mac_scope`):

``qkv``       query/key/value projections
``score``     query·key products
``value``     attention-weighted sums of values
``out``       output projection back to model width
``proj_in``   CSTA large-token reduction d' -> d/2
``proj_out``  CSTA large-token expansion d/2 -> d'
``ffn``       feed-forward layers
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .config import CstaConfig, ModelConfig
from .errors import ConfigurationError, GeometryError
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor, mac_scope
from .tokens import TokenGeometry, TokenGrid, regrid, retokenize_overlap


def _heads_split(x: Tensor, heads: int) -> Tensor:
    B, n, D = x.shape
    return x.reshape(B, n, heads, D // heads).transpose(0, 2, 1, 3)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
              sink: list | None = None) -> Tensor:
    """Multi-head scaled dot-product attention on ``b×n×D`` inputs.

    ``q`` may have a different token count than ``k``/``v``.  Each head uses
    ``D / heads`` channels and scale ``1/sqrt(D / heads)``.  When ``sink`` is
    a list the ``b×heads×n_q×n_k`` weight array is appended to it.
    """
    D = q.shape[-1]
    if D % heads:
        raise ConfigurationError(f"heads={heads} does not divide width {D}")
    if k.shape[-1] != D or v.shape[-1] != D or k.shape[-2] != v.shape[-2]:
        raise GeometryError(f"incompatible q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    B, nq, _ = q.shape
    qh, kh, vh = (_heads_split(x, heads) for x in (q, k, v))
    with mac_scope("score"):
        scores = T.matmul(qh, kh.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(D // heads))
    weights = T.softmax_lastdim(scores)
    if sink is not None:
        sink.append(weights.data)
    with mac_scope("value"):
        out = T.matmul(weights, vh)
    return out.transpose(0, 2, 1, 3).reshape(B, nq, D)


def _batch(x: Tensor) -> tuple[Tensor, bool]:
    return (x.reshape((1,) + x.shape), True) if x.ndim == 2 else (x, False)


class MHSA(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator) -> None:
        if d % heads:
            raise ConfigurationError(f"heads={heads} does not divide d={d}")
        self.qkv = Linear(d, 3 * d, rng)
        self.proj = Linear(d, d, rng)
        self.heads = heads
        self.sink: list | None = None

    def __call__(self, grid: TokenGrid) -> TokenGrid:
        x, squeeze = _batch(grid.tokens)
        d = x.shape[-1]
        with mac_scope("qkv"):
            q, k, v = T.split(self.qkv(x), [d, d, d])
        y = attention(q, k, v, self.heads, self.sink)
        with mac_scope("out"):
            y = self.proj(y)
        return grid.with_tokens(y.reshape(y.shape[1:]) if squeeze else y)


class CrossScalePair(Module):
    """One small/large token pair of CSTA with its own projections.

    ``width`` is the channel width of each half (d/2 in the two-scale case);
    ``d_large`` is the flattened size of a large token before reduction.
    """

    def __init__(self, width: int, d_large: int, heads: int, rng: np.random.Generator) -> None:
        self.pre = Linear(d_large, width, rng)
        self.qkv_s = Linear(width, 3 * width, rng)
        self.qkv_l = Linear(width, 3 * width, rng)
        self.post = Linear(width, d_large, rng)
        self.width = width
        self.heads = heads
        self.sink: list | None = None

    def core(self, small: Tensor, large: Tensor) -> tuple[Tensor, Tensor]:
        """Cross-attend ``b×n×width`` small tokens with ``b×n'×d_large`` large tokens.

        Returns the small-branch result (``b×n×width``) and the large-branch
        result already expanded back to ``b×n'×d_large``.
        """
        w = self.width
        with mac_scope("proj_in"):
            large = self.pre(large)
        with mac_scope("qkv"):
            q_s, k_s, v_s = T.split(self.qkv_s(small), [w, w, w])
            q_l, k_l, v_l = T.split(self.qkv_l(large), [w, w, w])
        out_l = attention(q_l, k_s, v_s, self.heads, self.sink)
        out_s = attention(q_s, k_l, v_l, self.heads, self.sink)
        with mac_scope("proj_out"):
            out_l = self.post(out_l)
        return out_s, out_l

    def __call__(self, small: Tensor, other: Tensor, geom: TokenGeometry,
                 size: int, stride: int) -> tuple[Tensor, Tensor]:
        grid = TokenGrid(other, geom)
        large = retokenize_overlap(grid, size, stride)
        out_s, out_l = self.core(small, large.tokens)
        back = regrid(large.with_tokens(out_l), geom.t, geom.t)
        return out_s, back.tokens


class CSTA(Module):
    """Cross-scale token attention.

    Two-scale form: channel-split the tokens in half, keep the first half as
    small tokens, re-tokenise the second half into larger overlapping tokens,
    cross-attend the two with exchanged keys/values, fold the large result
    back to the small grid, concatenate, and apply a d×d output projection.
    With three scales the split is four-way and two independent pairs run.
    """

    def __init__(self, d: int, cfg: CstaConfig, rng: np.random.Generator) -> None:
        c = d // (cfg.t * cfg.t)
        if c * cfg.t * cfg.t != d or c % cfg.n_splits:
            raise ConfigurationError(f"d={d} cannot be split into {cfg.n_splits} channel groups "
                                     f"of {cfg.t}×{cfg.t} tokens")
        self.cfg = cfg
        self.groups = c // cfg.n_splits
        width = d // cfg.n_splits
        self.pairs = [CrossScalePair(width, self.groups * size * size, cfg.heads, rng)
                      for size, _ in cfg.large_scales()]
        self.proj = Linear(d, d, rng)

    def set_sink(self, sink: list | None) -> None:
        for pair in self.pairs:
            pair.sink = sink

    def __call__(self, grid: TokenGrid) -> TokenGrid:
        g = grid.geometry
        self.cfg.check_geometry(g.h, g.w)
        x, squeeze = _batch(grid.tokens)
        width = g.d // self.cfg.n_splits
        parts = T.split(x, [width] * self.cfg.n_splits)
        sub = TokenGeometry(self.groups, g.h, g.w, g.t, g.t)
        outs = []
        for i, (pair, (size, stride)) in enumerate(zip(self.pairs, self.cfg.large_scales())):
            out_s, out_l = pair(parts[2 * i], parts[2 * i + 1], sub, size, stride)
            outs += [out_s, out_l]
        with mac_scope("out"):
            y = self.proj(T.concat(outs, axis=-1))
        return grid.with_tokens(y.reshape(y.shape[1:]) if squeeze else y)


class FFN(Module):
    def __init__(self, d: int, r: int, rng: np.random.Generator) -> None:
        self.fc1 = Linear(d, r * d, rng)
        self.fc2 = Linear(r * d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        with mac_scope("ffn"):
            return self.fc2(T.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: attention → FFN → attention → FFN, each with a residual skip.

    The attention pair is (MHSA, CSTA) by default; ``attention`` in the model
    config swaps in MHSA or CSTA for both slots.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        d = cfg.d
        kinds = {"mhsa+csta": ("mhsa", "csta"), "mhsa_only": ("mhsa", "mhsa"),
                 "csta_only": ("csta", "csta")}[cfg.attention]
        self.kinds = kinds
        self.norm1 = LayerNorm(d, cfg.ln_eps)
        self.attn1 = self._make(kinds[0], cfg, rng)
        self.norm2 = LayerNorm(d, cfg.ln_eps)
        self.ffn1 = FFN(d, cfg.r, rng)
        self.norm3 = LayerNorm(d, cfg.ln_eps)
        self.attn2 = self._make(kinds[1], cfg, rng)
        self.norm4 = LayerNorm(d, cfg.ln_eps)
        self.ffn2 = FFN(d, cfg.r, rng)

    @staticmethod
    def _make(kind: str, cfg: ModelConfig, rng: np.random.Generator) -> Module:
        return MHSA(cfg.d, cfg.heads, rng) if kind == "mhsa" else CSTA(cfg.d, cfg.csta, rng)

    def set_sink(self, sink: list | None) -> None:
        for attn in (self.attn1, self.attn2):
            if isinstance(attn, CSTA):
                attn.set_sink(sink)
            else:
                attn.sink = sink

    def __call__(self, grid: TokenGrid) -> TokenGrid:
        x = grid.tokens
        for i, (norm_a, attn, norm_f, ffn) in enumerate(
                ((self.norm1, self.attn1, self.norm2, self.ffn1),
                 (self.norm3, self.attn2, self.norm4, self.ffn2))):
            with mac_scope(f"{self.kinds[i]}{i + 1}"):
                x = x + attn(grid.with_tokens(norm_a(x))).tokens
                x = x + ffn(norm_f(x))
        return grid.with_tokens(x)
