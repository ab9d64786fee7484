"""Fusion Block joining the transformer and CNN branches."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import FFN
from .config import ModelConfig
from .errors import GeometryError
from .nn import Conv2d, Module
from .tensor import Tensor
from .tokens import TokenGrid, rearrange_to_image, tokenize


class ResBlock1x1(Module):
    def __init__(self, width: int, rng: np.random.Generator) -> None:
        self.conv1 = Conv2d(width, width, 1, rng)
        self.conv2 = Conv2d(width, width, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(T.relu(self.conv1(x)))


def lateral(image: Tensor, feat: Tensor, mode: str) -> Tensor:
    if image.shape != feat.shape:
        raise GeometryError(f"branch features disagree: {image.shape} vs {feat.shape}")
    return T.concat([image, feat], axis=-3) if mode == "concat" else image + feat


class FusionBlock(Module):
    """Four 1×1 residual blocks over the joined branch features, then a return path.

    Intermediate blocks return ``(dT, dF)`` to be added to the branch outputs
    (either may be ``None`` for one-directional fusion); the last block
    returns the fused ``c×h×w`` feature.
    """

    def __init__(self, cfg: ModelConfig, last: bool, rng: np.random.Generator) -> None:
        mode = cfg.fusion_mode
        c = cfg.c
        width = c * mode.width_factor
        self.direction = mode.direction
        self.lateral = mode.lateral
        self.last = last
        self.t = cfg.t
        self.stack = [ResBlock1x1(width, rng) for _ in range(4)]
        if last:
            self.out = Conv2d(width, c, 3, rng)
        elif self.direction == "bidirectional":
            self.token_mlp = FFN(cfg.d, cfg.r, rng)
            self.conv = Conv2d(c, c, 3, rng)
        else:
            self.reduce = Conv2d(width, c, 1, rng)
            if self.direction == "c_to_t":
                self.token_mlp = FFN(cfg.d, cfg.r, rng)

    def __call__(self, grid: TokenGrid, feat: Tensor):
        m = lateral(rearrange_to_image(grid), feat, self.lateral)
        for block in self.stack:
            m = block(m)
        if self.last:
            return self.out(m)
        if self.direction == "bidirectional":
            c = feat.shape[-3]
            if self.lateral == "concat":
                m_t, m_f = T.split(m, [c, c], axis=-3)
            else:
                m_t = m_f = m
            d_tokens = self.token_mlp(tokenize(m_t, self.t).tokens)
            return d_tokens, self.conv(m_f)
        m = self.reduce(m)
        if self.direction == "t_to_c":
            return None, m
        return self.token_mlp(tokenize(m, self.t).tokens), None
