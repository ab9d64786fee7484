"""CNN branch: residual channel attention blocks grouped into CNN Blocks."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor


class RCAB(Module):
    """conv3x3 → ReLU → conv3x3, gated per channel by a squeeze-excitation path, plus skip."""

    def __init__(self, c: int, reduction: int, rng: np.random.Generator) -> None:
        self.conv1 = Conv2d(c, c, 3, rng)
        self.conv2 = Conv2d(c, c, 3, rng)
        self.ca_down = Conv2d(c, c // reduction, 1, rng)
        self.ca_up = Conv2d(c // reduction, c, 1, rng)

    def channel_weights(self, r: Tensor) -> Tensor:
        pooled = r.mean(axis=(-2, -1), keepdims=True)
        return T.sigmoid(self.ca_up(T.relu(self.ca_down(pooled))))

    def __call__(self, x: Tensor) -> Tensor:
        r = self.conv2(T.relu(self.conv1(x)))
        return x + r * self.channel_weights(r)


class CNNBlock(Module):
    def __init__(self, c: int, n_rcab: int, reduction: int, rng: np.random.Generator) -> None:
        self.rcabs = [RCAB(c, reduction, rng) for _ in range(n_rcab)]
        self.conv = Conv2d(c, c, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        y = x
        for block in self.rcabs:
            y = block(y)
        return x + self.conv(y)
