"""Conversion between image-like features and token grids.

Token layout is fixed: tokens are enumerated row-major over the window
lattice, and each token is flattened channel-major, then row, then column.
Both directions go through :func:`tensor.unfold` / :func:`tensor.fold`, so the
convention lives in one place.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .config import large_token_count
from .errors import ConfigurationError, GeometryError
from .tensor import Tensor


@dataclass(frozen=True)
class TokenGeometry:
    c: int
    h: int
    w: int
    t: int
    s: int

    @property
    def n(self) -> int:
        return large_token_count(self.h, self.w, self.t, self.s)

    @property
    def d(self) -> int:
        return self.c * self.t * self.t


@dataclass(frozen=True)
class TokenGrid:
    """Tokens (``n×d`` or ``b×n×d``) plus the geometry needed to rebuild the image."""

    tokens: Tensor
    geometry: TokenGeometry

    def __post_init__(self) -> None:
        g = self.geometry
        if tuple(self.tokens.shape[-2:]) != (g.n, g.d):
            raise GeometryError(f"tokens of shape {self.tokens.shape} do not match geometry {g} "
                                f"(expects {g.n}×{g.d})")

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def d(self) -> int:
        return self.geometry.d

    def with_tokens(self, tokens: Tensor) -> "TokenGrid":
        return TokenGrid(tokens, self.geometry)


def tokenize(feature: Tensor, t: int) -> TokenGrid:
    """Split a ``c×h×w`` (or batched) feature into non-overlapping ``t×t`` tokens."""
    c, h, w = feature.shape[-3:]
    if h % t or w % t:
        raise GeometryError(f"token size {t} must divide the feature extent {h}×{w}")
    return TokenGrid(T.unfold(feature, t, t), TokenGeometry(c, h, w, t, t))


def rearrange_to_image(grid: TokenGrid) -> Tensor:
    """Fold tokens back to a feature map; overlapping windows are summed."""
    g = grid.geometry
    return T.fold(grid.tokens, g.c, (g.h, g.w), g.t, g.s)


def retokenize_overlap(grid: TokenGrid, t_large: int, s_large: int,
                       require_fewer: bool = True) -> TokenGrid:
    """Re-cut a non-overlapping grid into larger, overlapping ``t_large`` windows.

    The grid is first folded back to its image layout, then unfolded with
    kernel ``t_large`` and stride ``s_large``.  When ``require_fewer`` is set
    and the tokens actually grow, the resulting count must be below the input
    count.
    """
    g = grid.geometry
    if g.s != g.t:
        raise GeometryError("retokenize_overlap expects a non-overlapping input grid")
    if t_large < g.t:
        raise ConfigurationError(f"large token size {t_large} is smaller than t={g.t}")
    if t_large > g.h or t_large > g.w:
        raise GeometryError(f"large token size {t_large} exceeds canvas {g.h}×{g.w}")
    geom = TokenGeometry(g.c, g.h, g.w, t_large, s_large)
    if require_fewer and t_large > g.t and geom.n >= g.n:
        raise ConfigurationError(f"re-tokenisation yields n'={geom.n} ≥ n={g.n} tokens "
                                 f"(t'={t_large}, s'={s_large})")
    image = rearrange_to_image(grid)
    return TokenGrid(T.unfold(image, t_large, s_large), geom)


def regrid(grid: TokenGrid, t: int, s: int) -> TokenGrid:
    """Fold ``grid`` to its canvas (summing overlaps) and cut it with window ``t``, stride ``s``."""
    g = grid.geometry
    return TokenGrid(T.unfold(rearrange_to_image(grid), t, s), TokenGeometry(g.c, g.h, g.w, t, s))
