"""Image I/O, bicubic degradation and dihedral augmentation.

Images are float64 ``3×h×w`` arrays in ``[0, 1]``.  PNG files are read and
written as 8-bit RGB; on write, values are clamped to ``[0, 1]`` and quantised
with round-half-up (``floor(255·x + 0.5)``).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import GeometryError


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def quantize(img: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(path: str | Path, img: np.ndarray) -> None:
    arr = quantize(img)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
        mode = "RGB" if arr.shape[2] == 3 else None
        if arr.shape[2] == 1:
            arr, mode = arr[..., 0], "L"
    else:
        mode = "L"
    Image.fromarray(np.ascontiguousarray(arr), mode=mode).save(path, format="PNG")


# ---------------------------------------------------------------- bicubic


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel."""
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    return np.where(x <= 1, (a + 2) * x3 - (a + 3) * x2 + 1,
                    np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0))


def bicubic_weights(in_size: int, scale: int) -> np.ndarray:
    """``(in_size/scale)×in_size`` downscaling matrix.

    Output sample ``i`` sits at input coordinate ``(i + 0.5)·scale − 0.5``.
    The kernel is stretched by ``scale`` (antialiasing), each row is
    normalised to sum to one, and taps falling outside the signal are
    mirrored back symmetrically (edge sample repeated).
    """
    if scale < 1 or in_size % scale:
        raise GeometryError(f"extent {in_size} is not divisible by scale {scale}")
    out_size = in_size // scale
    mat = np.zeros((out_size, in_size))
    half = 2 * scale
    for i in range(out_size):
        center = (i + 0.5) * scale - 0.5
        taps = np.arange(int(np.floor(center - half)), int(np.ceil(center + half)) + 1)
        wts = cubic((center - taps) / scale)
        wts = wts / wts.sum()
        for j, wt in zip(taps, wts):
            jj = j
            while jj < 0 or jj >= in_size:
                jj = -jj - 1 if jj < 0 else 2 * in_size - jj - 1
            mat[i, jj] += wt
    return mat


def bicubic_downscale(hr: np.ndarray, scale: int) -> np.ndarray:
    """Separable bicubic (a = −0.5) downscale of a ``c×h×w`` image by an integer factor."""
    h, w = hr.shape[-2:]
    if h % scale or w % scale:
        raise GeometryError(f"image {h}×{w} is not divisible by scale {scale}")
    if scale == 1:
        return hr.copy()
    rows, cols = bicubic_weights(h, scale), bicubic_weights(w, scale)
    return np.einsum("ih,...hw,jw->...ij", rows, hr, cols)


# ---------------------------------------------------------------- dihedral group


def dihedral(x: np.ndarray, code: int) -> np.ndarray:
    """Apply element ``code`` (0..7) of the square's symmetry group to the last two axes.

    ``code = k + 4·f``: horizontal flip when ``f`` is 1, then ``k`` counter-
    clockwise quarter turns.  Code 0 is the identity.
    """
    if not 0 <= code < 8:
        raise ValueError(f"dihedral code must be in 0..7, got {code}")
    if code >= 4:
        x = x[..., ::-1]
    return np.ascontiguousarray(np.rot90(x, code % 4, axes=(-2, -1)))


def inverse_code(code: int) -> int:
    return code if code >= 4 else (4 - code) % 4


def augment(patch: np.ndarray, code: int) -> np.ndarray:
    """Dihedral augmentation of a square patch."""
    h, w = patch.shape[-2:]
    if h != w and code % 2 == 1:
        raise GeometryError(f"quarter-turn augmentation needs a square patch, got {h}×{w}")
    return dihedral(patch, code)


def list_images(directory: str | Path) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")


def synthetic_image(rng: np.random.Generator, size: int, waves: int = 6) -> np.ndarray:
    """Smooth random RGB image: a sum of random plane waves per channel, rescaled into [0.05, 0.95]."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.zeros((3, size, size))
    for ch in range(3):
        for _ in range(waves):
            fy, fx = rng.uniform(-8, 8, size=2)
            out[ch] += rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
        lo, hi = out[ch].min(), out[ch].max()
        out[ch] = 0.05 + 0.9 * (out[ch] - lo) / (hi - lo)
    return out


def make_synthetic_corpus(directory: str | Path, count: int = 8, size: int = 64,
                          seed: int = 0) -> list[Path]:
    """Write ``count`` deterministic synthetic PNGs (``img_000.png`` ...) into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        p = directory / f"img_{i:03d}.png"
        write_png(p, synthetic_image(rng, size))
        paths.append(p)
    return paths
