"""PSNR and SSIM on the luma channel."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

PSNR_IDENTICAL = math.inf


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma of a ``3×h×w`` image in ``[0, 1]`` (range 16/255..235/255)."""
    r, g, b = img[..., 0, :, :], img[..., 1, :, :], img[..., 2, :, :]
    return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0


def _luma(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim >= 3 and a.shape[-3] == 3:
        return rgb_to_y(a), rgb_to_y(b)
    return a, b


def shave(img: np.ndarray, border: int) -> np.ndarray:
    return img[..., border:img.shape[-2] - border, border:img.shape[-1] - border] if border else img


def psnr_from_mse(mse: float) -> float:
    return PSNR_IDENTICAL if mse == 0 else 10.0 * math.log10(1.0 / mse)


def psnr_y(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB over Y; identical inputs give ``inf``."""
    ya, yb = _luma(a, b)
    return psnr_from_mse(float(np.mean((ya - yb) ** 2)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax * ax) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim_y(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5,
           k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over every fully-contained Gaussian window on Y (data range 1)."""
    ya, yb = _luma(a, b)
    if ya.shape[-1] < size or ya.shape[-2] < size:
        raise DimensionError(f"SSIM needs at least {size}×{size} pixels, got {ya.shape}")
    win = gaussian_window(size, sigma)
    c1, c2 = k1 ** 2, k2 ** 2

    def filt(x):
        return np.einsum("...ijkl,kl->...ij", sliding_window_view(x, (size, size), axis=(-2, -1)), win)

    mu_a, mu_b = filt(ya), filt(yb)
    s_aa = filt(ya * ya) - mu_a ** 2
    s_bb = filt(yb * yb) - mu_b ** 2
    s_ab = filt(ya * yb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))
