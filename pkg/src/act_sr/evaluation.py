"""Inference helpers: plain and self-ensembled super-resolution, directory evaluation,
feature-map export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import bicubic_downscale, dihedral, inverse_code, list_images, read_png
from .errors import CorpusError, GeometryError
from .metrics import psnr_y, shave, ssim_y
from .model import ACT, forward


def super_resolve(model: ACT, lr: np.ndarray) -> np.ndarray:
    return forward(lr, model)


def ensemble_candidates(model: ACT, lr: np.ndarray) -> list[np.ndarray]:
    """The eight inverse-transformed outputs for the dihedral transforms of ``lr``."""
    return [dihedral(forward(dihedral(lr, code), model), inverse_code(code)) for code in range(8)]


def self_ensemble(model: ACT, lr: np.ndarray) -> np.ndarray:
    """Average of the model over the eight flips/rotations of the input.

    The sum is taken as a balanced pairwise tree, so eight bitwise-equal
    candidates average back to exactly the same value.
    """
    parts = ensemble_candidates(model, lr)
    while len(parts) > 1:
        parts = [parts[i] + parts[i + 1] for i in range(0, len(parts), 2)]
    return parts[0] / 8.0


@dataclass
class ImageScore:
    name: str
    psnr: float
    ssim: float


def evaluate_dir(model: ACT, hr_dir: str | Path, scale: int, ensemble: bool = False,
                 metrics=("psnr", "ssim")) -> list[ImageScore]:
    """Bicubic-degrade each HR image, super-resolve, score on Y with a ``scale``-pixel shave.

    HR images are cropped to a multiple of ``scale`` first.  SR outputs are
    clamped to ``[0, 1]`` before scoring.
    """
    paths = list_images(hr_dir) if Path(hr_dir).is_dir() else []
    if not paths:
        raise CorpusError(f"no PNG images in {hr_dir}")
    run = self_ensemble if ensemble else super_resolve
    scores = []
    for p in paths:
        hr = read_png(p)
        h, w = hr.shape[-2:]
        hr = hr[:, :h - h % scale, :w - w % scale]
        sr = np.clip(run(model, bicubic_downscale(hr, scale)), 0.0, 1.0)
        a, b = shave(sr, scale), shave(hr, scale)
        scores.append(ImageScore(
            p.name,
            psnr_y(a, b) if "psnr" in metrics else float("nan"),
            ssim_y(a, b) if "ssim" in metrics else float("nan"),
        ))
    return scores


def mean_score(scores: list[ImageScore]) -> ImageScore:
    return ImageScore("mean", float(np.mean([s.psnr for s in scores])),
                      float(np.mean([s.ssim for s in scores])))


def feature_map(model: ACT, lr: np.ndarray, branch: str, block: int) -> np.ndarray:
    """Per-pixel mean absolute activation of ``T_block`` (as an image) or ``F_block``, in [0, 1].

    Min/max normalised; a constant map comes back as uniform 0.5.
    """
    if not 1 <= block <= model.cfg.n_blocks:
        raise GeometryError(f"block must be in 1..{model.cfg.n_blocks}, got {block}")
    key = {"transformer": "T", "cnn": "F"}[branch] + str(block)
    capture: dict = {}
    with T.no_grad():
        model(lr, capture)
    if key not in capture:
        raise GeometryError(f"model has no {branch} branch")
    act = np.abs(capture[key]).mean(axis=-3)
    lo, hi = act.min(), act.max()
    if hi - lo <= 0:
        return np.full_like(act, 0.5)
    return (act - lo) / (hi - lo)
