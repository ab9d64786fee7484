"""Toy-scale training: L1 loss, Adam with step-halving learning rate, dihedral augmentation."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import augment, bicubic_downscale, list_images, read_png
from .errors import CorpusError, DimensionError, NonFiniteError, TrainingError
from .metrics import psnr_y, ssim_y
from .model import ACT
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "loss", "psnr", "ssim")


def l1_loss(pred: Tensor, target) -> Tensor:
    target = T.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    return T.tabs(pred - target).mean()


def lr_at(step: int, cfg: TrainConfig) -> float:
    """``lr0`` halved once every ``halving_period`` steps (step counted from 0)."""
    return cfg.lr0 * 2.0 ** -(step // cfg.halving_period)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads: dict[str, np.ndarray], state: AdamState, lr: float,
              cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` ((name, Parameter) pairs)."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for {name} at step {state.t + 1}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1, bc2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for name, p in params:
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


def train_step(model: ACT, lr_batch: np.ndarray, hr_batch: np.ndarray, state: AdamState,
               lr: float, cfg: TrainConfig) -> float:
    params = [(n, p) for n, p in model.named_parameters() if p.trainable]
    try:
        loss = l1_loss(model(lr_batch), hr_batch)
    except NonFiniteError as exc:
        raise TrainingError(f"non-finite activations at step {state.t + 1}: {exc}") from exc
    value = loss.item()
    grads = T.backward(loss, params)
    adam_step(params, grads, state, lr, cfg)
    return value


def split_corpus(paths: list[Path]) -> tuple[list[Path], list[Path]]:
    """Fixed 90/10 split keyed by a hash of each filename."""
    train, held = [], []
    for p in paths:
        bucket = int(hashlib.sha1(p.name.encode()).hexdigest(), 16) % 10
        (held if bucket == 0 else train).append(p)
    if not train:
        train, held = held, []
    return train, held


class PatchSampler:
    """Seeded stream of (LR, HR) batches cut from a list of HR images."""

    def __init__(self, images: list[np.ndarray], scale: int, cfg: TrainConfig) -> None:
        self.images, self.scale, self.cfg = images, scale, cfg
        self.hr_size = cfg.patch_size * scale
        for img in images:
            if min(img.shape[-2:]) < self.hr_size:
                raise CorpusError(f"image {img.shape[-2:]} smaller than HR patch {self.hr_size}")
        self.rng = np.random.default_rng(cfg.seed)
        self.fixed = self._draw(augment_on=False) if cfg.fixed_patches else None

    def _draw(self, augment_on: bool) -> tuple[np.ndarray, np.ndarray]:
        s, size = self.scale, self.hr_size
        lrs, hrs = [], []
        for _ in range(self.cfg.batch_size):
            img = self.images[self.rng.integers(len(self.images))]
            h, w = img.shape[-2:]
            y = int(self.rng.integers(0, (h - size) // s + 1)) * s
            x = int(self.rng.integers(0, (w - size) // s + 1)) * s
            hr = img[:, y:y + size, x:x + size]
            if augment_on:
                hr = augment(hr, int(self.rng.integers(8)))
            hrs.append(hr)
            lrs.append(bicubic_downscale(hr, s))
        return np.stack(lrs), np.stack(hrs)

    def next(self) -> tuple[np.ndarray, np.ndarray]:
        if self.fixed is not None:
            return self.fixed
        return self._draw(self.cfg.augment)


def evaluate_images(model: ACT, images: list[np.ndarray], scale: int) -> tuple[float, float]:
    """Mean PSNR/SSIM on Y of bicubic-degraded ``images`` with a ``scale``-pixel shave."""
    from .evaluation import super_resolve
    from .metrics import shave

    ps, ss = [], []
    for hr in images:
        h, w = hr.shape[-2:]
        hr = hr[:, :h - h % scale, :w - w % scale]
        sr = super_resolve(model, bicubic_downscale(hr, scale))
        a, b = shave(np.clip(sr, 0, 1), scale), shave(hr, scale)
        ps.append(psnr_y(a, b))
        ss.append(ssim_y(a, b))
    return float(np.mean(ps)), float(np.mean(ss))


def fit(model: ACT, sampler: PatchSampler, cfg: TrainConfig, log_path: str | Path | None = None,
        held_out: list[np.ndarray] | None = None) -> list[dict]:
    """Run ``cfg.total_steps`` Adam steps; returns (and optionally appends to CSV) the log rows."""
    state = AdamState()
    rows = []
    fh = None
    if log_path is not None:
        new = not Path(log_path).exists()
        fh = open(log_path, "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if new:
            writer.writeheader()
    try:
        for step in range(cfg.total_steps):
            lr = lr_at(step, cfg)
            lr_batch, hr_batch = sampler.next()
            loss = train_step(model, lr_batch, hr_batch, state, lr, cfg)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step + 1}")
            row = {"step": step + 1, "lr": lr, "loss": loss, "psnr": "", "ssim": ""}
            if held_out and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.total_steps):
                row["psnr"], row["ssim"] = evaluate_images(model, held_out, sampler.scale)
            rows.append(row)
            if fh is not None:
                writer.writerow(row)
            if (step + 1) % 100 == 0:
                log.info("step %d lr %.3g loss %.5f", step + 1, lr, loss)
    finally:
        if fh is not None:
            fh.close()
    return rows


def train_toy(model: ACT, corpus: str | Path, cfg: TrainConfig,
              log_path: str | Path | None = None) -> list[dict]:
    """Train ``model`` in place on PNG images from ``corpus``."""
    corpus = Path(corpus)
    if not corpus.is_dir():
        raise CorpusError(f"corpus directory not found: {corpus}")
    paths = list_images(corpus)
    if not paths:
        raise CorpusError(f"no PNG images in {corpus}")
    train_paths, held_paths = split_corpus(paths)
    scale = model.cfg.scale
    sampler = PatchSampler([read_png(p) for p in train_paths], scale, cfg)
    held = [read_png(p) for p in held_paths]
    return fit(model, sampler, cfg, log_path, held)
