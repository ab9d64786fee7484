"""The full network: head, two-branch body with fusion, and upsampling tail.

Inputs are RGB images in ``[0, 1]`` as ``3×h×w`` or ``b×3×h×w`` arrays.
Before the body runs, ``forward`` reflection-pads both spatial extents up to
the least multiple of ``cfg.pad_multiple`` that is at least
``max(extent, cfg.min_extent)`` and crops the upscaled output back to
``scale × extent``.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import TransformerBlock
from .cnn import CNNBlock
from .config import ModelConfig
from .errors import (ChecksumError, ConfigMismatchError, GeometryError, VersionError)
from .fusion import FusionBlock, lateral
from .nn import Conv2d, Module, trunc_normal
from .tensor import Parameter, Tensor, mac_scope
from .tokens import rearrange_to_image, tokenize


class ResBlock3x3(Module):
    def __init__(self, c: int, rng: np.random.Generator) -> None:
        self.conv1 = Conv2d(c, c, 3, rng)
        self.conv2 = Conv2d(c, c, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(T.relu(self.conv1(x)))


class Head(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        self.conv_in = Conv2d(3, cfg.c, 3, rng)
        self.blocks = [ResBlock3x3(cfg.c, rng) for _ in range(2)]
        self.min_extent = cfg.min_extent

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if h < self.min_extent or w < self.min_extent:
            raise GeometryError(f"input {h}×{w} is smaller than the largest token size "
                                f"{self.min_extent}")
        y = self.conv_in(x)
        for block in self.blocks:
            y = block(y)
        return y


class Body(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        N = cfg.n_blocks
        if cfg.use_positional_embedding and cfg.has_transformer:
            self.pos_embed = Parameter(trunc_normal(rng, (cfg.pe_tokens, cfg.d)))
        self.tblocks = [TransformerBlock(cfg, rng) for _ in range(N)] if cfg.has_transformer else []
        self.cblocks = ([CNNBlock(cfg.c, cfg.rcabs_per_block, cfg.reduction, rng) for _ in range(N)]
                        if cfg.has_cnn else [])
        self.fusions: list[FusionBlock] = []
        if cfg.branches == "both" and cfg.fusion != "none":
            self.fusions = [FusionBlock(cfg, i == N - 1, rng) for i in range(N)]
        else:
            wide = cfg.branches == "both" and cfg.lateral == "concat"
            self.merge = Conv2d(2 * cfg.c if wide else cfg.c, cfg.c, 3, rng)

    def __call__(self, f0: Tensor, capture: dict | None = None) -> Tensor:
        cfg = self.cfg
        grid = None
        if self.tblocks:
            grid = tokenize(f0, cfg.t)
            if cfg.use_positional_embedding:
                if grid.n != cfg.pe_tokens:
                    raise GeometryError(f"positional embedding is sized for {cfg.pe_tokens} tokens, "
                                        f"input yields {grid.n}")
                grid = grid.with_tokens(grid.tokens + self.pos_embed)
        feat = f0
        fused = None
        for i in range(cfg.n_blocks):
            if grid is not None:
                with mac_scope(f"transformer{i + 1}"):
                    grid = self.tblocks[i](grid)
            if self.cblocks:
                with mac_scope(f"cnn{i + 1}"):
                    feat = self.cblocks[i](feat)
            if capture is not None:
                if grid is not None:
                    capture[f"T{i + 1}"] = rearrange_to_image(grid).data
                if self.cblocks:
                    capture[f"F{i + 1}"] = feat.data
            if self.fusions:
                with mac_scope(f"fusion{i + 1}"):
                    if i == cfg.n_blocks - 1:
                        fused = self.fusions[i](grid, feat)
                    else:
                        d_tokens, d_feat = self.fusions[i](grid, feat)
                        if d_tokens is not None:
                            grid = grid.with_tokens(grid.tokens + d_tokens)
                        if d_feat is not None:
                            feat = feat + d_feat
        if fused is None:
            with mac_scope("merge"):
                if cfg.branches == "both":
                    joined = lateral(rearrange_to_image(grid), feat, cfg.lateral)
                elif grid is not None:
                    joined = rearrange_to_image(grid)
                else:
                    joined = feat
                fused = self.merge(joined)
        return f0 + fused


class Tail(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        c = cfg.c
        if cfg.tail == "restoration":
            self.factors: list[int] = []
        elif cfg.scale == 4:
            self.factors = [2, 2]
        else:
            self.factors = [cfg.scale]
        self.ups = [Conv2d(c, c * f * f, 3, rng) for f in self.factors]
        self.conv_out = Conv2d(c, 3, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        for conv, f in zip(self.ups, self.factors):
            x = T.pixel_shuffle(conv(x), f)
        return self.conv_out(x)


def _reflect_indices(n: int, target: int) -> np.ndarray:
    idx = np.arange(target)
    if n == 1:
        return np.zeros(target, dtype=int)
    period = 2 * (n - 1)
    idx = idx % period
    return np.where(idx < n, idx, period - idx)


def padded_extent(extent: int, cfg: ModelConfig) -> int:
    m = cfg.pad_multiple
    need = max(extent, cfg.min_extent)
    return -(-need // m) * m


class ACT(Module):
    """Hybrid CNN/transformer super-resolution network."""

    def __init__(self, cfg: ModelConfig) -> None:
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.head_net = Head(cfg, rng)
        self.body_net = Body(cfg, rng)
        self.tail_net = Tail(cfg, rng)
        self.assign_names()

    def named_parameters(self, prefix: str = ""):
        for key, mod in (("head", self.head_net), ("body", self.body_net), ("tail", self.tail_net)):
            yield from mod.named_parameters(f"{prefix}{key}.")

    def head(self, x: Tensor) -> Tensor:
        with mac_scope("head"):
            return self.head_net(T.as_tensor(x))

    def body(self, f0: Tensor, capture: dict | None = None) -> Tensor:
        return self.body_net(f0, capture)

    def tail(self, f: Tensor) -> Tensor:
        with mac_scope("tail"):
            return self.tail_net(f)

    def pad(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        H, W = padded_extent(h, self.cfg), padded_extent(w, self.cfg)
        if (H, W) == (h, w):
            return x
        rows, cols = _reflect_indices(h, H), _reflect_indices(w, W)
        lead = (slice(None),) * (x.ndim - 2)
        return x[lead + (rows,)][lead + (slice(None), cols)]

    def __call__(self, x, capture: dict | None = None) -> Tensor:
        x = T.as_tensor(x)
        h, w = x.shape[-2:]
        if x.shape[-3] != 3:
            raise GeometryError(f"expected an RGB input, got shape {x.shape}")
        y = self.tail(self.body(self.head(self.pad(x)), capture))
        s = self.cfg.scale
        if y.shape[-2:] != (h * s, w * s):
            lead = (slice(None),) * (y.ndim - 2)
            y = y[lead + (slice(0, h * s), slice(0, w * s))]
        if capture is not None:
            for key in list(capture):
                capture[key] = capture[key][..., :h, :w]
        return y

    forward = __call__


def forward(image, model: ACT) -> np.ndarray:
    """Inference without graph recording; returns a numpy array."""
    with T.no_grad():
        return model(image).data


# ---------------------------------------------------------------- stub weights


def make_identity_model(cfg: ModelConfig) -> ACT:
    """Weights that make the network an exact nearest-neighbour upscaler.

    The head copies RGB into the first three channels, the body is zeroed
    (global residual only) and each tail stage replicates channels across
    sub-pixels.  The result commutes exactly with flips and 90° rotations.
    """
    if cfg.c < 3:
        raise GeometryError("identity stub needs at least 3 feature channels")
    model = ACT(cfg)
    model.zero_()
    w = model.head_net.conv_in.weight.data
    for k in range(3):
        w[k, k, 1, 1] = 1.0
    for conv, f in zip(model.tail_net.ups, model.tail_net.factors):
        for ch in range(cfg.c):
            for sub in range(f * f):
                conv.weight.data[ch * f * f + sub, ch, 1, 1] = 1.0
    for k in range(3):
        model.tail_net.conv_out.weight.data[k, k, 1, 1] = 1.0
    return model


# ---------------------------------------------------------------- weight files

MAGIC = b"ACTSRW01"
FORMAT_VERSION = 1


def save_weights(model: ACT, path: str | Path) -> None:
    """Write ``model`` to ``path``.

    Layout (little-endian): magic, u32 version, u32 config length, config
    JSON, u32 tensor count, then per tensor (u16 name length, name, u8 ndim,
    u32 dims, u64 payload offset, u32 CRC-32), u32 CRC-32 of everything so
    far, then the raw float64 payload.
    """
    header = bytearray(MAGIC)
    cfg_bytes = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    header += struct.pack("<II", FORMAT_VERSION, len(cfg_bytes)) + cfg_bytes
    params = list(model.named_parameters())
    header += struct.pack("<I", len(params))
    payload = bytearray()
    for name, p in params:
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        encoded = name.encode()
        header += struct.pack("<H", len(encoded)) + encoded
        header += struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape)
        header += struct.pack("<QI", len(payload), zlib.crc32(raw))
        payload += raw
    header += struct.pack("<I", zlib.crc32(bytes(header)))
    tmp = Path(str(path) + ".part")
    tmp.write_bytes(bytes(header) + bytes(payload))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf, self.pos = buf, 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise ChecksumError("weight file is truncated")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ChecksumError("weight file is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def _check_config(found: ModelConfig, expected: ModelConfig) -> None:
    diffs = [f"{k}: file={v!r}, requested={expected.to_dict()[k]!r}"
             for k, v in found.to_dict().items()
             if k != "seed" and v != expected.to_dict()[k]]
    if diffs:
        raise ConfigMismatchError("weight file config mismatch; " + "; ".join(diffs))


def load_weights(path: str | Path, expected: ModelConfig | None = None) -> ACT:
    """Read a weight file; raise before building anything if it is inconsistent."""
    buf = Path(path).read_bytes()
    rd = _Reader(buf)
    if rd.raw(len(MAGIC)) != MAGIC:
        raise ChecksumError("not an act_sr weight file (bad magic)")
    (version, cfg_len) = rd.take("<II")
    if version != FORMAT_VERSION:
        raise VersionError(f"weight file version {version}, this build reads {FORMAT_VERSION}")
    try:
        cfg = ModelConfig.from_dict(json.loads(rd.raw(cfg_len)))
    except (ValueError, TypeError) as exc:
        raise ChecksumError(f"weight file config block is corrupt: {exc}") from exc
    (count,) = rd.take("<I")
    entries = []
    for _ in range(count):
        (nlen,) = rd.take("<H")
        name = rd.raw(nlen).decode()
        (ndim,) = rd.take("<B")
        shape = rd.take(f"<{ndim}I")
        offset, crc = rd.take("<QI")
        entries.append((name, shape, offset, crc))
    (header_crc,) = struct.unpack_from("<I", buf, rd.pos) if rd.pos + 4 <= len(buf) else (None,)
    if header_crc is None or zlib.crc32(buf[:rd.pos]) != header_crc:
        raise ChecksumError("weight file header checksum mismatch")
    base = rd.pos + 4
    state = {}
    for name, shape, offset, crc in entries:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        raw = buf[base + offset: base + offset + nbytes]
        if len(raw) != nbytes or zlib.crc32(raw) != crc:
            raise ChecksumError(f"checksum mismatch for tensor {name!r}")
        state[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if expected is not None:
        _check_config(cfg, expected)
    model = ACT(cfg)
    model.load_state_dict(state)
    return model
