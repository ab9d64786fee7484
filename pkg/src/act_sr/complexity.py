"""Closed-form parameter and FLOP accounting.

Counting convention: one multiply-accumulate (MAC) is one FLOP.  Convolutions,
linear layers and the two attention matrix products are counted; bias adds,
activations, normalisation, softmax, pooling and residual additions are not.

The formulas here are written from the layer definitions, independently of
the modules; tests hold them equal to ``ACT.num_parameters()`` and to a
MAC-instrumented forward pass.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, large_token_count
from .model import padded_extent


def attention_cost(n: int, n_large: int, d: int) -> tuple[int, int]:
    """Attention-core cost of self-attention and of cross-scale attention.

    Returns ``(n²d + nd², n·n'·d + (n + n')d²)``.
    """
    return n * n * d + n * d * d, n * n_large * d + (n + n_large) * d * d


def _conv(cin: int, cout: int, k: int) -> int:
    return cin * cout * k * k + cout


def _lin(i: int, o: int) -> int:
    return i * o + o


@dataclass
class ComplexityReport:
    params: dict[str, int] = field(default_factory=dict)
    flops: dict[str, int] = field(default_factory=dict)
    attention_terms: dict[str, int] = field(default_factory=dict)
    geometry: tuple[int, int] | None = None

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    def rows(self) -> list[tuple[str, int, int]]:
        keys = list(dict.fromkeys(list(self.params) + list(self.flops)))
        return [(k, self.params.get(k, 0), self.flops.get(k, 0)) for k in keys]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["component", "params", "flops"])
        writer.writerows(self.rows())
        writer.writerow(["total", self.total_params, self.total_flops])
        return buf.getvalue()

    def format_table(self) -> str:
        lines = [f"{'component':<14}{'params':>14}{'FLOPs':>18}"]
        for name, p, f in self.rows():
            lines.append(f"{name:<14}{p:>14,}{f:>18,}")
        lines.append(f"{'total':<14}{self.total_params:>14,}{self.total_flops:>18,}")
        lines.append(f"{'':<14}{self.total_params / 1e6:>13.2f}M{self.total_flops / 1e9:>17.2f}G")
        return "\n".join(lines)


# ---------------------------------------------------------------- parameters


def _mhsa_params(d: int) -> int:
    return _lin(d, 3 * d) + _lin(d, d)


def _csta_params(cfg: ModelConfig) -> int:
    csta = cfg.csta
    width = cfg.d // csta.n_splits
    groups = cfg.c // csta.n_splits
    total = _lin(cfg.d, cfg.d)
    for size, _ in csta.large_scales():
        dl = groups * size * size
        total += _lin(dl, width) + 2 * _lin(width, 3 * width) + _lin(width, dl)
    return total


def _ffn_params(d: int, r: int) -> int:
    return _lin(d, r * d) + _lin(r * d, d)


def _attn_kinds(cfg: ModelConfig) -> tuple[str, str]:
    return {"mhsa+csta": ("mhsa", "csta"), "mhsa_only": ("mhsa", "mhsa"),
            "csta_only": ("csta", "csta")}[cfg.attention]


def count_params(cfg: ModelConfig) -> ComplexityReport:
    c, d, N = cfg.c, cfg.d, cfg.n_blocks
    p: dict[str, int] = {}
    p["head"] = _conv(3, c, 3) + 4 * _conv(c, c, 3)
    if cfg.has_transformer:
        attn = sum(_mhsa_params(d) if k == "mhsa" else _csta_params(cfg) for k in _attn_kinds(cfg))
        p["transformer"] = N * (attn + 2 * _ffn_params(d, cfg.r) + 4 * 2 * d)
        if cfg.use_positional_embedding:
            p["pos_embed"] = cfg.pe_tokens * d
    if cfg.has_cnn:
        cr = c // cfg.reduction
        rcab = 2 * _conv(c, c, 3) + _conv(c, cr, 1) + _conv(cr, c, 1)
        p["cnn"] = N * (cfg.rcabs_per_block * rcab + _conv(c, c, 3))
    width = c * cfg.fusion_mode.width_factor
    if cfg.branches == "both" and cfg.fusion != "none":
        stack = 4 * 2 * _conv(width, width, 1)
        if cfg.fusion == "bidirectional":
            mid = _ffn_params(d, cfg.r) + _conv(c, c, 3)
        elif cfg.fusion == "c_to_t":
            mid = _conv(width, c, 1) + _ffn_params(d, cfg.r)
        else:
            mid = _conv(width, c, 1)
        p["fusion"] = N * stack + (N - 1) * mid + _conv(width, c, 3)
    else:
        p["fusion"] = _conv(width if cfg.branches == "both" else c, c, 3)
    factors = [] if cfg.tail == "restoration" else ([2, 2] if cfg.scale == 4 else [cfg.scale])
    p["tail"] = sum(_conv(c, c * f * f, 3) for f in factors) + _conv(c, 3, 3)
    return ComplexityReport(params=p)


# ---------------------------------------------------------------- FLOPs


def _mhsa_macs(n: int, d: int) -> dict[str, int]:
    return {"qkv": n * d * 3 * d, "score": n * n * d, "value": n * n * d, "out": n * d * d}


def _csta_macs(cfg: ModelConfig, H: int, W: int) -> dict[str, int]:
    csta = cfg.csta
    n = (H // cfg.t) * (W // cfg.t)
    width = cfg.d // csta.n_splits
    groups = cfg.c // csta.n_splits
    m = {"proj_in": 0, "qkv": 0, "score": 0, "value": 0, "proj_out": 0, "out": n * cfg.d * cfg.d}
    for size, stride in csta.large_scales():
        nl = large_token_count(H, W, size, stride)
        dl = groups * size * size
        m["proj_in"] += nl * dl * width
        m["qkv"] += (n + nl) * width * 3 * width
        m["score"] += 2 * n * nl * width
        m["value"] += 2 * n * nl * width
        m["proj_out"] += nl * width * dl
    return m


def count_flops(cfg: ModelConfig, h: int = 48, w: int = 48) -> ComplexityReport:
    """MAC counts for one ``3×h×w`` input (after the model's inference padding)."""
    report = count_params(cfg)
    H, W = padded_extent(h, cfg), padded_extent(w, cfg)
    report.geometry = (h, w)
    c, d, N, HW = cfg.c, cfg.d, cfg.n_blocks, H * W
    n = HW // (cfg.t * cfg.t)
    f: dict[str, int] = {}
    f["head"] = 3 * c * 9 * HW + 4 * c * c * 9 * HW
    if cfg.has_transformer:
        per_block = 0
        for i, kind in enumerate(_attn_kinds(cfg)):
            macs = _mhsa_macs(n, d) if kind == "mhsa" else _csta_macs(cfg, H, W)
            per_block += sum(macs.values())
            core = macs["score"] + macs["out"] + macs.get("proj_out", 0)
            report.attention_terms[f"{kind}{i + 1}"] = core
        per_block += 2 * 2 * n * d * cfg.r * d
        f["transformer"] = N * per_block
    if cfg.has_cnn:
        cr = c // cfg.reduction
        rcab = 2 * c * c * 9 * HW + 2 * c * cr
        f["cnn"] = N * (cfg.rcabs_per_block * rcab + c * c * 9 * HW)
    width = c * cfg.fusion_mode.width_factor
    if cfg.branches == "both" and cfg.fusion != "none":
        stack = 4 * 2 * width * width * HW
        ffn = 2 * n * d * cfg.r * d
        if cfg.fusion == "bidirectional":
            mid = ffn + c * c * 9 * HW
        elif cfg.fusion == "c_to_t":
            mid = width * c * HW + ffn
        else:
            mid = width * c * HW
        f["fusion"] = N * stack + (N - 1) * mid + width * c * 9 * HW
    else:
        f["fusion"] = (width if cfg.branches == "both" else c) * c * 9 * HW
    factors = [] if cfg.tail == "restoration" else ([2, 2] if cfg.scale == 4 else [cfg.scale])
    tail, res = 0, HW
    for fac in factors:
        tail += c * c * fac * fac * 9 * res
        res *= fac * fac
    f["tail"] = tail + c * 3 * 9 * res
    report.flops = f
    return report


_COMPONENT = re.compile(r"^([a-z_]+?)\d*$")


def measured_flops(model, h: int = 48, w: int = 48, seed: int = 0) -> dict[str, int]:
    """Run a MAC-counting forward on a random ``3×h×w`` input and group by component."""
    from . import tensor as T

    x = np.random.default_rng(seed).random((3, h, w))
    with T.no_grad(), T.count_macs() as counter:
        model(x)
    out: dict[str, int] = {}
    for scope, macs in counter.by_scope.items():
        root = scope.split("/", 1)[0]
        key = _COMPONENT.match(root).group(1) if root else "unscoped"
        key = "fusion" if key == "merge" else key
        out[key] = out.get(key, 0) + macs
    return out


def stride_sweep(cfg: ModelConfig, strides=(5, 4, 3), h: int = 48, w: int = 48):
    """(stride, n', params, FLOPs) rows for a sweep over the large-token stride."""
    rows = []
    for s in strides:
        c2 = cfg.replace(s_large=s)
        rep = count_flops(c2, h, w)
        H, W = padded_extent(h, c2), padded_extent(w, c2)
        rows.append((s, large_token_count(H, W, c2.t_large, s), rep.total_params, rep.total_flops))
    return rows
