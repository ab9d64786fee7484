"""Configuration dataclasses and the INI-style config file format.

A config file has up to two sections, ``[model]`` and ``[train]``, whose keys
are exactly the dataclass field names::

    [model]
    c = 32
    n_blocks = 2
    scale_set = 3, 6

    [train]
    total_steps = 2000
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError

FUSION_DIRECTIONS = ("none", "t_to_c", "c_to_t", "bidirectional")
LATERAL_MODES = ("concat", "sum")
ATTENTION_MODES = ("mhsa+csta", "mhsa_only", "csta_only")
BRANCHES = ("both", "transformer", "cnn")
TAILS = ("pixelshuffle", "restoration")


def large_token_count(h: int, w: int, size: int, stride: int) -> int:
    """Number of ``size×size`` windows at ``stride`` on an ``h×w`` canvas."""
    return ((h - size) // stride + 1) * ((w - size) // stride + 1)


@dataclass(frozen=True)
class FusionMode:
    direction: str = "bidirectional"
    lateral: str = "concat"

    def __post_init__(self) -> None:
        if self.direction not in FUSION_DIRECTIONS:
            raise ConfigurationError(f"fusion direction must be one of {FUSION_DIRECTIONS}, "
                                     f"got {self.direction!r}")
        if self.lateral not in LATERAL_MODES:
            raise ConfigurationError(f"lateral mode must be one of {LATERAL_MODES}, "
                                     f"got {self.lateral!r}")

    @property
    def width_factor(self) -> int:
        return 2 if self.lateral == "concat" else 1


@dataclass(frozen=True)
class CstaConfig:
    t: int = 3
    t_large: int = 6
    s_large: int = 3
    heads: int = 8
    scale_set: tuple[int, ...] = (3, 6)

    def __post_init__(self) -> None:
        ss = tuple(self.scale_set)
        object.__setattr__(self, "scale_set", ss)
        if len(ss) not in (1, 2, 3):
            raise ConfigurationError(f"scale_set must hold 1-3 token sizes, got {ss}")
        if any(b <= a for a, b in zip(ss, ss[1:])):
            raise ConfigurationError(f"scale_set must be strictly increasing, got {ss}")
        if ss[0] != self.t:
            raise ConfigurationError(f"scale_set must start at the token size {self.t}, got {ss}")
        if len(ss) == 2 and ss[1] != self.t_large:
            raise ConfigurationError(f"two-scale scale_set {ss} disagrees with t_large={self.t_large}")

    @property
    def n_splits(self) -> int:
        return 4 if len(self.scale_set) == 3 else 2

    def large_scales(self) -> list[tuple[int, int]]:
        """(token size, stride) of every re-tokenised branch."""
        if len(self.scale_set) == 1:
            return [(self.t, self.t)]
        return [(size, self.s_large) for size in self.scale_set[1:]]

    def check_geometry(self, h: int, w: int) -> None:
        n = (h // self.t) * (w // self.t)
        for size, stride in self.large_scales():
            if size > h or size > w:
                raise ConfigurationError(f"large token size {size} exceeds canvas {h}×{w}")
            if size > self.t:
                n_large = large_token_count(h, w, size, stride)
                if n_large >= n:
                    raise ConfigurationError(
                        f"large-token count n'={n_large} must be below n={n} "
                        f"(size {size}, stride {stride}, canvas {h}×{w})")


@dataclass(frozen=True)
class ModelConfig:
    c: int = 64
    n_blocks: int = 4
    t: int = 3
    t_large: int = 6
    s_large: int = 3
    r: int = 4
    heads: int = 8
    rcabs_per_block: int = 12
    reduction: int = 16
    scale: int = 2
    fusion: str = "bidirectional"
    lateral: str = "concat"
    attention: str = "mhsa+csta"
    branches: str = "both"
    scale_set: tuple[int, ...] = ()
    use_positional_embedding: bool = False
    patch_size: int = 48
    tail: str = "pixelshuffle"
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self) -> None:
        scale_set = tuple(int(v) for v in self.scale_set) or (self.t, self.t_large)
        object.__setattr__(self, "scale_set", scale_set)
        FusionMode(self.fusion, self.lateral)
        if self.attention not in ATTENTION_MODES:
            raise ConfigurationError(f"attention must be one of {ATTENTION_MODES}")
        if self.branches not in BRANCHES:
            raise ConfigurationError(f"branches must be one of {BRANCHES}")
        if self.tail not in TAILS:
            raise ConfigurationError(f"tail must be one of {TAILS}")
        if self.tail == "pixelshuffle" and self.scale not in (2, 3, 4):
            raise ConfigurationError(f"pixelshuffle tail supports scale 2, 3 or 4, got {self.scale}")
        if self.tail == "restoration" and self.scale != 1:
            raise ConfigurationError(f"restoration tail implies scale 1, got {self.scale}")
        for name in ("c", "n_blocks", "t", "t_large", "s_large", "r", "heads",
                     "rcabs_per_block", "reduction", "patch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.ln_eps <= 0:
            raise ConfigurationError("ln_eps must be positive")
        if self.c % self.reduction:
            raise ConfigurationError(f"reduction {self.reduction} must divide c={self.c}")
        if self.d % self.heads:
            raise ConfigurationError(f"heads={self.heads} must divide d={self.d}")
        if self.uses_csta:
            csta = self.csta
            if self.c % csta.n_splits:
                raise ConfigurationError(f"c={self.c} must split into {csta.n_splits} channel groups")
            if (self.d // csta.n_splits) % self.heads:
                raise ConfigurationError(
                    f"heads={self.heads} must divide the CSTA width {self.d // csta.n_splits}")
        if self.patch_size % self.t:
            raise ConfigurationError(f"patch_size {self.patch_size} not divisible by t={self.t}")

    # derived sizes
    @property
    def d(self) -> int:
        return self.c * self.t * self.t

    @property
    def d_large(self) -> int:
        return (self.c // 2) * self.t_large * self.t_large

    @property
    def csta(self) -> CstaConfig:
        return CstaConfig(self.t, self.t_large, self.s_large, self.heads, self.scale_set)

    @property
    def fusion_mode(self) -> FusionMode:
        return FusionMode(self.fusion, self.lateral)

    @property
    def uses_csta(self) -> bool:
        return self.attention != "mhsa_only" and self.branches != "cnn"

    @property
    def has_transformer(self) -> bool:
        return self.branches in ("both", "transformer")

    @property
    def has_cnn(self) -> bool:
        return self.branches in ("both", "cnn")

    @property
    def pad_multiple(self) -> int:
        """Spatial extents are padded to a multiple of every token size in use."""
        sizes = [self.t]
        if self.uses_csta:
            sizes += [size for size, _ in self.csta.large_scales()]
        return math.lcm(*sizes)

    @property
    def min_extent(self) -> int:
        return max([self.t] + ([s for s, _ in self.csta.large_scales()] if self.uses_csta else []))

    @property
    def pe_tokens(self) -> int:
        return (self.patch_size // self.t) ** 2

    def replace(self, **changes) -> "ModelConfig":
        derived = self.scale_set == (self.t, self.t_large)
        if derived and "scale_set" not in changes and ({"t", "t_large"} & set(changes)):
            changes["scale_set"] = ()
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["scale_set"] = list(self.scale_set)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        if "scale_set" in data:
            data["scale_set"] = tuple(data["scale_set"])
        return cls(**data)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    halving_period: int = 1000
    total_steps: int = 2000
    patch_size: int = 48
    augment: bool = True
    fixed_patches: bool = False
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("beta1", "beta2", "adam_eps", "batch_size", "halving_period",
                     "total_steps", "patch_size", "eval_every"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.lr0 < 0:
            raise ConfigurationError("lr0 must be non-negative")
        if not (self.beta1 < 1 and self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.halving_period > self.total_steps:
            raise ConfigurationError(
                f"halving_period {self.halving_period} exceeds total_steps {self.total_steps}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------- file format


def _parse_value(raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"not a boolean: {raw!r}")
    if isinstance(current, tuple):
        return tuple(int(v) for v in raw.replace("(", "").replace(")", "").split(",") if v.strip())
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def _section_to(cls, section):
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigurationError(f"unknown {cls.__name__} key {key!r}")
        try:
            kwargs[key] = _parse_value(raw, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    return cls(**kwargs)


def load_config(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    unknown = set(parser.sections()) - {"model", "train"}
    if unknown:
        raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
    model = _section_to(ModelConfig, parser["model"]) if parser.has_section("model") else ModelConfig()
    train = _section_to(TrainConfig, parser["train"]) if parser.has_section("train") else TrainConfig()
    return model, train


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def dump_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    lines = ["[model]"]
    lines += [f"{f.name} = {_format_value(getattr(model, f.name))}" for f in fields(model)]
    if train is not None:
        lines += ["", "[train]"]
        lines += [f"{f.name} = {_format_value(getattr(train, f.name))}" for f in fields(train)]
    return "\n".join(lines) + "\n"


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int | None
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    tool_version: str = ""
    wall_time: float = 0.0
