"""Hierarchical vision model built from selective token and channel mixer blocks.

image -> 4x4 patch stem -> stages (2x2 patch merge, then weighted-average
stacks of cross-scan token blocks and channel blocks) -> layer norm ->
global average pool -> linear head.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError, ValidationError
from .mixers import ChannelMixer, CrossScanTokenMixer
from .nn import LayerNorm, Linear, Module
from .rng import SplitMix64
from .tensor import Tensor, as_tensor, layer_norm, mean, reshape, transpose
from .wiring import MixerStack, Residual


class CrossScan(NamedTuple):
    row_major: np.ndarray
    row_major_rev: np.ndarray
    col_major: np.ndarray
    col_major_rev: np.ndarray


def cross_scan_paths(H: int, W: int) -> CrossScan:
    """Four flattenings of an ``H x W`` grid (indices are row-major positions).

    Row-major from the top-left, its reversal from the bottom-right,
    column-major, and its reversal.
    """
    if H < 1 or W < 1:
        raise ValidationError("grid dims must be positive")
    grid = np.arange(H * W).reshape(H, W)
    rm = grid.reshape(-1)
    cm = grid.T.reshape(-1)
    return CrossScan(rm, rm[::-1].copy(), cm, cm[::-1].copy())


def patchify_image(image: Tensor, patch: int) -> Tensor:
    """``[..., C, H, W] -> [..., H/p, W/p, C*p*p]`` non-overlapping patches."""
    image = as_tensor(image)
    *lead, C, H, W = image.shape
    if H % patch or W % patch:
        raise DimensionError(f"image {H}x{W} not divisible by patch {patch}")
    h, w = H // patch, W // patch
    n = len(lead)
    x = reshape(image, tuple(lead) + (C, h, patch, w, patch))
    x = transpose(x, tuple(range(n)) + (n + 1, n + 3, n, n + 2, n + 4))
    return reshape(x, tuple(lead) + (h, w, C * patch * patch))


class Stem(Module):
    """Patch embedding equivalent to a ``patch x patch`` stride-``patch`` conv."""

    def __init__(self, in_chans: int, width: int, patch: int, rng: SplitMix64):
        self.patch = patch
        self.proj = Linear(in_chans * patch * patch, width, rng)

    def __call__(self, image: Tensor) -> Tensor:
        return self.proj(patchify_image(image, self.patch))


def stem(image: Tensor, module: Stem) -> Tensor:
    return module(image)


class Downsample(Module):
    """2x2 patch merge: concat (top-left, top-right, bottom-left, bottom-right), then C*4 -> C*2."""

    def __init__(self, width: int, rng: SplitMix64):
        self.width = width
        self.proj = Linear(4 * width, 2 * width, rng)

    def __call__(self, tokens: Tensor) -> Tensor:
        *lead, h, w, C = tokens.shape
        if h % 2 or w % 2:
            raise DimensionError(f"cannot merge odd token grid {h}x{w}")
        n = len(lead)
        x = reshape(tokens, tuple(lead) + (h // 2, 2, w // 2, 2, C))
        x = transpose(x, tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4))
        return self.proj(reshape(x, tuple(lead) + (h // 2, w // 2, 4 * C)))


def downsample(tokens: Tensor, module: Downsample) -> Tensor:
    return module(tokens)


class ChannelBlock2D(Module):
    """Residual channel block on a token grid: flatten, mix channels, restore."""

    def __init__(self, width: int, n_tokens: int, hidden: int, rng: SplitMix64, **kw):
        self.norm = LayerNorm(width)
        self.mixer = ChannelMixer(n_tokens, rng, E=hidden, **kw)

    def __call__(self, x: Tensor) -> Tensor:
        *lead, h, w, C = x.shape
        flat = reshape(x, tuple(lead) + (h * w, C))
        y = flat + self.mixer(self.norm(flat))
        return reshape(y, tuple(lead) + (h, w, C))


@dataclass
class Vim2Config:
    stage_widths: list = field(default_factory=lambda: [96, 192, 384, 768])
    token_depths: list = field(default_factory=lambda: [2, 2, 6, 2])
    channel_depths: list = field(default_factory=lambda: [1, 1, 3, 1])
    patch_size: int = 4
    num_classes: int = 1000
    channel_scan_mode: str = "bidirectional"
    reduction: str = "none"
    image_size: int = 224
    in_chans: int = 3
    d_state: int = 16
    directions: int = 4
    dt_rank: object = "auto"
    init_mode: str = "residual"
    engine: str = "parallel"

    @classmethod
    def tiny(cls, **kw) -> "Vim2Config":
        return cls(**kw)

    @classmethod
    def desk(cls, **kw) -> "Vim2Config":
        base = dict(stage_widths=[8, 16, 32, 64], token_depths=[1, 1, 2, 1],
                    channel_depths=[1, 1, 1, 1], image_size=32, num_classes=10, d_state=4)
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "Vim2Config":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"model"}
        if unknown:
            raise ConfigError(f"unknown ViM2 config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, text: str) -> "Vim2Config":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"model": "vim2", **asdict(self)}

    def grid_sizes(self) -> list[int]:
        g = self.image_size // self.patch_size
        return [g // 2 ** k for k in range(len(self.stage_widths))]

    def resolve_dt_rank(self, width: int):
        if self.dt_rank == "auto":
            return math.ceil(width / 16)
        return None if self.dt_rank in (None, "full") else int(self.dt_rank)

    def validate(self) -> None:
        w, t, c = self.stage_widths, self.token_depths, self.channel_depths
        if not (len(w) == len(t) == len(c)) or not w:
            raise ConfigError("stage_widths, token_depths, channel_depths must have equal length")
        if any(w[k + 1] != 2 * w[k] for k in range(len(w) - 1)):
            raise ConfigError(f"stage widths must double per stage: {w}")
        if any(d < 1 for d in t):
            raise ConfigError("every stage needs at least one token mixer")
        for tk, ck in zip(t, c):
            if ck < 0 or (ck and tk % ck):
                raise ConfigError(f"channel depth {ck} must divide token depth {tk}")
        div = self.patch_size * 2 ** (len(w) - 1)
        if self.image_size % div:
            raise ConfigError(f"image_size {self.image_size} must be divisible by {div}")
        if self.reduction not in ("none", "mlp_mixer", "vmamba"):
            raise ConfigError(f"unknown reduction {self.reduction!r}")
        if self.reduction == "vmamba" and any(c):
            raise ConfigError("vmamba reduction removes channel mixers: channel_depths must be 0")
        if self.reduction == "mlp_mixer" and list(c) != list(t):
            raise ConfigError("mlp_mixer reduction pairs every token MLP with a channel MLP")
        if self.channel_scan_mode not in ("bidirectional", "per-scan"):
            raise ConfigError(f"unknown channel_scan_mode {self.channel_scan_mode!r}")


class Stage(Module):
    def __init__(self, cfg: Vim2Config, k: int, rng: SplitMix64):
        C = cfg.stage_widths[k]
        g = cfg.grid_sizes()[k]
        t, c = cfg.token_depths[k], cfg.channel_depths[k]
        if k > 0:
            self.downsample = Downsample(C // 2, rng)
        seq_ops = cfg.reduction != "mlp_mixer"
        dt_rank = cfg.resolve_dt_rank(C)
        common = dict(use_ssm=seq_ops, use_conv=seq_ops, engine=cfg.engine)

        def token_block():
            return Residual(LayerNorm(C), CrossScanTokenMixer(
                C, rng, N=cfg.d_state, directions=cfg.directions, dt_rank=dt_rank, **common))

        if c == 0:
            groups = [[token_block()] for _ in range(t)]
            channels = [None] * t
        else:
            per = t // c
            groups = [[token_block() for _ in range(per)] for _ in range(c)]
            paths = list(cross_scan_paths(g, g))[: cfg.directions] if cfg.channel_scan_mode == "per-scan" else None
            channels = [ChannelBlock2D(C, g * g, 2 * C, rng, N=cfg.d_state, dt_rank=dt_rank,
                                       mode=cfg.channel_scan_mode, paths=paths, **common)
                        for _ in range(c)]
        if cfg.reduction == "vmamba":
            mode, frozen = "chain", True
        elif cfg.reduction == "mlp_mixer":
            mode, frozen = "alternate", True
        else:
            mode, frozen = cfg.init_mode, False
        self.blocks = MixerStack(groups, channels, mode, frozen)

    def __call__(self, x: Tensor) -> Tensor:
        if hasattr(self, "downsample"):
            x = self.downsample(x)
        return self.blocks(x)


class Vim2(Module):
    def __init__(self, cfg: Vim2Config, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = SplitMix64(seed)
        self.stem = Stem(cfg.in_chans, cfg.stage_widths[0], cfg.patch_size, rng)
        self.stages = [Stage(cfg, k, rng) for k in range(len(cfg.stage_widths))]
        self.norm = LayerNorm(cfg.stage_widths[-1])
        self.head = Linear(cfg.stage_widths[-1], cfg.num_classes, rng)

    def features(self, image) -> Tensor:
        image = as_tensor(image)
        if image.shape[-2:] != (self.cfg.image_size, self.cfg.image_size):
            raise DimensionError(f"expected {self.cfg.image_size}px images, got {image.shape}")
        x = self.stem(image)
        for stage in self.stages:
            x = stage(x)
        return x

    def __call__(self, image) -> Tensor:
        image = as_tensor(image)
        if image.ndim == 3:  # single image -> logits [num_classes]
            return reshape(self(reshape(image, (1,) + image.shape)), (self.cfg.num_classes,))
        x = self.norm(self.features(image))
        return self.head(mean(x, axis=(-3, -2)))

    def param_breakdown(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for name, p in self.named_parameters():
            parts = name.split(".")
            if parts[0] == "stages":
                sub = parts[2]
                if sub == "blocks":
                    kind = parts[3]
                    sub = {"token_groups": "token_mixers", "channel_blocks": "channel_mixers",
                           "avg": "weighted_averaging"}[kind]
                key = f"stages.{parts[1]}.{sub}"
            else:
                key = parts[0]
            out[key] = out.get(key, 0) + p.size
        return out


def vim2_forward(image, config: Vim2Config, model: Vim2 | None = None, seed: int = 0) -> Tensor:
    model = model if model is not None else Vim2(config, seed)
    return model(image)
