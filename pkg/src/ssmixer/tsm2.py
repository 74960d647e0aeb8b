"""Multivariate forecaster built from selective token and channel mixer blocks.

history ``x[..., M, T]`` (optionally widened with projected static and future
covariates) -> per-variate patches embedded to width ``D`` -> blocks of
(causal time mixer, bidirectional variate mixer) joined by weighted averaging,
each mixer preceded by a 2-D norm over (patch, feature) -> shared linear head
per variate -> ``[..., M, H]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .mixers import ChannelMixer, TokenMixer
from .nn import Linear, Module, parameter
from .rng import SplitMix64
from .tensor import Tensor, as_tensor, concat, norm2d, reshape, swapaxes
from .wiring import MixerStack, Residual


@dataclass
class SeriesBatch:
    x: np.ndarray
    horizon: int
    static: np.ndarray | None = None
    future: np.ndarray | None = None

    def __post_init__(self):
        M = self.x.shape[-2]
        if self.static is not None and self.static.shape[-2] != M:
            raise DimensionError(f"static covariates cover {self.static.shape[-2]} variates, x has {M}")
        if self.future is not None and self.future.shape[-3] != M:
            raise DimensionError(f"future covariates cover {self.future.shape[-3]} variates, x has {M}")


@dataclass
class Tsm2Config:
    n_vars: int = 7
    history: int = 96
    horizon: int = 24
    patch_len: int = 8
    n_blocks: int = 2
    width: int = 16
    d_state: int = 8
    static_dim: int = 0
    future_len: int = 0
    future_dim: int = 0
    dt_rank: object = None
    init_mode: str = "residual"
    instance_norm: bool = False
    engine: str = "parallel"

    @classmethod
    def from_dict(cls, d: dict) -> "Tsm2Config":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"model"}
        if unknown:
            raise ConfigError(f"unknown TSM2 config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, text: str) -> "Tsm2Config":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"model": "tsm2", **asdict(self)}

    @property
    def input_len(self) -> int:
        segments = 1 + (self.static_dim > 0) + (self.future_dim > 0)
        return segments * self.history

    @property
    def n_patches(self) -> int:
        return -(-self.input_len // self.patch_len)

    def validate(self) -> None:
        if self.history < self.patch_len:
            raise ConfigError("history shorter than one patch")
        if self.n_vars < 1 or self.n_blocks < 1 or self.width < 1:
            raise ConfigError("n_vars, n_blocks and width must be positive")
        if (self.future_dim > 0) != (self.future_len > 0):
            raise ConfigError("future_len and future_dim must both be set or both be 0")


class Norm2d(Module):
    """Joint standardisation over (patch, feature) with per-feature affine."""

    def __init__(self, width: int):
        self.scale = parameter(np.ones(width))
        self.shift = parameter(np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return norm2d(x, self.scale, self.shift)


class VariateMixer(Module):
    """Bidirectional channel mixer scanning across variates at each patch."""

    def __init__(self, width: int, rng: SplitMix64, **kw):
        self.mixer = ChannelMixer(width, rng, **kw)

    def __call__(self, x: Tensor) -> Tensor:
        # x[..., M, n, D] -> per patch, a length-M sequence of D features
        return swapaxes(self.mixer.mix_transposed(swapaxes(x, -3, -2)), -3, -2)


def patchify_series(x: Tensor, patch_len: int) -> Tensor:
    """``[..., M, T] -> [..., M, ceil(T/P), P]``, left-padding with zeros."""
    x = as_tensor(x)
    *lead, M, T = x.shape
    pad = (-T) % patch_len
    if pad:
        x = concat([Tensor(np.zeros(tuple(lead) + (M, pad))), x], axis=-1)
    return reshape(x, tuple(lead) + (M, (T + pad) // patch_len, patch_len))


class AuxiliaryAlign(Module):
    """Projects static ``S[..., M, C_S]`` and future ``Z[..., M, T_Z, C_Z]`` to ``[..., M, T]``."""

    def __init__(self, cfg: Tsm2Config, rng: SplitMix64):
        self.history = cfg.history
        if cfg.static_dim:
            self.static_proj = Linear(cfg.static_dim, cfg.history, rng)
        if cfg.future_dim:
            F = cfg.future_len * cfg.future_dim
            self.future_mixer = ChannelMixer(F, rng, N=cfg.d_state, engine=cfg.engine)
            self.future_proj = Linear(F, cfg.history, rng)

    def __call__(self, x, static=None, future=None) -> Tensor:
        x = as_tensor(x)
        parts = [x]
        if future is not None:
            if not hasattr(self, "future_mixer"):
                raise ConfigError("model was built without future covariates")
            future = as_tensor(future)
            *lead, M, TZ, CZ = future.shape
            zf = reshape(future, tuple(lead) + (M, TZ * CZ))
            parts.append(self.future_proj(self.future_mixer.mix_transposed(zf)))
        if static is not None:
            if not hasattr(self, "static_proj"):
                raise ConfigError("model was built without static covariates")
            parts.append(self.static_proj(as_tensor(static)))
        return concat(parts, axis=-1) if len(parts) > 1 else x


def align_auxiliary(x, static, future, module: AuxiliaryAlign) -> Tensor:
    return module(x, static, future)


class Tsm2(Module):
    def __init__(self, cfg: Tsm2Config, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = SplitMix64(seed)
        D = cfg.width
        self.align = AuxiliaryAlign(cfg, rng)
        self.embed = Linear(cfg.patch_len, D, rng)
        groups = [[Residual(Norm2d(D), TokenMixer(D, rng, N=cfg.d_state, dt_rank=cfg.dt_rank,
                                                  engine=cfg.engine))]
                  for _ in range(cfg.n_blocks)]
        channels = [Residual(Norm2d(D), VariateMixer(D, rng, N=cfg.d_state, dt_rank=cfg.dt_rank,
                                                     engine=cfg.engine))
                    for _ in range(cfg.n_blocks)]
        self.blocks = MixerStack(groups, channels, cfg.init_mode)
        self.head = Linear(cfg.n_patches * D, cfg.horizon, rng)

    def tokens(self, x, static=None, future=None) -> Tensor:
        return self.embed(patchify_series(self.align(x, static, future), self.cfg.patch_len))

    def __call__(self, x, static=None, future=None) -> Tensor:
        x = as_tensor(x)
        if x.shape[-2:] != (self.cfg.n_vars, self.cfg.history):
            raise DimensionError(
                f"expected history [{self.cfg.n_vars}, {self.cfg.history}], got {x.shape}")
        last = None
        if self.cfg.instance_norm:
            last = Tensor(x.data[..., -1:])
            x = x - Tensor(np.broadcast_to(last.data, x.shape))
        h = self.blocks(self.tokens(x, static, future))
        *lead, M, n, D = h.shape
        y = self.head(reshape(h, tuple(lead) + (M, n * D)))
        if last is not None:
            y = y + Tensor(np.broadcast_to(last.data, y.shape))
        return y


def tsm2_forward(batch: SeriesBatch, config: Tsm2Config, model: Tsm2 | None = None,
                 seed: int = 0) -> Tensor:
    if batch.horizon != config.horizon:
        raise ConfigError(f"batch horizon {batch.horizon} != model horizon {config.horizon}")
    model = model if model is not None else Tsm2(config, seed)
    return model(batch.x, batch.static, batch.future)
