"""Selective token and channel mixers.

Both mixers map ``x[..., L, D]`` to the same shape. The token mixer scans
along ``L``; the channel mixer transposes and scans along ``D`` with the token
axis as its feature axis, once forwards and once on the channel-flipped input.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError, ValidationError
from .nn import Linear, Module, parameter, uniform_init
from .rng import SplitMix64
from .ssm import SsmParams
from .tensor import (Tensor, conv1d_causal, depthwise_conv2d, flip, gather_permute,
                     inverse_permute, reshape, silu, stack_sum, swapaxes)


def _conv1d_kernel(rng: SplitMix64, E: int, K: int) -> np.ndarray:
    return uniform_init(rng, K, (E, K))


class TokenMixer(Module):
    """Unidirectional selective token mixer over ``x[..., L, D]``.

    main = SSM(silu(conv(in_proj(x)))), gate = silu(mlp_proj(x)),
    out = out_proj(main * gate). ``use_ssm`` / ``use_conv`` switch the two
    sequence operators off (the MLP-Mixer reduction).
    """

    def __init__(self, D: int, rng: SplitMix64, E: int | None = None, N: int = 16,
                 K: int = 4, dt_rank: int | None = None, use_skip: bool = True,
                 use_ssm: bool = True, use_conv: bool = True, engine: str = "parallel"):
        E = 2 * D if E is None else E
        self.D, self.E, self.K = D, E, K
        self._use_ssm, self._use_conv, self._engine = use_ssm, use_conv, engine
        self.in_proj = Linear(D, E, rng)
        self.mlp_proj = Linear(D, E, rng)
        if use_conv:
            self.conv_kernel = parameter(_conv1d_kernel(rng, E, K))
            self.conv_bias = parameter(np.zeros(E))
        if use_ssm:
            self.ssm = SsmParams(E, N, rng, dt_rank, use_skip)
        self.out_proj = Linear(E, D, rng, zero=True)

    def main_branch(self, x: Tensor) -> Tensor:
        u = self.in_proj(x)
        if self._use_conv:
            u = conv1d_causal(u, self.conv_kernel, self.conv_bias, time_axis=-2)
        u = silu(u)
        return self.ssm(u, self._engine) if self._use_ssm else u

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.D:
            raise DimensionError(f"token mixer expects width {self.D}, got {x.shape}")
        gate = silu(self.mlp_proj(x))
        return self.out_proj(self.main_branch(x) * gate)


def token_mix_uni(x: Tensor, mixer: TokenMixer) -> Tensor:
    return mixer(x)


def token_mix_multi(x: Tensor, paths: Sequence, mixers: Sequence[TokenMixer]) -> Tensor:
    """Sum over scan paths of ``inverse_permute(mixer_s(permute(x, path_s)))``."""
    if len(paths) != len(mixers):
        raise ValidationError(f"{len(paths)} scan paths but {len(mixers)} mixers")
    outs = [inverse_permute(m(gather_permute(x, p, axis=-2)), p, axis=-2)
            for p, m in zip(paths, mixers)]
    return stack_sum(outs)


class CrossScanTokenMixer(Module):
    """Token mixer for a 2-D grid ``x[..., H, W, C]``.

    Projections, the 3x3 depthwise convolution and the gate are shared; each
    scan direction owns its selective SSM parameters. The grid stays 2-D
    through the convolution and is flattened only to feed the scans.
    """

    def __init__(self, C: int, rng: SplitMix64, N: int = 16, directions: int = 4,
                 dt_rank: int | None = None, use_skip: bool = True, use_ssm: bool = True,
                 use_conv: bool = True, engine: str = "parallel"):
        if directions not in (1, 2, 4):
            raise ValidationError("directions must be 1, 2 or 4")
        E = 2 * C
        self.C, self.E, self.directions = C, E, directions
        self._use_ssm, self._use_conv, self._engine = use_ssm, use_conv, engine
        self.in_proj = Linear(C, E, rng)
        self.mlp_proj = Linear(C, E, rng)
        if use_conv:
            self.conv_kernel = parameter(uniform_init(rng, 9, (E, 3, 3)))
            self.conv_bias = parameter(np.zeros(E))
        if use_ssm:
            self.ssm = [SsmParams(E, N, rng, dt_rank, use_skip) for _ in range(directions)]
        self.out_proj = Linear(E, C, rng, zero=True)

    def __call__(self, x: Tensor) -> Tensor:
        *lead, H, W, C = x.shape
        if C != self.C:
            raise DimensionError(f"cross-scan mixer expects width {self.C}, got {x.shape}")
        u = self.in_proj(x)
        if self._use_conv:
            u = depthwise_conv2d(u, self.conv_kernel, self.conv_bias, channels_last=True)
        u = reshape(silu(u), tuple(lead) + (H * W, self.E))
        if self._use_ssm:
            from .vim2 import cross_scan_paths

            paths = cross_scan_paths(H, W)[: self.directions]
            main = stack_sum([
                inverse_permute(ssm(gather_permute(u, p, axis=-2), self._engine), p, axis=-2)
                for p, ssm in zip(paths, self.ssm)
            ])
        else:
            main = u
        gate = reshape(silu(self.mlp_proj(x)), tuple(lead) + (H * W, self.E))
        y = self.out_proj(main * gate)
        return reshape(y, tuple(lead) + (H, W, C))


class _ChannelBranch(Module):
    def __init__(self, F: int, E: int, rng: SplitMix64, N: int, K: int,
                 dt_rank: int | None, use_skip: bool, use_ssm: bool, use_conv: bool):
        self.in_proj = Linear(F, E, rng)
        if use_conv:
            self.conv_kernel = parameter(_conv1d_kernel(rng, E, K))
            self.conv_bias = parameter(np.zeros(E))
        if use_ssm:
            self.ssm = SsmParams(E, N, rng, dt_rank, use_skip)

    def __call__(self, xt: Tensor, engine: str) -> Tensor:
        u = self.in_proj(xt)
        if hasattr(self, "conv_kernel"):
            u = conv1d_causal(u, self.conv_kernel, self.conv_bias, time_axis=-2)
        u = silu(u)
        return self.ssm(u, engine) if hasattr(self, "ssm") else u


class ChannelMixer(Module):
    """Bidirectional selective channel mixer.

    Works on the transposed view ``xt[..., S, F]``: ``S`` channels form the
    scanned sequence and ``F`` tokens are the per-step features, lifted to
    ``E`` hidden features. ``mode="per-scan"`` replaces the forward/backward
    pair with one branch per token scan order (``paths``, permutations of the
    token axis); branches of reversed paths read the channels back to front.
    """

    def __init__(self, F: int, rng: SplitMix64, E: int | None = None, N: int = 16,
                 K: int = 4, dt_rank: int | None = None, use_skip: bool = True,
                 use_ssm: bool = True, use_conv: bool = True, mode: str = "bidirectional",
                 paths: Sequence | None = None, engine: str = "parallel"):
        E = 2 * F if E is None else E
        if mode not in ("bidirectional", "per-scan"):
            raise ValidationError(f"unknown channel scan mode {mode!r}")
        self.F, self.E, self._mode, self._engine = F, E, mode, engine
        args = (F, E, rng, N, K, dt_rank, use_skip, use_ssm, use_conv)
        if mode == "bidirectional":
            self.forward = _ChannelBranch(*args)
            self.backward = _ChannelBranch(*args)
            self._paths = None
        else:
            if not paths:
                raise ValidationError("per-scan channel mixing needs token scan paths")
            self._paths = [np.asarray(p) for p in paths]
            self.scans = [_ChannelBranch(*args) for _ in self._paths]
        self.mlp_proj = Linear(F, E, rng)
        self.out_proj = Linear(E, F, rng, zero=True)

    def branches(self, xt: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Forward output, raw backward output (before flipping back), and gate."""
        if xt.shape[-1] != self.F:
            raise DimensionError(f"channel mixer expects {self.F} tokens, got {xt.shape}")
        yf = self.forward(xt, self._engine)
        yb = self.backward(flip(xt, -2), self._engine)
        return yf, yb, silu(self.mlp_proj(xt))

    def mix_transposed(self, xt: Tensor) -> Tensor:
        if self._mode == "bidirectional":
            yf, yb, gate = self.branches(xt)
            return self.out_proj(yf * gate + flip(yb, -2) * gate)
        if xt.shape[-1] != self.F:
            raise DimensionError(f"channel mixer expects {self.F} tokens, got {xt.shape}")
        gate = silu(self.mlp_proj(xt))
        outs = []
        for s, (p, branch) in enumerate(zip(self._paths, self.scans)):
            z = gather_permute(xt, p, axis=-1)
            if s % 2:
                outs.append(flip(branch(flip(z, -2), self._engine), -2) * gate)
            else:
                outs.append(branch(z, self._engine) * gate)
        return self.out_proj(stack_sum(outs))

    def __call__(self, x: Tensor) -> Tensor:
        return swapaxes(self.mix_transposed(swapaxes(x, -1, -2)), -1, -2)


def channel_mix(x: Tensor, mixer: ChannelMixer) -> Tensor:
    return mixer(x)
