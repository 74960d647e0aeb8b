"""Weighted averaging of earlier features across a stack of mixer blocks.

For block ``l`` (1-based) with cache entries ``yT[i], yC[i]`` and
``yT[0] = yC[0] = x``::

    token_in(l)   = sum_{i<l}  alpha[l,i] yT[i] + sum_{i<l} beta[l,i]  yC[i]
    channel_in(l) = sum_{i<=l} theta[l,i] yT[i] + sum_{i<l} gamma[l,i] yC[i]

Block ``l`` contributes ``4l + 1`` scalars, so a stack of ``n`` blocks holds
``n(2n + 3)``. Coefficients are raw scalars; nothing normalises them.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, SequencingError, ValidationError
from .nn import Module, frozen as frozen_param, parameter
from .tensor import Tensor, _check_broadcast, _make

INIT_MODES = ("chain", "residual", "uniform", "alternate")


def weighted_sum(coeffs: Sequence[Tensor], ys: Sequence[Tensor]) -> Tensor:
    """``sum_i coeffs[i] * ys[i]`` as one graph node (scalar coefficients)."""
    if not ys:
        raise ValidationError("weighted_sum of nothing")
    shape = ys[0].shape
    out = np.zeros(shape)
    for c, y in zip(coeffs, ys):
        _check_broadcast(shape, y.shape, "weighted_sum")
        out += c.data * y.data

    def backward(g):
        cg = [np.array((g * y.data).sum()) if c.requires_grad else None for c, y in zip(coeffs, ys)]
        yg = [g * c.data if y.requires_grad else None for c, y in zip(coeffs, ys)]
        return tuple(cg) + tuple(yg)

    return _make(out, tuple(coeffs) + tuple(ys), backward, "weighted_sum")


def coefficient_count(n_blocks: int) -> int:
    return n_blocks * (2 * n_blocks + 3)


class AvgCoeffs(Module):
    """Scalar coefficients ``alpha, beta, theta, gamma`` for ``n_blocks`` blocks.

    Stored as ``alpha[str(l)][str(i)]`` so checkpoint names read
    ``avg.alpha.{l}.{i}``. ``frozen`` coefficients are kept out of training.
    """

    def __init__(self, n_blocks: int, values: dict | None = None, frozen: bool = False):
        if n_blocks < 1:
            raise ValidationError("need at least one block")
        self.n_blocks = n_blocks
        make = frozen_param if frozen else parameter
        values = values or {}
        for name, upper in (("alpha", 0), ("beta", 0), ("theta", 1), ("gamma", 0)):
            table = {}
            for l in range(1, n_blocks + 1):
                table[str(l)] = {str(i): make(np.array(values.get((name, l, i), 0.0)))
                                 for i in range(l + upper)}
            setattr(self, name, table)

    def get(self, name: str, l: int, i: int) -> Tensor:
        return getattr(self, name)[str(l)][str(i)]

    def items(self):
        for name in ("alpha", "beta", "theta", "gamma"):
            for l, row in getattr(self, name).items():
                for i, t in row.items():
                    yield (name, int(l), int(i)), t

    def count(self) -> int:
        return sum(1 for _ in self.items())


def init_coeffs(n_blocks: int, mode: str = "residual", frozen: bool = False) -> AvgCoeffs:
    """Initial coefficients.

    chain: ``alpha[l,l-1] = theta[l,l] = 1``, all else 0 (plain stacking).
    residual: chain plus ``gamma[l,l-1] = 1``.
    uniform: every coefficient is 1 / (number of summands in its sum).
    alternate: ``beta[l,l-1] = theta[l,l] = 1``, so each token mixer reads
    the previous channel mixer (strictly alternating stack).
    """
    if mode not in INIT_MODES:
        raise ConfigError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")
    v = {}
    for l in range(1, n_blocks + 1):
        if mode == "uniform":
            for i in range(l):
                v["alpha", l, i] = v["beta", l, i] = 1.0 / (2 * l)
                v["gamma", l, i] = 1.0 / (2 * l + 1)
            for i in range(l + 1):
                v["theta", l, i] = 1.0 / (2 * l + 1)
            continue
        v["theta", l, l] = 1.0
        if mode == "alternate":
            v["beta", l, l - 1] = 1.0
        else:
            v["alpha", l, l - 1] = 1.0
        if mode == "residual":
            v["gamma", l, l - 1] = 1.0
    return AvgCoeffs(n_blocks, v, frozen)


class FeatureCache:
    """Write-once store of block outputs; index 0 of both streams is the input."""

    def __init__(self, x: Tensor):
        self.token: dict[int, Tensor] = {0: x}
        self.channel: dict[int, Tensor] = {0: x}

    def write(self, stream: str, i: int, y: Tensor) -> None:
        table = getattr(self, stream)
        if i in table:
            raise SequencingError(f"{stream}[{i}] written twice")
        table[i] = y

    def read(self, stream: str, i: int) -> Tensor:
        try:
            return getattr(self, stream)[i]
        except KeyError:
            raise SequencingError(f"{stream}[{i}] read before it was written") from None


def _gather(l_terms, cache: FeatureCache):
    cs, ys = [], []
    for (stream, i), c in l_terms:
        y = cache.read(stream, i)
        if not c.requires_grad and c.data == 0.0:
            continue
        cs.append(c)
        ys.append(y)
    if not cs:
        return None
    return weighted_sum(cs, ys)


def token_input(l: int, cache: FeatureCache, coeffs: AvgCoeffs) -> Tensor:
    terms = [(("token", i), coeffs.get("alpha", l, i)) for i in range(l)]
    terms += [(("channel", i), coeffs.get("beta", l, i)) for i in range(l)]
    out = _gather(terms, cache)
    return out if out is not None else Tensor(np.zeros(cache.read("token", 0).shape))


def channel_input(l: int, cache: FeatureCache, coeffs: AvgCoeffs) -> Tensor:
    terms = [(("token", i), coeffs.get("theta", l, i)) for i in range(l + 1)]
    terms += [(("channel", i), coeffs.get("gamma", l, i)) for i in range(l)]
    out = _gather(terms, cache)
    return out if out is not None else Tensor(np.zeros(cache.read("token", 0).shape))


class Residual(Module):
    """``x + mixer(norm(x))``."""

    def __init__(self, norm, mixer):
        self.norm = norm
        self.mixer = mixer

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.mixer(self.norm(x))


class MixerStack(Module):
    """Blocks of (token group, channel block) joined by weighted averaging.

    ``token_groups[l]`` is a list of residual token blocks applied in order;
    ``channel_blocks[l]`` may be ``None`` (channel mixing removed), in which
    case the channel stream just carries its weighted input forward. The
    stack output is the last channel-stream entry.
    """

    def __init__(self, token_groups: list, channel_blocks: list, init_mode: str = "residual",
                 frozen: bool = False):
        if len(token_groups) != len(channel_blocks):
            raise ConfigError("token groups and channel blocks must pair up")
        self.token_groups = token_groups
        self.channel_blocks = channel_blocks
        self.avg = init_coeffs(len(token_groups), init_mode, frozen)

    def __call__(self, x: Tensor, return_cache: bool = False):
        cache = FeatureCache(x)
        for l, (group, cblock) in enumerate(zip(self.token_groups, self.channel_blocks), start=1):
            y = token_input(l, cache, self.avg)
            for block in group:
                y = block(y)
            cache.write("token", l, y)
            xc = channel_input(l, cache, self.avg)
            cache.write("channel", l, cblock(xc) if cblock is not None else xc)
        out = cache.read("channel", len(self.token_groups))
        return (out, cache) if return_cache else out
