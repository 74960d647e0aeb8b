"""Parameter containers and initialisers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .rng import SplitMix64
from .tensor import Tensor, linear


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Attribute-walking parameter registry.

    Parameters are tensors with ``requires_grad`` stored as attributes, inside
    lists/tuples, or inside dicts; sub-modules are discovered the same way.
    Names are dotted paths in attribute insertion order, which keeps checkpoint
    layouts and optimizer state deterministic.
    """

    def named_parameters(self, prefix: str = "", include_frozen: bool = False
                         ) -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{name}", include_frozen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters(include_frozen=True)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        from .errors import ConfigError

        own = dict(self.named_parameters(include_frozen=True))
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"state mismatch: missing={sorted(missing)[:5]} "
                              f"unexpected={sorted(extra)[:5]}")
        for k, t in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ConfigError(f"{k}: checkpoint shape {arr.shape} != model {t.shape}")
            t.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(value, name: str, include_frozen: bool):
    if isinstance(value, Tensor):
        if value.requires_grad or (include_frozen and value.is_leaf and value.op == "param"):
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".", include_frozen)
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}", include_frozen)
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}", include_frozen)


def frozen(data) -> Tensor:
    """A parameter slot that is serialised but excluded from training."""
    return Tensor(data, requires_grad=False, op="param")


def uniform_init(rng: SplitMix64, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


class Linear(Module):
    """``y = x @ weight + bias`` with ``weight[in, out]``."""

    def __init__(self, d_in: int, d_out: int, rng: SplitMix64, bias: bool = True,
                 zero: bool = False):
        w = np.zeros((d_in, d_out)) if zero else uniform_init(rng, d_in, (d_in, d_out))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.scale = parameter(np.ones(dim))
        self.shift = parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        from .tensor import layer_norm

        return layer_norm(x, self.scale, self.shift)
