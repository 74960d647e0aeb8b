"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class AdamWHparams:
    lr: float = 1e-3
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


@dataclass
class AdamWState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamWState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(params: list, grads: list, state: AdamWState, hp: AdamWHparams,
               decay_mask: list | None = None) -> AdamWState:
    """One in-place update of the ``params`` arrays.

    ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`` with bias-corrected
    moments. ``decay_mask[i] = False`` exempts parameter ``i`` from decay.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state differ in length")
    b1, b2 = hp.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != state.m[i].shape:
            raise DimensionError(f"state {i} shaped {state.m[i].shape}, param {p.shape}")
        g = np.zeros_like(p) if g is None else g
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        wd = hp.weight_decay if decay_mask is None or decay_mask[i] else 0.0
        p -= hp.lr * ((m / c1) / (np.sqrt(v / c2) + hp.eps) + wd * p)
    return state


class AdamW:
    """Binds :func:`adamw_step` to a model's trainable tensors.

    Decay applies to matrices and kernels (``ndim >= 2``); biases, norm
    affines and averaging coefficients are exempt.
    """

    def __init__(self, tensors: list, hp: AdamWHparams | None = None):
        self.tensors = list(tensors)
        self.hp = hp or AdamWHparams()
        self.state = AdamWState.zeros_like([t.data for t in self.tensors])
        self.decay_mask = [t.data.ndim >= 2 for t in self.tensors]

    def step(self) -> None:
        adamw_step([t.data for t in self.tensors], [t.grad for t in self.tensors],
                   self.state, self.hp, self.decay_mask)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad = None
