"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Largest relative disagreement between analytic and numeric gradients.

    ``f`` is re-evaluated with each coordinate of each parameter perturbed by
    ``+-eps`` in place. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``. With ``max_coords`` only a fixed
    pseudo-random subset of coordinates per parameter is probed.
    """
    for p in params:
        p.grad = None
    loss = f()
    if loss.requires_grad:
        loss.backward()
    worst = 0.0
    pick = np.random.default_rng(seed)
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(pick.choice(flat.size, max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
