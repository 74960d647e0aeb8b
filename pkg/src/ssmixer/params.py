"""Learnable-scalar audits."""

from __future__ import annotations

from .nn import Module
from .train import build_model


def breakdown(model: Module) -> dict[str, int]:
    if hasattr(model, "param_breakdown"):
        return model.param_breakdown()
    out: dict[str, int] = {}
    for name, p in model.named_parameters():
        key = name.split(".")[0]
        if key == "blocks":
            key = ".".join(name.split(".")[:2])
        out[key] = out.get(key, 0) + p.size
    return out


def param_count(model_cfg: dict, seed: int = 0) -> tuple[int, dict[str, int]]:
    """Exact count of trainable scalars and a per-module split.

    Frozen averaging coefficients (reduction configs) are not counted.
    """
    model = build_model(model_cfg, seed)
    parts = {k: v for k, v in breakdown(model).items()}
    return model.num_parameters(), parts
