"""Independent reduction targets for the vision model.

``mlp_mixer_reference`` is a plain-numpy gated MLP-Mixer that reads weights
from a ViM2 state dict by name and never touches the autodiff engine or the
weighted-averaging code. ``vmamba_reference`` composes a model's own token
blocks in plain sequence, bypassing the averaging stack.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import NORM_EPS, no_grad


def _silu(x):
    return x / (1.0 + np.exp(-x))


def _ln(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + NORM_EPS) * scale + shift


def _lin(p: dict, name: str, x):
    return x @ p[f"{name}.weight"] + p[f"{name}.bias"]


def _patches(image, patch):
    B, C, H, W = image.shape
    h, w = H // patch, W // patch
    x = image.reshape(B, C, h, patch, w, patch)
    return np.einsum("bcipjq->bijcpq", x).reshape(B, h, w, C * patch * patch)


def _merge(x):
    tl, tr = x[:, 0::2, 0::2], x[:, 0::2, 1::2]
    bl, br = x[:, 1::2, 0::2], x[:, 1::2, 1::2]
    return np.concatenate([tl, tr, bl, br], axis=-1)


def _gated_mlp(p, pre, x):
    # out(silu(in x) * silu(gate x)); the token-wise MLP of a gated mixer
    return _lin(p, f"{pre}.out_proj", _silu(_lin(p, f"{pre}.in_proj", x)) * _silu(_lin(p, f"{pre}.mlp_proj", x)))


def _patch_mlp(p, pre, x):
    # mixes across patches: x[B, T, C] -> transposed [B, C, T]
    xt = np.swapaxes(x, 1, 2)
    main = _silu(_lin(p, f"{pre}.forward.in_proj", xt)) + _silu(_lin(p, f"{pre}.backward.in_proj", xt))
    y = _lin(p, f"{pre}.out_proj", main * _silu(_lin(p, f"{pre}.mlp_proj", xt)))
    return np.swapaxes(y, 1, 2)


def mlp_mixer_reference(params: dict, cfg, image: np.ndarray) -> np.ndarray:
    """Logits of the gated MLP-Mixer that the ``mlp_mixer`` reduction should equal.

    Per stage: merge (after the first), then alternate a per-token gated MLP
    and a per-feature gated MLP across patches, each pre-normed and residual.
    """
    if cfg.reduction != "mlp_mixer":
        raise ConfigError("reference expects an mlp_mixer configuration")
    p = params
    x = _lin(p, "stem.proj", _patches(np.asarray(image, dtype=np.float64), cfg.patch_size))
    for k, depth in enumerate(cfg.token_depths):
        if k:
            x = _lin(p, f"stages.{k}.downsample.proj", _merge(x))
        B, h, w, C = x.shape
        for l in range(depth):
            tb = f"stages.{k}.blocks.token_groups.{l}.0"
            x = x + _gated_mlp(p, f"{tb}.mixer", _ln(x, p[f"{tb}.norm.scale"], p[f"{tb}.norm.shift"]))
            cb = f"stages.{k}.blocks.channel_blocks.{l}"
            flat = x.reshape(B, h * w, C)
            flat = flat + _patch_mlp(p, f"{cb}.mixer", _ln(flat, p[f"{cb}.norm.scale"], p[f"{cb}.norm.shift"]))
            x = flat.reshape(B, h, w, C)
    x = _ln(x, p["norm.scale"], p["norm.shift"])
    return _lin(p, "head", x.mean(axis=(1, 2)))


def vmamba_reference(model, image: np.ndarray) -> np.ndarray:
    """Stem, then every token block applied in order, then norm, pool, head."""
    if model.cfg.reduction != "vmamba":
        raise ConfigError("reference expects a vmamba configuration")
    with no_grad():
        x = model.stem(image)
        for stage in model.stages:
            if hasattr(stage, "downsample"):
                x = stage.downsample(x)
            for group in stage.blocks.token_groups:
                for block in group:
                    x = block(x)
        x = model.norm(x)
    return _lin(model.state_dict(), "head", x.data.mean(axis=(-3, -2)))
