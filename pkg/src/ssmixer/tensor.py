"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`; when any input requires a gradient the
output records its parents and a closure that maps the output cotangent to
input cotangents. :meth:`Tensor.backward` walks that graph once in reverse
topological order.

Broadcasting is restricted to leading batch dimensions: two operands combine
only when the shorter shape is a suffix of the longer one.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, GraphError, NonFiniteError

_GRAD_ENABLED = True
CHECK_FINITE = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_freed")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = ""):
        arr = np.asarray(data, dtype=np.float64, order="C")
        if CHECK_FINITE and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values produced by {op or 'constructor'}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self._freed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op!r})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported; multiply by a reciprocal")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- autodiff -------------------------------------------------------------
    def backward(self, grad=None, retain_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf.

        ``self`` must be a scalar unless an explicit seed ``grad`` is given.
        With ``retain_graph=False`` the recorded graph is released afterwards
        and a second call raises :class:`GraphError`.
        """
        if not self.requires_grad:
            raise GraphError("backward() called on a tensor that does not require grad")
        if self._freed:
            raise GraphError("graph already freed; pass retain_graph=True to reuse it")
        if grad is None:
            if self.size != 1:
                raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=np.float64)
            if seed.shape != self.shape:
                raise DimensionError(f"seed gradient shape {seed.shape} != {self.shape}")

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        if not retain_graph:
            for node in order:
                if not node.is_leaf:
                    node._parents = ()
                    node._backward = None
                    node._freed = True


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _make(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, False, (), None, op)


# -- broadcasting -------------------------------------------------------------

def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise DimensionError(
            f"{op}: shapes {a} and {b} differ outside leading batch dimensions")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead else g


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return _make(x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),), "silu")


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|)."""
    x = a.data
    return _make(_softplus(x), (a,), lambda g: (g * _sigmoid(x),), "softplus")


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


# -- reductions and shape ops ------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(ax % a.ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=ax)), "concat")


def stack_sum(tensors: Iterable[Tensor]) -> Tensor:
    """Sum of equally-shaped tensors as one graph node."""
    tensors = list(tensors)
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        if t.shape != out.shape:
            raise DimensionError(f"stack_sum: {t.shape} != {out.shape}")
        out += t.data
    return _make(out, tensors, lambda g: tuple(g for _ in tensors), "stack_sum")


def flip(a: Tensor, axis: int = -1) -> Tensor:
    """Reverse index order along ``axis``."""
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"flip: axis {axis} out of range for rank {a.ndim}")
    return _make(np.flip(a.data, axis), (a,), lambda g: (np.flip(g, axis),), "flip")


def validate_order(order, n: int | None = None) -> np.ndarray:
    from .errors import ValidationError

    order = np.asarray(order)
    if order.ndim != 1 or not np.issubdtype(order.dtype, np.integer):
        raise ValidationError("scan order must be a 1-D integer array")
    if n is not None and order.size != n:
        raise ValidationError(f"scan order has {order.size} entries, expected {n}")
    if not np.array_equal(np.sort(order), np.arange(order.size)):
        raise ValidationError("scan order is not a permutation of 0..L-1")
    return order.astype(np.int64)


def gather_permute(a: Tensor, order, axis: int = -2) -> Tensor:
    """Row ``i`` of the output is row ``order[i]`` of ``a`` along ``axis``."""
    order = validate_order(order, a.shape[axis])
    inv = np.argsort(order)
    return _make(np.take(a.data, order, axis=axis), (a,),
                 lambda g: (np.take(g, inv, axis=axis),), "gather_permute")


def inverse_permute(a: Tensor, order, axis: int = -2) -> Tensor:
    order = validate_order(order, a.shape[axis])
    return gather_permute(a, np.argsort(order), axis)


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` (or batched ``b[..., k, n]`` with matching batch)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands need rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if b.ndim > 2:
        _check_broadcast(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- convolutions -----------------------------------------------------------------

def conv1d_causal(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
                  time_axis: int = -1) -> Tensor:
    """Depthwise causal convolution ``y[d, t] = sum_j kernel[d, j] * x[d, t - j]``.

    Default layout is ``x[..., D, L]``; pass ``time_axis=-2`` for ``x[..., L, D]``.
    Positions before the start are zero (K-1 zeros of left padding).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 2 or kernel.shape[1] < 1:
        raise DimensionError(f"kernel must be D x K with K >= 1, got {kernel.shape}")
    if time_axis not in (-1, -2):
        raise DimensionError("time_axis must be -1 or -2")
    chan_axis = -2 if time_axis == -1 else -1
    D, K = kernel.shape
    if x.ndim < 2 or x.shape[chan_axis] != D:
        raise DimensionError(f"conv1d_causal: {D} kernel channels vs input {x.shape}")
    xd = x.data if time_axis == -2 else np.swapaxes(x.data, -1, -2)  # [..., L, D]
    kd = kernel.data
    L = xd.shape[-2]
    y = np.zeros_like(xd)
    for j in range(min(K, L)):
        y[..., j:, :] += kd[:, j] * xd[..., :L - j, :]
    if bias is not None:
        y = y + bias.data
    out = y if time_axis == -2 else np.swapaxes(y, -1, -2)

    def backward(g):
        gl = g if time_axis == -2 else np.swapaxes(g, -1, -2)
        gx = np.zeros_like(xd) if x.requires_grad else None
        gk = np.zeros_like(kd)
        for j in range(min(K, L)):
            if gx is not None:
                gx[..., :L - j, :] += kd[:, j] * gl[..., j:, :]
            gk[:, j] = (gl[..., j:, :] * xd[..., :L - j, :]).reshape(-1, D).sum(axis=0)
        if gx is not None and time_axis == -1:
            gx = np.swapaxes(gx, -1, -2)
        grads = [gx, gk]
        if bias is not None:
            grads.append(gl.reshape(-1, D).sum(axis=0))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward, "conv1d_causal")


def depthwise_conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
                     channels_last: bool = False) -> Tensor:
    """Per-channel 3x3 cross-correlation, stride 1, zero padding 1.

    Layout ``x[..., D, H, W]`` or, with ``channels_last``, ``x[..., H, W, D]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3 or kernel.shape[1:] != (3, 3):
        raise DimensionError(f"only 3x3 depthwise kernels are supported, got {kernel.shape}")
    D = kernel.shape[0]
    c_ax = -1 if channels_last else -3
    if x.ndim < 3 or x.shape[c_ax] != D:
        raise DimensionError(f"depthwise_conv2d: {D} kernel channels vs input {x.shape}")
    xd = x.data if channels_last else np.moveaxis(x.data, -3, -1)  # [..., H, W, D]
    H, W = xd.shape[-3], xd.shape[-2]
    pad = [(0, 0)] * (xd.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(xd, pad)
    kd = kernel.data
    y = np.zeros_like(xd)
    for di in range(3):
        for dj in range(3):
            y += kd[:, di, dj] * xp[..., di:di + H, dj:dj + W, :]
    if bias is not None:
        y = y + bias.data
    out = y if channels_last else np.moveaxis(y, -1, -3)

    def backward(g):
        gl = g if channels_last else np.moveaxis(g, -3, -1)
        gk = np.zeros_like(kd)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for di in range(3):
            for dj in range(3):
                win = xp[..., di:di + H, dj:dj + W, :]
                gk[:, di, dj] = (gl * win).reshape(-1, D).sum(axis=0)
                if gxp is not None:
                    gxp[..., di:di + H, dj:dj + W, :] += kd[:, di, dj] * gl
        gx = None
        if gxp is not None:
            gx = gxp[..., 1:H + 1, 1:W + 1, :]
            if not channels_last:
                gx = np.moveaxis(gx, -1, -3)
        grads = [gx, gk]
        if bias is not None:
            grads.append(gl.reshape(-1, D).sum(axis=0))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward, "depthwise_conv2d")


# -- normalisation --------------------------------------------------------------

NORM_EPS = 1e-5


def _standardize(x: Tensor, axes: tuple, scale_: Tensor | None, shift: Tensor | None,
                 op: str) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    rstd = 1.0 / np.sqrt(var + NORM_EPS)
    xhat = xc * rstd
    out = xhat
    if scale_ is not None:
        _check_broadcast(xd.shape, scale_.shape, op)
        out = out * scale_.data
    if shift is not None:
        _check_broadcast(xd.shape, shift.shape, op)
        out = out + shift.data

    def backward(g):
        gxhat = g * scale_.data if scale_ is not None else g
        gx = None
        if x.requires_grad:
            m1 = gxhat.mean(axis=axes, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
            gx = rstd * (gxhat - m1 - xhat * m2)
        grads = [gx]
        if scale_ is not None:
            grads.append(_unbroadcast(g * xhat, scale_.shape))
        if shift is not None:
            grads.append(_unbroadcast(g, shift.shape))
        return tuple(grads)

    parents = tuple(t for t in (x, scale_, shift) if t is not None)
    return _make(out, parents, backward, op)


def norm2d(x: Tensor, scale_: Tensor | None = None, shift: Tensor | None = None) -> Tensor:
    """Standardise jointly over the last two axes, then apply an optional affine map.

    Mean and variance are taken over both axes together for every leading index
    (one sample, or one sample-variate pair); ``scale_``/``shift`` broadcast
    against the trailing dims.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("norm2d needs at least two axes")
    return _standardize(x, (-2, -1), scale_, shift, "norm2d")


def layer_norm(x: Tensor, scale_: Tensor | None = None, shift: Tensor | None = None) -> Tensor:
    return _standardize(as_tensor(x), (-1,), scale_, shift, "layer_norm")


# -- losses -------------------------------------------------------------------

def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size
    return _make(np.array((diff * diff).sum() / n), (pred,),
                 lambda g: (g * 2.0 * diff / n,), "mse")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over a batch of ``logits[B, C]``."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise DimensionError(f"cross_entropy: logits {z.shape}, labels {labels.shape}")
    zs = z - z.max(axis=1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    B = z.shape[0]
    loss = -logp[np.arange(B), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(B), labels] -= 1.0
        return (g * p / B,)

    return _make(np.array(loss), (logits,), backward, "cross_entropy")
