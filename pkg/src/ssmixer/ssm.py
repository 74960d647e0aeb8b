"""Diagonal selective state-space layer.

Recurrence per channel ``e`` and state ``n``::

    h[t] = abar[t] * h[t-1] + bx[t]        h[-1] = 0
    y[t] = sum_n c[t, n] * h[t, n]  (+ d * x[t])

with zero-order-hold coefficients ``abar = exp(dt * A)`` and
``bx = (exp(dt * A) - 1) / A * B * x``. Two interchangeable engines evaluate
the recurrence: a literal left-to-right loop (the reference) and a
work-efficient up-sweep/down-sweep scan over the associative operator
``(a2, b2) o (a1, b1) = (a2 * a1, a2 * b1 + b2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, MisuseError, ValidationError
from .nn import Module, parameter, uniform_init
from .rng import SplitMix64
from .tensor import Tensor, _make, as_tensor, exp, matmul, scale, softplus

SERIES_CUTOFF = 1e-8  # below |dt * A| the ZOH input gain falls back to dt * B


# -- discretisation ------------------------------------------------------------

def _zoh_gain(dtA: np.ndarray, dt: np.ndarray, A: np.ndarray) -> np.ndarray:
    small = np.abs(dtA) < SERIES_CUTOFF
    safe_A = np.where(small, 1.0, A)
    return np.where(small, dt, np.expm1(dtA) / safe_A)


def discretize_zoh(A, B, dt):
    """Zero-order hold for a diagonal ``A``: returns ``(abar, bbar)``.

    ``abar = exp(dt * A)`` and ``bbar = (exp(dt * A) - 1) / A * B``; when
    ``|dt * A| < 1e-8`` the gain is replaced by its limit ``dt``. Inputs
    broadcast elementwise.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt <= 0):
        raise ValidationError("step size dt must be strictly positive")
    dtA = dt * A
    return np.exp(dtA), _zoh_gain(dtA, dt, A) * B


# -- associative operator and scan engines -----------------------------------

Pair = tuple[np.ndarray, np.ndarray]


def compose(second: Pair, first: Pair) -> Pair:
    """Apply ``first`` then ``second``: ``(a2 a1, a2 b1 + b2)``."""
    a2, b2 = second
    a1, b1 = first
    return a2 * a1, a2 * b1 + b2


def scan_sequential(a: np.ndarray, b: np.ndarray, axis: int = 0) -> np.ndarray:
    """States ``h[t] = a[t] h[t-1] + b[t]`` by a plain loop along ``axis``."""
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, 0)
    b = np.moveaxis(np.asarray(b, dtype=np.float64), axis, 0)
    a, b = np.broadcast_arrays(a, b)
    h = np.empty(b.shape)
    state = np.zeros(b.shape[1:])
    for t in range(b.shape[0]):
        state = a[t] * state + b[t]
        h[t] = state
    return np.moveaxis(h, 0, axis)


def scan_parallel(a: np.ndarray, b: np.ndarray, axis: int = 0,
                  op: Callable[[Pair, Pair], Pair] = compose) -> np.ndarray:
    """Same states as :func:`scan_sequential` via a Blelloch scan.

    The sequence is padded to a power of two with identity pairs ``(1, 0)``.
    The up-sweep builds subtree totals in ``log2(n)`` vectorised levels, the
    down-sweep turns them into exclusive prefixes, and one final application
    of ``op`` makes them inclusive. The combination tree depends only on the
    length, so results are reproducible.
    """
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, 0)
    b = np.moveaxis(np.asarray(b, dtype=np.float64), axis, 0)
    a, b = np.broadcast_arrays(a, b)
    L = b.shape[0]
    if L == 0:
        return np.moveaxis(b.copy(), 0, axis)
    n = 1 << (L - 1).bit_length()
    A = np.ones((n,) + b.shape[1:])
    Bv = np.zeros((n,) + b.shape[1:])
    A[:L] = a
    Bv[:L] = b

    levels = n.bit_length() - 1
    for d in range(levels):
        s = 1 << (d + 1)
        left, right = slice(s // 2 - 1, None, s), slice(s - 1, None, s)
        A[right], Bv[right] = op((A[right], Bv[right]), (A[left], Bv[left]))

    A[n - 1] = 1.0
    Bv[n - 1] = 0.0
    for d in reversed(range(levels)):
        s = 1 << (d + 1)
        left, right = slice(s // 2 - 1, None, s), slice(s - 1, None, s)
        la, lb = A[left].copy(), Bv[left].copy()
        A[left], Bv[left] = A[right], Bv[right]
        A[right], Bv[right] = op((la, lb), (A[left], Bv[left]))

    _, h = op((a, b), (A[:L], Bv[:L]))
    return np.moveaxis(h, 0, axis)


ENGINES = {"sequential": scan_sequential, "parallel": scan_parallel}


SCAN_ENGINES = ("sequential", "parallel", "fused")


def _engine(name: str):
    try:
        return ENGINES[name]
    except KeyError:
        raise ValidationError(f"unknown scan engine {name!r}") from None


# -- coefficient bundles and numpy-level SSM -----------------------------------

@dataclass
class SsmCoeffs:
    """Per-step discretised coefficients: ``abar, bx[..., L, E, N]``, ``c[..., L, N]``."""

    abar: np.ndarray
    bx: np.ndarray
    c: np.ndarray

    @classmethod
    def from_inputs(cls, x, dt, A, B, C) -> "SsmCoeffs":
        x = np.asarray(x, dtype=np.float64)
        dt = np.asarray(dt, dtype=np.float64)
        B = np.asarray(B, dtype=np.float64)
        abar, bbar = discretize_zoh(A, B[..., None, :], dt[..., None])
        return cls(abar, bbar * x[..., None], np.asarray(C, dtype=np.float64))


def _ssm_numpy(coeffs: SsmCoeffs, x, d, engine) -> np.ndarray:
    h = engine(coeffs.abar, coeffs.bx, axis=-3)
    y = np.einsum("...len,...ln->...le", h, coeffs.c)
    if d is not None:
        y = y + np.asarray(d) * np.asarray(x)
    return y


def ssm_scan_sequential(coeffs: SsmCoeffs, x, d=None) -> np.ndarray:
    """Reference evaluation: literal loop over time; ``d`` adds ``d * x``."""
    return _ssm_numpy(coeffs, x, d, scan_sequential)


def ssm_scan_parallel(coeffs: SsmCoeffs, x, d=None, op=compose) -> np.ndarray:
    return _ssm_numpy(coeffs, x, d, lambda a, b, axis: scan_parallel(a, b, axis, op))


# -- LTI convolution path ---------------------------------------------------------

def build_lti_kernel(abar, bbar, c, L: int) -> np.ndarray:
    """``K[k] = sum_n c[n] abar[n]**k bbar[n]`` for ``k < L``.

    ``abar``/``bbar`` broadcast to ``[..., N]`` (scalars mean N = 1) and ``c``
    to ``[N]`` or ``[..., N]``. A leading time axis is accepted only when the
    coefficients are constant along it.
    """
    arrs = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (abar, bbar, c)]
    for i, v in enumerate(arrs):
        if v.ndim >= 3:
            if not np.all(v == v[:1]):
                raise MisuseError("build_lti_kernel needs time-invariant coefficients")
            arrs[i] = v[0]
    a, b, cc = arrs
    powers = a[None] ** np.arange(L).reshape((L,) + (1,) * a.ndim)
    return (cc * powers * b).sum(axis=-1)


def lti_conv(x, kernel) -> np.ndarray:
    """Causal convolution along axis 0: ``y[t] = sum_{j<=t} kernel[j] x[t-j]``."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    L = x.shape[0]
    xf, kf = x.reshape(L, -1), np.broadcast_to(kernel.reshape(L, -1), (L, x.reshape(L, -1).shape[1]))
    y = np.empty_like(xf)
    for e in range(xf.shape[1]):
        y[:, e] = np.convolve(xf[:, e], kf[:, e])[:L]
    return y.reshape(x.shape)


# -- differentiable selective scan ------------------------------------------------

def selective_scan(x: Tensor, dt: Tensor, A: Tensor, B: Tensor, C: Tensor,
                   D: Tensor | None = None, engine: str = "parallel") -> Tensor:
    """Differentiable SSM over ``x[..., L, E]``.

    ``dt[..., L, E]`` step sizes, ``A[E, N]`` diagonal state matrix,
    ``B, C[..., L, N]`` input/output projections, optional skip ``D[E]``.
    The backward pass runs the adjoint recurrence
    ``lam[t] = g[t] + abar[t+1] lam[t+1]`` as a reverse scan with the same engine.
    """
    x, dt, A, B, C = (as_tensor(v) for v in (x, dt, A, B, C))
    if x.shape != dt.shape:
        raise DimensionError(f"x {x.shape} and dt {dt.shape} differ")
    E, N = A.shape
    if x.shape[-1] != E or B.shape != x.shape[:-1] + (N,) or C.shape != B.shape:
        raise DimensionError(
            f"selective_scan shapes: x {x.shape}, A {A.shape}, B {B.shape}, C {C.shape}")
    xd, dtd, Ad, Bd, Cd = x.data, dt.data, A.data, B.data, C.data
    if np.any(dtd <= 0):
        raise ValidationError("step size dt must be strictly positive")
    if engine == "fused":
        return _selective_scan_fused(x, dt, A, B, C, D)
    run = _engine(engine)

    dt4 = dtd[..., None]
    dtA = dt4 * Ad
    abar = np.exp(dtA)
    gain = _zoh_gain(dtA, dt4, Ad)
    Bx = Bd[..., None, :] * xd[..., None]
    h = run(abar, gain * Bx, axis=-3)
    y = np.einsum("...len,...ln->...le", h, Cd)
    if D is not None:
        y = y + D.data * xd

    def backward(gy):
        gh = gy[..., None] * Cd[..., None, :]
        a_rev = np.flip(abar, -3)
        shifted = np.concatenate([np.zeros_like(a_rev[..., :1, :, :]), a_rev[..., :-1, :, :]], axis=-3)
        lam = np.flip(run(shifted, np.flip(gh, -3), axis=-3), -3)
        h_prev = np.concatenate([np.zeros_like(h[..., :1, :, :]), h[..., :-1, :, :]], axis=-3)
        g_gain = lam * Bx
        lam_gain = lam * gain

        gx = np.einsum("...len,...ln->...le", lam_gain, Bd)
        if D is not None:
            gx = gx + gy * D.data
        gB = np.einsum("...len,...le->...ln", lam_gain, xd)
        gC = np.einsum("...le,...len->...ln", gy, h)

        g_u = lam * h_prev * abar  # cotangent of dt*A through abar
        dgain_ddt = abar
        with np.errstate(divide="ignore", invalid="ignore"):
            dgain_dA = (dt4 * abar - gain) / Ad
        series = np.abs(dtA) < 1e-3
        if series.any():
            dtb = np.broadcast_to(dt4, dtA.shape)[series]
            u = dtA[series]
            dgain_dA[series] = dtb * dtb * (0.5 + u * (1.0 / 3.0 + u * (1.0 / 8.0 + u / 30.0)))
            small = np.abs(dtA) < SERIES_CUTOFF
            if small.any():
                dgain_ddt = np.where(small, 1.0, abar)
        gdt = (g_u * Ad + g_gain * dgain_ddt).sum(axis=-1)
        gA = (g_u * dt4 + g_gain * dgain_dA).reshape(-1, E, N).sum(axis=0)
        grads = [gx, gdt, gA, gB, gC]
        if D is not None:
            grads.append((gy * xd).reshape(-1, E).sum(axis=0))
        return tuple(grads)

    parents = (x, dt, A, B, C) if D is None else (x, dt, A, B, C, as_tensor(D))
    return _make(y, parents, backward, f"selective_scan[{engine}]")


def _selective_scan_fused(x, dt, A, B, C, D):
    from .fused import fused_backward, fused_forward

    lead = x.shape[:-2]
    L, E = x.shape[-2:]
    N = A.shape[1]
    flat = lambda v, k: np.ascontiguousarray(v.reshape((-1, L, k)))
    xd, dtd, Bd, Cd = flat(x.data, E), flat(dt.data, E), flat(B.data, N), flat(C.data, N)
    Ad = np.ascontiguousarray(A.data)
    y = np.empty(xd.shape)
    h = np.empty(xd.shape + (N,))
    fused_forward(xd, dtd, Ad, Bd, Cd, y, h)
    if D is not None:
        y = y + D.data * xd

    def backward(gy):
        gy = flat(gy, E)
        gx, gdt, gA, gB, gC = fused_backward(gy, xd, dtd, Ad, Bd, Cd, h)
        if D is not None:
            gx = gx + gy * D.data
        grads = [gx.reshape(x.shape), gdt.reshape(x.shape), gA,
                 gB.reshape(B.shape), gC.reshape(C.shape)]
        if D is not None:
            grads.append((gy * xd).reshape(-1, E).sum(axis=0))
        return tuple(grads)

    parents = (x, dt, A, B, C) if D is None else (x, dt, A, B, C, as_tensor(D))
    return _make(y.reshape(x.shape), parents, backward, "selective_scan[fused]")


# -- parameter container -------------------------------------------------------

def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SsmParams(Module):
    """Selective parameters for ``E`` channels with ``N`` states each.

    ``A = -exp(a_log)`` keeps the state matrix strictly negative; it starts at
    ``A[e, n] = -(n + 1)``. ``dt_rank=None`` uses a full ``E x E`` step-size
    projection, an integer ``r`` factors it through rank ``r``. The step-size
    bias is drawn so that ``softplus(bias)`` is log-uniform in [1e-3, 1e-1].
    """

    def __init__(self, E: int, N: int, rng: SplitMix64, dt_rank: int | None = None,
                 use_skip: bool = True):
        self.E, self.N, self.dt_rank = E, N, dt_rank
        self.a_log = parameter(np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (E, 1))))
        self.w_b = parameter(uniform_init(rng, E, (E, N)))
        self.w_c = parameter(uniform_init(rng, E, (E, N)))
        if dt_rank is None:
            self.w_dt = parameter(uniform_init(rng, E, (E, E)))
        else:
            self.w_dt_down = parameter(uniform_init(rng, E, (E, dt_rank)))
            self.w_dt = parameter(uniform_init(rng, dt_rank, (dt_rank, E)))
        dt0 = np.exp(rng.uniform(E, math.log(1e-3), math.log(1e-1)))
        self.b_dt = parameter(inverse_softplus(dt0))
        self.d_skip = parameter(np.ones(E)) if use_skip else None

    def A(self) -> Tensor:
        return scale(exp(self.a_log), -1.0)

    def selective_params(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Per-step ``(B, C, dt)`` from ``x[..., L, E]``."""
        if x.shape[-1] != self.E:
            raise DimensionError(f"expected {self.E} features, got {x.shape}")
        Bt = matmul(x, self.w_b)
        Ct = matmul(x, self.w_c)
        z = matmul(x, self.w_dt_down) if self.dt_rank is not None else x
        dt = softplus(matmul(z, self.w_dt) + self.b_dt)
        return Bt, Ct, dt

    def __call__(self, x: Tensor, engine: str = "parallel") -> Tensor:
        Bt, Ct, dt = self.selective_params(x)
        return selective_scan(x, dt, self.A(), Bt, Ct, self.d_skip, engine)


def selective_params(x: Tensor, params: SsmParams):
    return params.selective_params(x)
