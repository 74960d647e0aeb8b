"""Named invariant suite.

Every check returns a measured value and the tolerance it is held to; the
report lists both. Suites select subsets: ``scan``, ``grad``, ``reduce``,
``count``; ``all`` runs everything, including the timing and training checks.
"""

from __future__ import annotations

import math
import shutil
import statistics
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import ssm
from . import tensor as T
from .gradcheck import grad_check
from .mixers import ChannelMixer, TokenMixer, token_mix_multi
from .nn import LayerNorm, parameter
from .reference import mlp_mixer_reference, vmamba_reference
from .rng import SplitMix64
from .tensor import Tensor, no_grad
from .tsm2 import Tsm2, Tsm2Config
from .vim2 import Vim2, Vim2Config
from .wiring import MixerStack, Residual, coefficient_count, init_coeffs, weighted_sum

SUITES = ("all", "scan", "grad", "reduce", "count")


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    note: str = ""


@dataclass
class Check:
    name: str
    suites: tuple
    fn: Callable[..., CheckResult]


REGISTRY: list[Check] = []


def check(name: str, *suites: str):
    def wrap(fn):
        REGISTRY.append(Check(name, suites, fn))
        return fn
    return wrap


def _le(name, value, tol, note=""):
    return CheckResult(name, float(value), tol, bool(value <= tol), note)


def _ge(name, value, tol, note=""):
    return CheckResult(name, float(value), tol, bool(value >= tol), note)


def _within(name, value, lo, hi, note=""):
    ok = all(lo <= v <= hi for v in np.atleast_1d(value))
    worst = max(np.atleast_1d(value), key=lambda v: max(lo - v, v - hi))
    return CheckResult(name, float(worst), hi, bool(ok), note or f"window [{lo}, {hi}]")


def _p(rng, *shape, scale=1.0):
    return parameter(rng.normal(shape, scale))


def _selective_instance(rng: SplitMix64, lead, L, E, N):
    x = rng.normal(lead + (L, E))
    dt = np.exp(rng.uniform(lead + (L, E), math.log(1e-3), math.log(0.5)))
    A = -np.exp(rng.uniform((E, N), -1.0, 1.5))
    B = rng.normal(lead + (L, N))
    C = rng.normal(lead + (L, N))
    return x, dt, A, B, C


# -- tensor engine ---------------------------------------------------------------

def _op_cases(rng: SplitMix64):
    """(name, builder) pairs; each builder returns (loss_fn, params)."""
    cases = []

    def add(name):
        def deco(fn):
            cases.append((name, fn))
            return fn
        return deco

    def reduce(y: Tensor, w):
        return T.sum_(T.mul(y, Tensor(w)))

    def unary(op, pos=False):
        def build():
            a = _p(rng, 3, 4)
            if pos:
                a.data = np.abs(a.data) + 0.5
            with no_grad():
                w = rng.normal(op(a).shape)
            return (lambda: reduce(op(a), w)), [a]
        return build

    for name, op in [("exp", T.exp), ("sigmoid", T.sigmoid), ("silu", T.silu),
                     ("softplus", T.softplus), ("square", T.square),
                     ("scale", lambda a: T.scale(a, -1.7)), ("flip", lambda a: T.flip(a, 0)),
                     ("reshape", lambda a: T.reshape(a, (2, 6))), ("transpose", T.transpose),
                     ("swapaxes", lambda a: T.swapaxes(a, 0, 1)),
                     ("getitem", lambda a: T.getitem(a, (slice(1, 3), slice(None, None, 2)))),
                     ("sum", lambda a: T.sum_(a, axis=1)), ("mean", lambda a: T.mean(a, axis=0)),
                     ("gather_permute", lambda a: T.gather_permute(a, [2, 0, 1], axis=0)),
                     ("inverse_permute", lambda a: T.inverse_permute(a, [3, 1, 0, 2], axis=1)),
                     ("norm2d", T.norm2d), ("layer_norm", T.layer_norm)]:
        cases.append((name, unary(op)))

    for name, op in [("add", T.add), ("sub", T.sub), ("mul", T.mul)]:
        def binary(op=op):
            a, b = _p(rng, 2, 3, 4), _p(rng, 3, 4)  # suffix broadcast
            w = rng.normal((2, 3, 4))
            return (lambda: reduce(op(a, b), w)), [a, b]
        cases.append((name, binary))

    @add("concat")
    def _():
        a, b = _p(rng, 2, 3), _p(rng, 2, 2)
        w = rng.normal((2, 5))
        return (lambda: reduce(T.concat([a, b], axis=-1), w)), [a, b]

    @add("stack_sum")
    def _():
        a, b = _p(rng, 2, 3), _p(rng, 2, 3)
        w = rng.normal((2, 3))
        return (lambda: reduce(T.stack_sum([a, b]), w)), [a, b]

    @add("matmul")
    def _():
        a, b = _p(rng, 2, 3, 4), _p(rng, 4, 5)
        w = rng.normal((2, 3, 5))
        return (lambda: reduce(T.matmul(a, b), w)), [a, b]

    @add("linear")
    def _():
        x, W, bias = _p(rng, 3, 4), _p(rng, 4, 2), _p(rng, 2)
        w = rng.normal((3, 2))
        return (lambda: reduce(T.linear(x, W, bias), w)), [x, W, bias]

    @add("conv1d_causal")
    def _():
        x, k, b = _p(rng, 2, 3, 5), _p(rng, 3, 4), _p(rng, 3)
        w = rng.normal((2, 3, 5))
        return (lambda: reduce(T.conv1d_causal(x, k, b), w)), [x, k, b]

    @add("conv1d_causal_time_major")
    def _():
        x, k, b = _p(rng, 2, 5, 3), _p(rng, 3, 4), _p(rng, 3)
        w = rng.normal((2, 5, 3))
        return (lambda: reduce(T.conv1d_causal(x, k, b, time_axis=-2), w)), [x, k, b]

    @add("depthwise_conv2d")
    def _():
        x, k, b = _p(rng, 2, 4, 5), _p(rng, 2, 3, 3), _p(rng, 2)
        w = rng.normal((2, 4, 5))
        return (lambda: reduce(T.depthwise_conv2d(x, k, b), w)), [x, k, b]

    @add("depthwise_conv2d_channels_last")
    def _():
        x, k, b = _p(rng, 4, 5, 2), _p(rng, 2, 3, 3), _p(rng, 2)
        w = rng.normal((4, 5, 2))
        return (lambda: reduce(T.depthwise_conv2d(x, k, b, channels_last=True), w)), [x, k, b]

    @add("norm2d_affine")
    def _():
        x, s, b = _p(rng, 2, 3, 4), _p(rng, 4), _p(rng, 4)
        w = rng.normal((2, 3, 4))
        return (lambda: reduce(T.norm2d(x, s, b), w)), [x, s, b]

    @add("mse")
    def _():
        a = _p(rng, 3, 4)
        t = rng.normal((3, 4))
        return (lambda: T.mse(a, t)), [a]

    @add("cross_entropy")
    def _():
        a = _p(rng, 4, 3)
        return (lambda: T.cross_entropy(a, np.array([0, 2, 1, 2]))), [a]

    @add("weighted_sum")
    def _():
        cs = [_p(rng) for _ in range(3)]
        ys = [_p(rng, 2, 3) for _ in range(3)]
        w = rng.normal((2, 3))
        return (lambda: reduce(weighted_sum(cs, ys), w)), cs + ys

    for engine in ssm.SCAN_ENGINES:
        def sel(engine=engine):
            x, dt, A, B, C = (parameter(v) for v in _selective_instance(rng, (2,), 5, 3, 2))
            D = _p(rng, 3)
            w = rng.normal((2, 5, 3))
            return (lambda: reduce(ssm.selective_scan(x, dt, A, B, C, D, engine), w)), [x, dt, A, B, C, D]
        cases.append((f"selective_scan[{engine}]", sel))
    return cases


@check("tensor.grad_ops", "grad")
def check_grad_ops(seed=0):
    rng = SplitMix64(seed)
    worst, where = 0.0, ""
    for name, build in _op_cases(rng):
        f, params = build()
        err = grad_check(f, params)
        if err >= worst:
            worst, where = err, name
    return _le("tensor.grad_ops", worst, 1e-6, f"worst op: {where}")


def mamba_mixer_block(D: int, L: int, rng: SplitMix64, N: int = 2):
    """One token mixer and one channel mixer joined by trainable weighted averaging."""
    token = Residual(LayerNorm(D), TokenMixer(D, rng, N=N))
    chan = Residual(LayerNorm(D), ChannelMixer(L, rng, N=N))
    stack = MixerStack([[token]], [chan], init_mode="uniform")
    return randomize(stack, rng)


def block_grad_error(seed=0, D=3, L=4) -> tuple[float, int]:
    rng = SplitMix64(seed)
    stack = mamba_mixer_block(D, L, rng)
    x = Tensor(rng.normal((2, L, D)))
    w = rng.normal((2, L, D))
    params = stack.parameters()
    f = lambda: T.sum_(T.mul(stack(x), Tensor(w)))
    return grad_check(f, params), sum(p.size for p in params)


@check("tensor.grad_blocks", "grad")
def check_grad_blocks(seed=0):
    err, n = block_grad_error(seed)
    return _le("tensor.grad_blocks", err, 1e-4, f"{n} parameters, all probed")


@check("tensor.involutions")
def check_involutions(seed=0):
    rng = SplitMix64(seed)
    x = Tensor(rng.normal((3, 7, 4)))
    order = rng.permutation(7)
    ok = np.array_equal(T.flip(T.flip(x, -2), -2).data, x.data)
    ok &= np.array_equal(T.inverse_permute(T.gather_permute(x, order), order).data, x.data)
    ok &= np.array_equal(T.gather_permute(T.inverse_permute(x, order), order).data, x.data)
    return CheckResult("tensor.involutions", 0.0 if ok else 1.0, 0.0, bool(ok), "bitwise")


@check("tensor.norm2d_moments")
def check_norm2d(seed=0):
    rng = SplitMix64(seed)
    x = Tensor(3.0 + 5.0 * rng.normal((4, 6, 5)))
    y = T.norm2d(x).data
    mu = np.abs(y.mean(axis=(-2, -1))).max()
    var = np.abs(y.var(axis=(-2, -1)) - 1).max()
    ok = mu <= 1e-12 and var <= 1e-6
    return CheckResult("tensor.norm2d_moments", max(mu, var), 1e-6, bool(ok),
                       f"|mean| {mu:.1e} (tol 1e-12), |var-1| {var:.1e} (tol 1e-6)")


@check("tensor.backward_twice")
def check_backward_twice(seed=0):
    rng = SplitMix64(seed)
    a = _p(rng, 3, 4)
    loss = T.sum_(T.silu(T.mul(a, a)))
    loss.backward(retain_graph=True)
    g1 = a.grad.copy()
    a.grad = None
    loss.backward(retain_graph=True)
    ok = np.array_equal(g1, a.grad)
    return CheckResult("tensor.backward_twice", 0.0 if ok else 1.0, 0.0, bool(ok), "bitwise")


# -- ssm core ----------------------------------------------------------------------

def scan_equivalence(n=100, seed=0, op=ssm.compose, lengths=(16, 256, 4096)) -> float:
    rng = SplitMix64(seed)
    worst = 0.0
    for i in range(n):
        L = lengths[i % len(lengths)]
        E = 1 + int(rng.integers(8, 1)[0])
        N = 1 + int(rng.integers(8, 1)[0])
        coeffs = ssm.SsmCoeffs.from_inputs(*_selective_instance(rng, (), L, E, N))
        x = np.zeros((L, E))
        seq = ssm.ssm_scan_sequential(coeffs, x)
        par = ssm.ssm_scan_parallel(coeffs, x, op=op)
        worst = max(worst, float(np.abs(par - seq).max()))
    return worst


@check("ssm.scan_equivalence", "scan")
def check_scan_equivalence(seed=0, op=ssm.compose):
    return _le("ssm.scan_equivalence", scan_equivalence(seed=seed, op=op), 1e-10,
               "100 instances, L in {16, 256, 4096}")


def lti_equivalence(n=100, seed=0) -> float:
    rng = SplitMix64(seed)
    worst = 0.0
    for _ in range(n):
        L = 1 + int(rng.integers(64, 1)[0])
        N = 1 + int(rng.integers(8, 1)[0])
        A = -np.exp(rng.uniform(N, -2.0, 1.0))
        B, C = rng.normal(N), rng.normal(N)
        dt = float(np.exp(rng.uniform(1, -5.0, 0.0))[0])
        abar, bbar = ssm.discretize_zoh(A, B, dt)
        x = rng.normal(L)
        kernel = ssm.build_lti_kernel(abar, bbar, C, L)
        conv = ssm.lti_conv(x, kernel)
        coeffs = ssm.SsmCoeffs(np.broadcast_to(abar, (L, 1, N)), bbar * x[:, None, None],
                               np.broadcast_to(C, (L, N)))
        seq = ssm.ssm_scan_sequential(coeffs, x[:, None])[:, 0]
        worst = max(worst, float(np.abs(conv - seq).max()))
    return worst


@check("ssm.lti_equivalence", "scan")
def check_lti(seed=0):
    return _le("ssm.lti_equivalence", lti_equivalence(seed=seed), 1e-8, "100 instances")


@check("ssm.state_bound", "scan")
def check_state_bound(seed=0):
    rng = SplitMix64(seed)
    worst = 0.0
    for _ in range(20):
        coeffs = ssm.SsmCoeffs.from_inputs(*_selective_instance(rng, (), 512, 4, 4))
        h = ssm.scan_sequential(coeffs.abar, coeffs.bx, axis=0)
        bound = np.abs(coeffs.bx).max(axis=0) / (1 - coeffs.abar.max(axis=0))
        worst = max(worst, float((np.abs(h) / bound).max()))
    return _le("ssm.state_bound", worst, 1.0, "max |h| / bound")


@check("ssm.scan_gradients", "scan", "grad")
def check_scan_grads(seed=0):
    rng = SplitMix64(seed)
    x, dt, A, B, C = (parameter(v) for v in _selective_instance(rng, (2,), 9, 3, 3))
    D = _p(rng, 3)
    w = rng.normal((2, 9, 3))
    f = lambda: T.sum_(T.mul(ssm.selective_scan(x, dt, A, B, C, D, "parallel"), Tensor(w)))
    return _le("ssm.scan_gradients", grad_check(f, [x, dt, A, B, C, D]), 1e-5)


def time_ladder(fn_for_size, sizes, reps=5) -> list[float]:
    out = []
    for s in sizes:
        fn = fn_for_size(s)
        fn()
        ts = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            ts.append(time.perf_counter() - t0)
        out.append(statistics.median(ts))
    return out


def _ratios(ts):
    return [b / a for a, b in zip(ts, ts[1:])]


@check("ssm.scan_linear_time")
def check_scan_linear(seed=0):
    rng = SplitMix64(seed)

    def make(L):
        a = np.exp(-rng.uniform((L, 8, 8), 0.0, 1.0))
        b = rng.normal((L, 8, 8))
        return lambda: ssm.scan_parallel(a, b, axis=0)

    r = _ratios(time_ladder(make, [2 ** k for k in range(12, 17)]))
    return _within("ssm.scan_linear_time", r, 1.6, 2.6, f"ratios {np.round(r, 2).tolist()}")


# -- mixers ---------------------------------------------------------------------

@check("mixers.shape_preservation")
def check_shapes(seed=0):
    rng = SplitMix64(seed)
    bad = 0
    for L, D in [(1, 1), (5, 3), (8, 2), (3, 7)]:
        x = Tensor(rng.normal((2, L, D)))
        with no_grad():
            bad += TokenMixer(D, rng, N=2)(x).shape != x.shape
            bad += ChannelMixer(L, rng, N=2)(x).shape != x.shape
    return _le("mixers.shape_preservation", bad, 0, "mismatched shapes")


def token_causality(n=20, seed=0, L=24, D=3) -> float:
    rng = SplitMix64(seed)
    mixer = TokenMixer(D, rng, N=3)
    mixer.out_proj.weight.data = rng.normal((2 * D, D))
    worst = 0.0
    with no_grad():
        for _ in range(n):
            x = rng.normal((L, D))
            t = 1 + int(rng.integers(L - 1, 1)[0])
            x2 = x.copy()
            x2[t] += rng.normal(D)
            y1, y2 = mixer(Tensor(x)).data, mixer(Tensor(x2)).data
            worst = max(worst, float(np.abs(y1[:t] - y2[:t]).max()))
    return worst


@check("mixers.token_causality")
def check_causality(seed=0):
    return _le("mixers.token_causality", token_causality(seed=seed), 1e-14, "20 probes")


@check("mixers.channel_noncausal")
def check_channel_noncausal(seed=0):
    rng = SplitMix64(seed)
    L, D = 4, 6
    mixer = ChannelMixer(L, rng, N=2)
    mixer.out_proj.weight.data = rng.normal(mixer.out_proj.weight.shape)
    x = rng.normal((L, D))
    x2 = x.copy()
    x2[:, D // 2] += 1.0
    with no_grad():
        delta = np.abs(mixer(Tensor(x2)).data - mixer(Tensor(x)).data).max(axis=0)
    return _ge("mixers.channel_noncausal", delta.min(), 1e-12,
               "smallest change over all channels after perturbing a middle channel")


@check("mixers.multi_equivariance")
def check_equivariance(seed=0):
    rng = SplitMix64(seed)
    L, D = 6, 3
    mixers = [TokenMixer(D, rng, N=2) for _ in range(2)]
    for m in mixers:
        m.out_proj.weight.data = rng.normal(m.out_proj.weight.shape)
    paths = [rng.permutation(L), rng.permutation(L)]
    pi = rng.permutation(L)
    x = rng.normal((L, D))
    # x'[pi[i]] = x[i]; path p' = pi o p
    xp = np.empty_like(x)
    xp[pi] = x
    with no_grad():
        y = token_mix_multi(Tensor(x), paths, mixers).data
        yp = token_mix_multi(Tensor(xp), [pi[p] for p in paths], mixers).data
    expect = np.empty_like(y)
    expect[pi] = y
    return _le("mixers.multi_equivariance", np.abs(yp - expect).max(), 1e-12)


@check("mixers.gradients", "grad")
def check_mixer_grads(seed=0):
    rng = SplitMix64(seed)
    worst = 0.0
    for mixer, shape in [(TokenMixer(3, rng, N=2), (2, 5, 3)), (ChannelMixer(4, rng, N=2), (2, 4, 3))]:
        randomize(mixer, rng)
        x = _p(rng, *shape)
        w = rng.normal(shape)
        f = lambda: T.sum_(T.mul(mixer(x), Tensor(w)))
        worst = max(worst, grad_check(f, [x] + mixer.parameters()))
    return _le("mixers.gradients", worst, 1e-4)


# -- wiring ---------------------------------------------------------------------

def coefficient_audit(max_blocks=50) -> int:
    """Number of block counts whose enumerated coefficients differ from the closed form."""
    return sum(init_coeffs(n).count() != coefficient_count(n) for n in range(1, max_blocks + 1))


@check("wiring.coefficient_count", "count")
def check_count():
    bad = coefficient_audit()
    return _le("wiring.coefficient_count", bad, 0, "mismatches over 1..50 blocks")


def chain_stack_difference(seed=0, n_blocks=3, L=5, D=3) -> float:
    rng = SplitMix64(seed)
    blocks = [Residual(LayerNorm(D), TokenMixer(D, rng, N=2)) for _ in range(n_blocks)]
    for b in blocks:
        b.mixer.out_proj.weight.data = rng.normal(b.mixer.out_proj.weight.shape)
    stack = MixerStack([[b] for b in blocks], [None] * n_blocks, "chain", frozen=True)
    x = Tensor(rng.normal((2, L, D)))
    with no_grad():
        y = stack(x).data
        z = x
        for b in blocks:
            z = b(z)
    return float(np.abs(y - z.data).max())


@check("wiring.vmamba_identity", "reduce")
def check_chain_identity(seed=0):
    return _le("wiring.vmamba_identity", chain_stack_difference(seed), 1e-12)


@check("wiring.coefficient_gradients", "grad")
def check_coeff_grads(seed=0):
    rng = SplitMix64(seed)
    tokens = [[Residual(LayerNorm(3), TokenMixer(3, rng, N=2))] for _ in range(2)]
    chans = [Residual(LayerNorm(3), ChannelMixer(4, rng, N=2)) for _ in range(2)]
    stack = randomize(MixerStack(tokens, chans, init_mode="uniform"), rng)
    x = Tensor(rng.normal((2, 4, 3)))
    T.sum_(T.mul(stack(x), Tensor(rng.normal((2, 4, 3))))).backward()
    zero = [k for k, t in stack.avg.items() if t.grad is None or t.grad == 0]
    return _le("wiring.coefficient_gradients", len(zero), 0,
               f"coefficients without gradient: {zero[:4]}")


@check("wiring.stage_scoping")
def check_scoping():
    cfg = Vim2Config.desk()
    model = Vim2(cfg)
    # each stage owns one averaging table sized by its own block count only
    bad = 0
    for k, stage in enumerate(model.stages):
        n = len(stage.blocks.token_groups)
        bad += stage.blocks.avg.count() != coefficient_count(n)
    return _le("wiring.stage_scoping", bad, 0, "stages with foreign coefficients")


# -- vim2 -------------------------------------------------------------------------

@check("vim2.stage_dims")
def check_stage_dims():
    cfg = Vim2Config.tiny()
    grids = cfg.grid_sizes()
    cfg_small = Vim2Config.desk(image_size=64)
    model = Vim2(cfg_small)
    x = model.stem(Tensor(np.zeros((1, 3, 64, 64))))
    seen = []
    with no_grad():
        for stage in model.stages:
            x = stage(x)
            seen.append(x.shape[1])
    ok = grids == [56, 28, 14, 7] and seen == [64 // 4, 64 // 8, 64 // 16, 64 // 32]
    return CheckResult("vim2.stage_dims", 0.0 if ok else 1.0, 0.0, bool(ok),
                       f"tiny grids {grids}, 64px run {seen}")


def tiny_param_count() -> int:
    return Vim2(Vim2Config.tiny()).num_parameters()


@check("vim2.tiny_param_count", "count")
def check_tiny_params():
    n = tiny_param_count()
    return CheckResult("vim2.tiny_param_count", n, 24e6, bool(16e6 <= n <= 24e6), "window [16M, 24M]")


@check("vim2.head_permutation")
def check_head_perm(seed=0):
    rng = SplitMix64(seed)
    model = Vim2(Vim2Config.desk(), seed)
    img = rng.normal((2, 3, 32, 32))
    perm = rng.permutation(model.cfg.num_classes)
    with no_grad():
        y = model(img).data
        model.head.weight.data = model.head.weight.data[:, perm]
        model.head.bias.data = model.head.bias.data[perm]
        yp = model(img).data
    # equal up to BLAS summation order
    return _le("vim2.head_permutation", np.abs(yp - y[:, perm]).max(), 1e-12)


@check("vim2.linear_runtime")
def check_vim2_runtime(seed=0):
    rng = SplitMix64(seed)

    def make(side):
        from .mixers import CrossScanTokenMixer
        m = CrossScanTokenMixer(8, rng, N=4, engine="fused")
        x = Tensor(rng.normal((1, side[0], side[1], 8)))
        return lambda: _nograd_call(m, x)

    # from 8k tokens up; smaller grids are dominated by per-call overhead
    sides = [(64, 128), (128, 128), (128, 256), (256, 256)]
    r = _ratios(time_ladder(make, sides))
    return _within("vim2.linear_runtime", r, 1.6, 2.6, f"ratios {np.round(r, 2).tolist()}")


def _nograd_call(m, x):
    with no_grad():
        return m(x)


def randomize(model, rng: SplitMix64, gain: float = 1.5):
    """Redraw weights at a variance-preserving random point.

    Matrices and kernels get ``N(0, gain / sqrt(fan_in))`` so pre-activations
    are O(1) and the gated paths are not squashed near zero; zero-initialised
    output maps become nonzero. Norm scales and skips stay near one, biases are
    small, step sizes land near 0.7. Averaging coefficients and ``a_log`` keep
    their values. At the training initialisation many SSM gradients are ~1e-7,
    which central differences with eps=1e-5 cannot resolve to 1e-4.
    """
    new = {}
    for k, v in model.state_dict().items():
        leaf = k.rsplit(".", 1)[-1]
        if k.startswith("avg.") or ".avg." in k or leaf == "a_log":
            new[k] = v
        elif leaf == "b_dt":
            new[k] = rng.normal(v.shape, 0.5)
        elif leaf in ("scale", "d_skip"):
            new[k] = 1.0 + rng.normal(v.shape, 0.2)
        elif v.ndim == 1:
            new[k] = rng.normal(v.shape, 0.2)
        else:
            fan_in = v.shape[0] if leaf != "conv_kernel" else int(np.prod(v.shape[1:]))
            g = 0.5 if leaf == "w_dt" else gain
            new[k] = rng.normal(v.shape, g / math.sqrt(fan_in))
    model.load_state_dict(new)
    return model


def reduction_errors(seed=0) -> tuple[float, float]:
    rng = SplitMix64(seed)
    img = rng.normal((2, 3, 32, 32))
    cfg = Vim2Config.desk(reduction="mlp_mixer", token_depths=[1, 1, 2, 1], channel_depths=[1, 1, 2, 1])
    m = randomize(Vim2(cfg, seed), rng)
    with no_grad():
        e_mlp = float(np.abs(m(img).data - mlp_mixer_reference(m.state_dict(), cfg, img)).max())
    cfg = Vim2Config.desk(reduction="vmamba", channel_depths=[0, 0, 0, 0])
    m = randomize(Vim2(cfg, seed), rng)
    with no_grad():
        e_vm = float(np.abs(m(img).data - vmamba_reference(m, img)).max())
    return e_mlp, e_vm


@check("vim2.reductions", "reduce")
def check_reductions(seed=0):
    e_mlp, e_vm = reduction_errors(seed)
    return _le("vim2.reductions", max(e_mlp, e_vm), 1e-12,
               f"mlp_mixer {e_mlp:.1e}, vmamba {e_vm:.1e}")


# -- tsm2 -------------------------------------------------------------------------

def _small_tsm2(seed=0, **kw):
    base = dict(n_vars=3, history=16, horizon=4, patch_len=4, n_blocks=2, width=4, d_state=2)
    base.update(kw)
    return Tsm2(Tsm2Config(**base), seed)


def tsm2_time_causality(n=20, seed=0) -> float:
    rng = SplitMix64(seed)
    model = randomize(_small_tsm2(seed, history=32), rng)
    mixer = model.blocks.token_groups[0][0].mixer
    P = model.cfg.patch_len
    worst = 0.0
    with no_grad():
        for _ in range(n):
            x = rng.normal((3, 32))
            t = int(rng.integers(32, 1)[0])
            x2 = x.copy()
            x2[:, t] += rng.normal(3)
            a = mixer(model.tokens(x)).data
            b = mixer(model.tokens(x2)).data
            k = t // P  # 0-based patch holding t; no left pad since 32 % P == 0
            if k:
                worst = max(worst, float(np.abs(a[:, :k] - b[:, :k]).max()))
    return worst


@check("tsm2.time_causality")
def check_tsm2_causality(seed=0):
    return _le("tsm2.time_causality", tsm2_time_causality(seed=seed), 1e-14, "20 probes")


@check("tsm2.variate_bidirectional")
def check_variates(seed=0):
    rng = SplitMix64(seed)
    model = randomize(_small_tsm2(seed, n_vars=5), rng)
    x = rng.normal((5, 16))
    x2 = x.copy()
    x2[2] += 1.0
    with no_grad():
        d = np.abs(model(x2).data - model(x).data).max(axis=-1)
    return _ge("tsm2.variate_bidirectional", d.min(), 1e-12,
               "smallest output change over variates after perturbing the middle one")


@check("tsm2.gradients", "grad")
def check_tsm2_grads(seed=0):
    rng = SplitMix64(seed)
    model = randomize(_small_tsm2(seed), rng)
    x = rng.normal((2, 3, 16))
    y = rng.normal((2, 3, 4))
    f = lambda: T.mse(model(x), y)
    return _le("tsm2.gradients", grad_check(f, model.parameters(), max_coords=12), 1e-4,
               "up to 12 coordinates per parameter tensor")


def run_desk_training(kind: str, out_dir, seed=0):
    from .train import desk_tsm2, desk_vim2, train
    cfg = desk_tsm2(str(out_dir), seed) if kind == "tsm2" else desk_vim2(str(out_dir), seed)
    t0 = time.perf_counter()
    rec = train(cfg)
    return rec, time.perf_counter() - t0


@check("tsm2.learning_signal")
def check_learning():
    with tempfile.TemporaryDirectory() as tmp:
        rec, secs = run_desk_training("tsm2", Path(tmp) / "run")
    ratio = rec.final["ratio"]
    return _le("tsm2.learning_signal", ratio, 0.8,
               f"epoch {rec.reached_at} of 200, {secs:.0f}s; val/persistence MSE")


# -- harness ----------------------------------------------------------------------

def determinism_diff(seed=0, kind="tsm2") -> bool:
    """Two short seeded runs; True when checkpoints and metrics.csv match byte for byte."""
    from .train import desk_tsm2, desk_vim2, train
    tmp = Path(tempfile.mkdtemp())
    try:
        blobs = []
        for i in range(2):
            if kind == "tsm2":
                cfg = desk_tsm2(str(tmp / f"r{i}"), seed)
                cfg.data = {**cfg.data, "T": 400}
            else:
                cfg = desk_vim2(str(tmp / f"r{i}"), seed)
                cfg.data = {**cfg.data, "n": 60}
            cfg.epochs, cfg.target = 2, None
            train(cfg)
            blobs.append(((tmp / f"r{i}" / "model.ntf").read_bytes(),
                          (tmp / f"r{i}" / "metrics.csv").read_bytes()))
        return blobs[0] == blobs[1]
    finally:
        shutil.rmtree(tmp)


@check("harness.determinism")
def check_determinism(seed=0):
    same = determinism_diff(seed, "tsm2") and determinism_diff(seed, "vim2")
    return CheckResult("harness.determinism", 0.0 if same else 1.0, 0.0, same,
                       "checkpoint and metrics.csv bytes, tsm2 and vim2 runs")


# -- driver -----------------------------------------------------------------------

def run_verify(suite: str = "all", scan_op=None) -> list[CheckResult]:
    """Run the named checks of ``suite``; ``scan_op`` swaps the parallel-scan combine (mutation hook)."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    results = []
    for c in REGISTRY:
        if suite != "all" and suite not in c.suites:
            continue
        try:
            if c.name == "ssm.scan_equivalence" and scan_op is not None:
                res = c.fn(op=scan_op)
            else:
                res = c.fn()
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(c.name, float("nan"), float("nan"), False, f"{type(exc).__name__}: {exc}")
        results.append(res)
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = ["check,status,value,tolerance,note"]
    for r in results:
        note = r.note.replace(",", ";")
        lines.append(f"{r.name},{'PASS' if r.passed else 'FAIL'},{r.value:.3e},{r.tolerance:.3e},{note}")
    return "\n".join(lines)
