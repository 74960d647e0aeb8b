import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssmixer import ssm
from ssmixer import tensor as T
from ssmixer.errors import DimensionError, MisuseError, ValidationError
from ssmixer.gradcheck import grad_check
from ssmixer.nn import parameter
from ssmixer.rng import SplitMix64
from ssmixer.tensor import Tensor
from ssmixer.verify import _selective_instance, check_state_bound, lti_equivalence, scan_equivalence

seeds = st.integers(0, 2**32 - 1)


# -- discretisation -------------------------------------------------------------

def test_zoh_hand_values():
    abar, bbar = ssm.discretize_zoh(-1.0, 1.0, math.log(2))
    assert abar == pytest.approx(0.5, abs=1e-15)
    assert bbar == pytest.approx(0.5, abs=1e-15)
    _, bbar2 = ssm.discretize_zoh(-1.0, 2.0, math.log(2))
    assert bbar2 == pytest.approx(1.0, abs=1e-15)


def test_zoh_small_step_limit():
    abar, bbar = ssm.discretize_zoh(-1.0, 1.0, 1e-12)
    assert abar == pytest.approx(1.0, abs=1e-11)
    assert bbar == pytest.approx(1e-12, rel=1e-9)


def test_zoh_series_fallback_is_continuous():
    A = -1.0
    below = ssm.discretize_zoh(A, 1.0, 0.99e-8)[1] / 0.99e-8
    above = ssm.discretize_zoh(A, 1.0, 1.01e-8)[1] / 1.01e-8
    assert abs(below - above) < 1e-7


def test_zoh_rejects_nonpositive_step():
    with pytest.raises(ValidationError):
        ssm.discretize_zoh(-1.0, 1.0, 0.0)


@given(st.floats(-50, -1e-3), st.floats(1e-4, 5.0))
def test_zoh_gain_matches_integral(A, dt):
    # bbar / B = integral_0^dt exp(A s) ds, evaluated with a midpoint rule
    s = (np.arange(40000) + 0.5) * dt / 40000
    quad = np.exp(A * s).sum() * dt / 40000
    assert ssm.discretize_zoh(A, 1.0, dt)[1] == pytest.approx(quad, rel=1e-5)


# -- selective parameters ---------------------------------------------------------

def test_selective_params_zero_input(rng):
    p = ssm.SsmParams(4, 3, rng)
    B, C, dt = p.selective_params(Tensor(np.zeros((5, 4))))
    assert not B.data.any() and not C.data.any()
    np.testing.assert_allclose(dt.data, np.broadcast_to(T.softplus(p.b_dt).data, (5, 4)), rtol=0, atol=0)


def test_selective_params_ln2_step(rng):
    p = ssm.SsmParams(3, 2, rng)
    p.w_dt.data[:] = 0.0
    p.b_dt.data[:] = 0.0
    _, _, dt = p.selective_params(Tensor(rng.normal((4, 3))))
    np.testing.assert_allclose(dt.data, math.log(2), atol=1e-15)


def test_selective_params_rowwise(rng):
    p = ssm.SsmParams(3, 2, rng)
    row = rng.normal(3)
    out = p.selective_params(Tensor(np.tile(row, (4, 1))))
    for t in out:
        assert np.array_equal(t.data, np.tile(t.data[0], (4, 1)))


def test_selective_params_width_check(rng):
    with pytest.raises(DimensionError):
        ssm.SsmParams(3, 2, rng).selective_params(Tensor(np.zeros((4, 5))))


def test_initialisation(rng):
    p = ssm.SsmParams(4, 3, rng)
    np.testing.assert_allclose(p.A().data, -np.tile([1.0, 2.0, 3.0], (4, 1)), atol=1e-15)
    dt0 = T.softplus(p.b_dt).data
    assert np.all((dt0 >= 1e-3 - 1e-15) & (dt0 <= 1e-1 + 1e-15))
    np.testing.assert_array_equal(p.d_skip.data, 1.0)


# -- recurrences -----------------------------------------------------------------

def hand_coeffs(abar, bx, c):
    L = len(bx)
    return ssm.SsmCoeffs(np.full((L, 1, 1), abar), np.asarray(bx, float).reshape(L, 1, 1),
                         np.asarray(c, float).reshape(L, 1))


def test_sequential_hand_unrolled():
    y = ssm.ssm_scan_sequential(hand_coeffs(0.5, [0.5, 0.5, 0.5], [1, 1, 1]), np.ones((3, 1)))
    np.testing.assert_allclose(y[:, 0], [0.5, 0.75, 0.875], atol=1e-15)


def test_memoryless_when_abar_zero(rng):
    bx, c = rng.normal(6), rng.normal(6)
    y = ssm.ssm_scan_sequential(hand_coeffs(0.0, bx, c), np.zeros((6, 1)))
    np.testing.assert_array_equal(y[:, 0], c * bx)


def test_zero_input_zero_output(rng):
    x, dt, A, B, C = _selective_instance(rng, (), 7, 3, 2)
    coeffs = ssm.SsmCoeffs.from_inputs(np.zeros_like(x), dt, A, B, C)
    assert not ssm.ssm_scan_parallel(coeffs, np.zeros_like(x)).any()


def test_single_step_exact(rng):
    coeffs = ssm.SsmCoeffs.from_inputs(*_selective_instance(rng, (), 1, 3, 2))
    seq = ssm.ssm_scan_sequential(coeffs, np.zeros((1, 3)))
    assert np.array_equal(ssm.ssm_scan_parallel(coeffs, np.zeros((1, 3))), seq)


@given(seeds)
def test_compose_associative(seed):
    r = SplitMix64(seed)
    p, q, s = ((r.uniform(4, -1, 1), r.normal(4)) for _ in range(3))
    left = ssm.compose(ssm.compose(p, q), s)
    right = ssm.compose(p, ssm.compose(q, s))
    for u, v in zip(left, right):
        assert np.abs(u - v).max() <= 1e-12


@given(st.integers(1, 300), st.integers(1, 8), st.integers(1, 8), seeds)
def test_parallel_matches_sequential(L, E, N, seed):
    coeffs = ssm.SsmCoeffs.from_inputs(*_selective_instance(SplitMix64(seed), (), L, E, N))
    x = np.zeros((L, E))
    diff = np.abs(ssm.ssm_scan_parallel(coeffs, x) - ssm.ssm_scan_sequential(coeffs, x)).max()
    assert diff <= 1e-10


@given(st.integers(1, 40), seeds)
def test_scan_along_other_axis(L, seed):
    r = SplitMix64(seed)
    a, b = r.uniform((3, L, 2), 0, 1), r.normal((3, L, 2))
    np.testing.assert_allclose(ssm.scan_parallel(a, b, axis=1), ssm.scan_sequential(a, b, axis=1),
                               atol=1e-12)


def test_scan_equivalence_at_4096():
    assert scan_equivalence(n=6, lengths=(4096,)) <= 1e-10


def test_swapped_operator_breaks_equivalence():
    swapped = lambda second, first: ssm.compose(first, second)
    assert scan_equivalence(n=6, op=swapped, lengths=(16, 256)) > 1e-10


def test_state_bound():
    assert check_state_bound().passed


# -- LTI kernel ---------------------------------------------------------------

def test_lti_kernel_hand_powers():
    np.testing.assert_allclose(ssm.build_lti_kernel(0.5, 0.5, 1.0, 3), [0.5, 0.25, 0.125], atol=1e-15)


def test_lti_kernel_zero_carry():
    np.testing.assert_array_equal(ssm.build_lti_kernel(0.0, 2.0, 3.0, 4), [6.0, 0.0, 0.0, 0.0])


def test_lti_kernel_rejects_time_varying(rng):
    abar = rng.uniform((5, 1, 2), 0, 1)
    with pytest.raises(MisuseError):
        ssm.build_lti_kernel(abar, np.ones(2), np.ones(2), 5)


def test_lti_conv_matches_recurrence():
    assert lti_equivalence(n=100) <= 1e-8


@given(st.integers(1, 64), st.floats(0.0, 0.99), st.floats(-2, 2), st.floats(-2, 2), seeds)
def test_lti_scalar_property(L, a, b, c, seed):
    x = SplitMix64(seed).normal(L)
    k = ssm.build_lti_kernel(a, b, c, L)
    seq = ssm.ssm_scan_sequential(
        ssm.SsmCoeffs(np.full((L, 1, 1), a), b * x.reshape(L, 1, 1), np.full((L, 1), c)), x[:, None])
    np.testing.assert_allclose(ssm.lti_conv(x, k), seq[:, 0], atol=1e-10)


# -- differentiable scan -----------------------------------------------------------

@pytest.mark.parametrize("skip", [True, False])
@pytest.mark.parametrize("L", [33, 4096])
@pytest.mark.parametrize("engine", ssm.SCAN_ENGINES)
def test_engines_agree(engine, L, skip, rng):
    args = [Tensor(v) for v in _selective_instance(rng, (2,), L, 4, 3)]
    D = Tensor(rng.normal(4)) if skip else None
    ref = ssm.selective_scan(*args, D, engine="sequential").data
    assert np.abs(ssm.selective_scan(*args, D, engine=engine).data - ref).max() <= 1e-12


@pytest.mark.parametrize("engine", ssm.SCAN_ENGINES)
def test_scan_gradients(engine, rng):
    x, dt, A, B, C = (parameter(v) for v in _selective_instance(rng, (2,), 9, 3, 3))
    D = parameter(rng.normal(3))
    w = rng.normal((2, 9, 3))
    f = lambda: T.sum_(T.mul(ssm.selective_scan(x, dt, A, B, C, D, engine), Tensor(w)))
    assert grad_check(f, [x, dt, A, B, C, D]) <= 1e-5


def test_skip_is_optional(rng):
    args = [Tensor(v) for v in _selective_instance(rng, (), 6, 2, 2)]
    with_d = ssm.selective_scan(*args, Tensor(np.ones(2))).data
    without = ssm.selective_scan(*args).data
    np.testing.assert_allclose(with_d - without, args[0].data, atol=1e-13)


def test_scan_rejects_bad_inputs(rng):
    x, dt, A, B, C = (Tensor(v) for v in _selective_instance(rng, (), 6, 2, 2))
    with pytest.raises(ValidationError):
        ssm.selective_scan(x, Tensor(-dt.data), A, B, C)
    with pytest.raises(ValidationError):
        ssm.selective_scan(x, dt, A, B, C, engine="nope")
    with pytest.raises(DimensionError):
        ssm.selective_scan(x, dt, A, Tensor(np.zeros((6, 3))), C)


def test_dt_rank_factorisation(rng):
    p = ssm.SsmParams(8, 2, rng, dt_rank=2)
    assert p.w_dt_down.shape == (8, 2) and p.w_dt.shape == (2, 8)
    assert p(Tensor(rng.normal((5, 8)))).shape == (5, 8)
