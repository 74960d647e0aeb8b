import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssmixer import tensor as T
from ssmixer.errors import DimensionError, ValidationError
from ssmixer.mixers import (ChannelMixer, CrossScanTokenMixer, TokenMixer, channel_mix,
                            token_mix_multi, token_mix_uni)
from ssmixer.rng import SplitMix64
from ssmixer.tensor import Tensor, no_grad
from ssmixer.verify import (check_channel_noncausal, check_equivariance, check_mixer_grads,
                            randomize, token_causality)

seeds = st.integers(0, 2**32 - 1)


def live(mixer, rng):
    """Nonzero output map so mixer outputs are not identically zero."""
    mixer.out_proj.weight.data = rng.normal(mixer.out_proj.weight.shape)
    return mixer


def run(m, x):
    with no_grad():
        return m(Tensor(x)).data


def memoryless(branch):
    """Identity conv and abar = exp(dt * A) = 0: the branch becomes pointwise along its scan."""
    branch.conv_kernel.data[:] = 0.0
    branch.conv_kernel.data[:, 0] = 1.0
    branch.ssm.a_log.data[:] = np.log(1e4)
    branch.ssm.b_dt.data[:] = 10.0


@given(st.integers(1, 7), st.integers(1, 5), seeds)
def test_shape_preservation(L, D, seed):
    r = SplitMix64(seed)
    x = r.normal((2, L, D))
    assert run(TokenMixer(D, r, N=2), x).shape == x.shape
    assert run(ChannelMixer(L, r, N=2), x).shape == x.shape
    assert run(CrossScanTokenMixer(D, r, N=2), r.normal((2, L, 3, D))).shape == (2, L, 3, D)


def test_width_checks(rng):
    with pytest.raises(DimensionError):
        TokenMixer(3, rng)(Tensor(np.zeros((4, 5))))
    with pytest.raises(DimensionError):
        ChannelMixer(4, rng)(Tensor(np.zeros((5, 3))))


# -- token mixer ------------------------------------------------------------------

def test_degenerate_token_mixer_is_pointwise(rng):
    m = live(TokenMixer(3, rng, N=2), rng)
    memoryless(m)
    x = rng.normal((6, 3))
    pi = rng.permutation(6)
    np.testing.assert_allclose(run(m, x[pi]), run(m, x)[pi], atol=1e-14)


def test_zero_input_zero_output(rng):
    m = live(TokenMixer(3, rng, N=2), rng)
    assert not run(m, np.zeros((5, 3))).any()


def test_batch_copies_are_independent(rng):
    m = live(TokenMixer(3, rng, N=2), rng)
    x = rng.normal((5, 3))
    y = run(m, np.stack([x, x]))
    assert np.array_equal(y[0], y[1])
    np.testing.assert_array_equal(y[0], run(m, x))


def test_fresh_mixer_outputs_zero(rng):
    assert not run(TokenMixer(3, rng), rng.normal((4, 3))).any()


def test_token_causality():
    assert token_causality(n=20) <= 1e-14


@given(st.integers(2, 12), seeds)
def test_token_causality_property(L, seed):
    r = SplitMix64(seed)
    m = randomize(TokenMixer(2, r, N=2), r)
    x = r.normal((L, 2))
    t = 1 + int(r.integers(L - 1, 1)[0])
    x2 = x.copy()
    x2[t] += 1.0
    assert np.abs(run(m, x)[:t] - run(m, x2)[:t]).max() <= 1e-14


def test_uni_wrapper(rng):
    m = live(TokenMixer(2, rng, N=2), rng)
    x = rng.normal((4, 2))
    assert np.array_equal(run(lambda v: token_mix_uni(v, m), x), run(m, x))


def test_multi_identity_path_equals_uni(rng):
    m = live(TokenMixer(2, rng, N=2), rng)
    x = rng.normal((5, 2))
    with no_grad():
        y = token_mix_multi(Tensor(x), [np.arange(5)], [m]).data
    assert np.array_equal(y, run(m, x))


def test_multi_mirrored_instance(rng):
    L = 6
    ms = [live(TokenMixer(2, rng, N=2), rng) for _ in range(2)]
    ident, rev = np.arange(L), np.arange(L)[::-1]
    x = rng.normal((L, 2))
    with no_grad():
        y = token_mix_multi(Tensor(x), [ident, rev], ms).data
        # reversing the rows turns path i into rev o i: identity <-> reversal
        ym = token_mix_multi(Tensor(x[::-1].copy()), [rev, ident], ms).data
    np.testing.assert_allclose(ym, y[::-1], atol=1e-12)


def test_multi_equivariance():
    assert check_equivariance().passed


def test_multi_zero_out_proj(rng):
    ms = [TokenMixer(2, rng, N=2) for _ in range(2)]
    with no_grad():
        y = token_mix_multi(Tensor(rng.normal((4, 2))), [np.arange(4), np.arange(4)[::-1]], ms).data
    assert not y.any()


def test_multi_path_count_mismatch(rng):
    with pytest.raises(ValidationError):
        token_mix_multi(Tensor(np.zeros((3, 2))), [np.arange(3)], [])


# -- channel mixer ----------------------------------------------------------------

def test_zeroed_channel_is_isolated_when_memoryless(rng):
    L, D, c = 4, 5, 2
    m = live(ChannelMixer(L, rng, N=2), rng)
    memoryless(m.forward)
    memoryless(m.backward)
    x = rng.normal((L, D))
    x[:, c] = 0.0
    x2 = x.copy()
    x2[:, [0, 1, 3, 4]] += rng.normal((L, 4))
    y, y2 = run(m, x), run(m, x2)
    # main branch at channel c sees silu(0) = 0, so the output there is the output bias alone
    np.testing.assert_array_equal(y[:, c], m.out_proj.bias.data)
    np.testing.assert_array_equal(y[:, c], y2[:, c])


def test_palindrome_branches_agree(rng):
    L, D = 3, 6
    m = ChannelMixer(L, rng, N=2)
    m.backward.load_state_dict(m.forward.state_dict())
    x = np.tile(rng.normal((L, 1)), (1, D))  # constant across channels
    with no_grad():
        yf, yb, _ = m.branches(T.swapaxes(Tensor(x), -1, -2))
    np.testing.assert_array_equal(yf.data, yb.data)


def test_single_token_still_mixes_channels(rng):
    m = live(ChannelMixer(1, rng, N=2), rng)
    x = rng.normal((1, 5))
    y = run(m, x)
    for b in (m.forward, m.backward):
        b.conv_kernel.data[:] = 0.0
        b.conv_kernel.data[:, 0] = 1.0
    assert np.abs(y - run(m, x)).max() > 1e-6


def test_channel_noncausal():
    assert check_channel_noncausal().passed


def test_channel_wrapper(rng):
    m = live(ChannelMixer(3, rng, N=2), rng)
    x = rng.normal((3, 4))
    assert np.array_equal(run(lambda v: channel_mix(v, m), x), run(m, x))


def test_per_scan_mode(rng):
    L = 4
    paths = [np.arange(L), np.arange(L)[::-1]]
    m = live(ChannelMixer(L, rng, N=2, mode="per-scan", paths=paths), rng)
    assert run(m, rng.normal((2, L, 3))).shape == (2, L, 3)
    with pytest.raises(ValidationError):
        ChannelMixer(L, rng, mode="per-scan")
    with pytest.raises(ValidationError):
        ChannelMixer(L, rng, mode="diagonal")


def test_expansion_default(rng):
    assert TokenMixer(5, rng).E == 10
    assert ChannelMixer(7, rng).E == 14


# -- cross-scan mixer -------------------------------------------------------------

def test_cross_scan_per_direction_parameters(rng):
    m = CrossScanTokenMixer(3, rng, N=2)
    assert len(m.ssm) == 4
    assert not np.array_equal(m.ssm[0].w_b.data, m.ssm[1].w_b.data)


def test_cross_scan_direction_validation(rng):
    with pytest.raises(ValidationError):
        CrossScanTokenMixer(3, rng, directions=3)


def test_mixer_gradients():
    assert check_mixer_grads().passed
