import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssmixer import ntf
from ssmixer.errors import ConfigError, SequencingError, ValidationError
from ssmixer.nn import LayerNorm
from ssmixer.mixers import TokenMixer
from ssmixer.tensor import Tensor, no_grad
from ssmixer.verify import (chain_stack_difference, check_coeff_grads, check_scoping,
                            coefficient_audit)
from ssmixer.wiring import (INIT_MODES, AvgCoeffs, FeatureCache, MixerStack, Residual,
                            channel_input, coefficient_count, init_coeffs, token_input,
                            weighted_sum)


def cache_with(rng, n, shape=(3, 2)):
    x = Tensor(rng.normal(shape))
    cache = FeatureCache(x)
    for i in range(1, n + 1):
        cache.write("token", i, Tensor(rng.normal(shape)))
        cache.write("channel", i, Tensor(rng.normal(shape)))
    return cache


def coeffs(n, **values):
    """``values`` keyed like ``alpha_2_1=0.5``."""
    v = {}
    for k, val in values.items():
        name, l, i = k.split("_")
        v[name, int(l), int(i)] = val
    return AvgCoeffs(n, v)


def test_plain_chaining(rng):
    cache = cache_with(rng, 2)
    y = token_input(3, cache, coeffs(3, alpha_3_2=1.0))
    assert np.array_equal(y.data, cache.read("token", 2).data)


def test_all_zero_gives_zero(rng):
    cache = cache_with(rng, 2)
    assert not token_input(3, cache, coeffs(3)).data.any()
    assert not channel_input(2, cache, coeffs(3)).data.any()


def test_first_block_boundary(rng):
    cache = cache_with(rng, 0)
    y = token_input(1, cache, coeffs(1, alpha_1_0=0.5, beta_1_0=0.5))
    np.testing.assert_allclose(y.data, cache.read("token", 0).data, atol=1e-15)


def test_channel_input_sequential(rng):
    cache = cache_with(rng, 2)
    y = channel_input(2, cache, coeffs(2, theta_2_2=1.0))
    assert np.array_equal(y.data, cache.read("token", 2).data)


def test_channel_input_residual_style(rng):
    cache = cache_with(rng, 2)
    y = channel_input(2, cache, coeffs(2, theta_2_2=1.0, gamma_2_1=1.0))
    np.testing.assert_array_equal(y.data, cache.read("token", 2).data + cache.read("channel", 1).data)


def test_cache_sequencing(rng):
    cache = FeatureCache(Tensor(np.zeros(2)))
    with pytest.raises(SequencingError):
        cache.read("token", 1)
    cache.write("token", 1, Tensor(np.ones(2)))
    with pytest.raises(SequencingError):
        cache.write("token", 1, Tensor(np.ones(2)))


def test_weighted_sum_empty():
    with pytest.raises(ValidationError):
        weighted_sum([], [])


# -- counts and init ---------------------------------------------------------------

@pytest.mark.parametrize("n,expect", [(3, 27), (4, 44), (5, 65)])
def test_count_examples(n, expect):
    assert coefficient_count(n) == expect
    for mode in INIT_MODES:
        assert init_coeffs(n, mode).count() == expect


@given(st.integers(1, 50))
def test_count_closed_form(n):
    assert init_coeffs(n).count() == n * (2 * n + 3) == sum(4 * l + 1 for l in range(1, n + 1))


def test_count_audit_1_to_50():
    assert coefficient_audit(50) == 0


def nonzero(c):
    return {k: float(t.data) for k, t in c.items() if t.data != 0}


def test_chain_single_block():
    assert nonzero(init_coeffs(1, "chain")) == {("alpha", 1, 0): 1.0, ("theta", 1, 1): 1.0}


def test_residual_adds_gamma():
    assert nonzero(init_coeffs(2, "residual")) == {
        ("alpha", 1, 0): 1.0, ("theta", 1, 1): 1.0, ("gamma", 1, 0): 1.0,
        ("alpha", 2, 1): 1.0, ("theta", 2, 2): 1.0, ("gamma", 2, 1): 1.0}


def test_uniform_second_token_input():
    c = init_coeffs(2, "uniform")
    vals = [float(c.get(n, 2, i).data) for n in ("alpha", "beta") for i in range(2)]
    assert vals == [0.25] * 4


def test_unknown_mode():
    with pytest.raises(ConfigError):
        init_coeffs(2, "softmax")


def test_coefficients_are_scalars_in_checkpoints():
    c = init_coeffs(2, "chain")
    state = c.state_dict()
    assert "alpha.2.1" in state and state["alpha.2.1"].shape == ()
    back = ntf.loads(ntf.dumps({f"avg.{k}": v for k, v in state.items()}))
    assert back["avg.theta.2.2"] == 1.0


def test_frozen_coefficients_are_not_trained():
    c = init_coeffs(3, "chain", frozen=True)
    assert c.parameters() == []
    assert len(c.state_dict()) == 27


# -- stacks ------------------------------------------------------------------------

def test_chain_stack_is_sequential_composition():
    assert chain_stack_difference(seed=0) <= 1e-12
    assert chain_stack_difference(seed=1, n_blocks=5) <= 1e-12


def test_residual_stack_forward(rng):
    blocks = [Residual(LayerNorm(3), TokenMixer(3, rng, N=2)) for _ in range(2)]
    stack = MixerStack([[b] for b in blocks], [None, None], "chain")
    x = Tensor(rng.normal((4, 3)))
    with no_grad():
        out, cache = stack(x, return_cache=True)
    # fresh mixers have zero output maps, so residual blocks are identities
    np.testing.assert_array_equal(out.data, x.data)
    assert sorted(cache.token) == [0, 1, 2]


def test_every_coefficient_receives_gradient():
    assert check_coeff_grads().passed


def test_stage_scoping():
    assert check_scoping().passed


def test_pairing_enforced(rng):
    with pytest.raises(ConfigError):
        MixerStack([[]], [None, None])
