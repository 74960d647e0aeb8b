import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ssmixer.errors import DimensionError
from ssmixer.nn import Linear, LayerNorm
from ssmixer.optim import AdamW, AdamWHparams, AdamWState, adamw_step


def one_step(p, g, **hp):
    state = AdamWState.zeros_like([p])
    adamw_step([p], [g], state, AdamWHparams(**hp))
    return p, state


def test_defaults():
    hp = AdamWHparams()
    assert (hp.lr, hp.weight_decay, hp.betas, hp.eps) == (1e-3, 0.05, (0.9, 0.999), 1e-8)


def test_zero_grad_zero_decay_is_identity():
    p = np.array([1.0, -2.0, 3.0])
    out, _ = one_step(p.copy(), np.zeros(3), weight_decay=0.0)
    assert np.array_equal(out, p)


@given(hnp.arrays(np.float64, 4, elements=st.floats(-5, 5)),
       hnp.arrays(np.float64, 4, elements=st.floats(1e-3, 10) | st.floats(-10, -1e-3)))
def test_first_step_is_signed_lr(p, g):
    # t = 1: m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
    out, _ = one_step(p.copy(), g, lr=1e-3, weight_decay=0.0)
    np.testing.assert_allclose(out, p - 1e-3 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-15)
    np.testing.assert_allclose(out - p, -1e-3 * np.sign(g), atol=1e-3 * 1e-5)


def test_decay_only_shrinks():
    p = np.array([2.0, -4.0])
    out, _ = one_step(p.copy(), np.zeros(2), lr=1e-3, weight_decay=0.05)
    np.testing.assert_allclose(out, p * (1 - 1e-3 * 0.05), rtol=0, atol=1e-16)


def test_two_steps_hand_evaluated():
    p, g = np.array([1.0]), np.array([0.5])
    state = AdamWState.zeros_like([p])
    hp = AdamWHparams(lr=0.1, weight_decay=0.0)
    adamw_step([p], [g], state, hp)
    adamw_step([p], [2 * g], state, hp)
    m = 0.9 * 0.1 * 0.5 + 0.1 * 1.0
    v = 0.999 * 0.001 * 0.25 + 0.001 * 1.0
    step2 = 0.1 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(p, 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - step2, atol=1e-15)
    assert state.step == 2


def test_state_shape_checks():
    with pytest.raises(DimensionError):
        adamw_step([np.zeros(2)], [np.zeros(2)], AdamWState.zeros_like([np.zeros(3)]), AdamWHparams())
    with pytest.raises(DimensionError):
        adamw_step([np.zeros(2)], [], AdamWState.zeros_like([np.zeros(2)]), AdamWHparams())


def test_decay_mask_on_model(rng):
    lin, ln = Linear(3, 2, rng), LayerNorm(2)
    opt = AdamW(lin.parameters() + ln.parameters(), AdamWHparams(lr=0.1, weight_decay=0.5))
    assert opt.decay_mask == [True, False, False, False]
    before = [t.data.copy() for t in opt.tensors]
    opt.zero_grad()
    opt.step()  # no gradients: only decay acts
    np.testing.assert_allclose(opt.tensors[0].data, before[0] * (1 - 0.05))
    for t, b in zip(opt.tensors[1:], before[1:]):
        assert np.array_equal(t.data, b)
