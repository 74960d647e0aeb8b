import numpy as np

from ssmixer import tensor as T
from ssmixer.gradcheck import grad_check
from ssmixer.nn import parameter
from ssmixer.tensor import Tensor
from ssmixer.verify import block_grad_error


def test_quadratic_loss():
    a = parameter(np.array([0.3, -1.2, 2.0]))
    f = lambda: T.sum_(T.mul(a, a))
    assert grad_check(f, [a]) <= 1e-9


def test_constant_function():
    a = parameter(np.array([1.0, 2.0]))
    assert grad_check(lambda: Tensor(3.0), [a]) == 0.0


def test_detects_a_wrong_gradient():
    a = parameter(np.array([0.5, 1.5]))

    def f():
        y = T.mul(a, a)
        bad = T._make(y.data, (a,), lambda g: (g * 3.0 * a.data,), "bad_square")
        return T.sum_(bad)

    assert grad_check(f, [a]) > 0.1


def test_restores_parameters():
    a = parameter(np.array([0.5, 1.5]))
    before = a.data.copy()
    grad_check(lambda: T.sum_(T.exp(a)), [a])
    assert np.array_equal(a.data, before)


def test_full_mixer_block():
    err, n = block_grad_error(seed=0)
    assert n > 600
    assert err <= 1e-4
