import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from ssmixer import ssm
from ssmixer.fused import fused_backward, fused_forward
from ssmixer.rng import SplitMix64
from ssmixer.verify import _selective_instance


def loop_reference(x, dt, A, B, C):
    """Per-element recurrence written out literally, the oracle for the kernel."""
    R, L, E = x.shape
    y = np.zeros((R, L, E))
    for r in range(R):
        for e in range(E):
            h = np.zeros(A.shape[1])
            for t in range(L):
                abar, bbar = ssm.discretize_zoh(A[e], B[r, t], dt[r, t, e])
                h = abar * h + bbar * x[r, t, e]
                y[r, t, e] = h @ C[r, t]
    return y


@given(st.integers(1, 12), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_forward_matches_loop(L, E, N, seed):
    x, dt, A, B, C = _selective_instance(SplitMix64(seed), (2,), L, E, N)
    y = np.empty((2, L, E))
    h = np.empty((2, L, E, N))
    fused_forward(x, dt, A, B, C, y, h)
    np.testing.assert_allclose(y, loop_reference(x, dt, A, B, C), atol=1e-12)


def test_series_branch_for_tiny_steps(rng):
    x, dt, A, B, C = _selective_instance(rng, (1,), 6, 2, 2)
    dt = np.full_like(dt, 1e-10)
    y = np.empty((1, 6, 2))
    fused_forward(x, dt, A, B, C, y, np.empty((1, 6, 2, 2)))
    np.testing.assert_allclose(y, loop_reference(x, dt, A, B, C), rtol=1e-9, atol=1e-25)


def test_backward_matches_parallel_engine(rng):
    from ssmixer import tensor as T
    from ssmixer.nn import parameter
    from ssmixer.tensor import Tensor

    vals = _selective_instance(rng, (3,), 17, 3, 2)
    w = rng.normal((3, 17, 3))
    grads = {}
    for engine in ("parallel", "fused"):
        ps = [parameter(v.copy()) for v in vals]
        T.sum_(T.mul(ssm.selective_scan(*ps, engine=engine), Tensor(w))).backward()
        grads[engine] = [p.grad for p in ps]
    for a, b in zip(grads["parallel"], grads["fused"]):
        np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-12)


def test_backward_returns_all_grads(rng):
    x, dt, A, B, C = _selective_instance(rng, (1,), 5, 2, 3)
    y, h = np.empty((1, 5, 2)), np.empty((1, 5, 2, 3))
    fused_forward(x, dt, A, B, C, y, h)
    out = fused_backward(np.ones_like(y), x, dt, A, B, C, h)
    assert [g.shape for g in out] == [x.shape, dt.shape, A.shape, B.shape, C.shape]
