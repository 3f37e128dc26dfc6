import numpy as np
import pytest

from mumimo import kernels
from mumimo.channel import complex_normal

needs_numba = pytest.mark.skipif(kernels.BACKEND != "numba", reason="numba unavailable")


def batch(rng, T=7, M=10, B=6):
    H = complex_normal(rng, (T, M, B))
    Hh = 0.8 * H + 0.3 * complex_normal(rng, (T, M, B))
    return H, Hh


@needs_numba
def test_uplink_backends_agree(rng):
    _, Hh = batch(rng)
    q = rng.uniform(0.5, 2, 6)
    base = np.eye(10) * 1.3
    a = kernels.uplink_rates(Hh, q, base, 2, backend="numpy")
    b = kernels.uplink_rates(Hh, q, base, 2, backend="numba")
    assert np.allclose(a[0], b[0], rtol=1e-11) and np.allclose(a[1], b[1], rtol=1e-11)


@needs_numba
def test_downlink_backends_agree(rng):
    H, Hh = batch(rng)
    a = kernels.downlink_moments(H, Hh, np.ones(6), np.full(6, 0.2), 3, backend="numpy")
    b = kernels.downlink_moments(H, Hh, np.ones(6), np.full(6, 0.2), 3, backend="numba")
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-11, atol=1e-12)


def test_downlink_moments_definition(rng):
    H, Hh = batch(rng, T=3, M=5, B=4)
    mean, total, own = kernels.downlink_moments(H, Hh, np.ones(4), np.ones(4), 2, backend="numpy")
    E = np.conj(np.swapaxes(H, 1, 2)) @ Hh
    assert np.allclose(mean[1], E[:, 2:, 2:].sum(axis=0))
    assert np.allclose(total[0], sum(e[:2] @ e[:2].conj().T for e in E))
    assert np.allclose(own[0], sum(e[:2, :2] @ e[:2, :2].conj().T for e in E))


def test_unknown_backend_rejected():
    with pytest.raises(KeyError):
        kernels.get_kernels("fortran")
