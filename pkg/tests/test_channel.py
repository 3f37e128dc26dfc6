import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mumimo.channel import (complex_normal, draw_channel, dump_matrix_csv, eigendecompose_tx,
                            exp_correlation, hermitian_eig, load_matrix_csv, matrix_sqrt)
from mumimo import SystemConfig, build_scenario


@given(dim=st.integers(1, 12), a=st.floats(0.0, 0.99), theta=st.floats(-np.pi, np.pi))
@settings(max_examples=60, deadline=None)
def test_exp_correlation_is_hermitian_psd_with_unit_diagonal(dim, a, theta):
    R = exp_correlation(dim, a, theta)
    assert np.allclose(R, R.conj().T, atol=0)
    assert np.allclose(np.diag(R), 1.0)
    assert np.linalg.eigvalsh(R).min() > -1e-12


def test_exp_correlation_entries():
    a, th = 0.4, 0.7
    R = exp_correlation(4, a, th)
    c = a * np.exp(1j * th)
    assert R[0, 2] == pytest.approx(c**2)
    assert R[3, 1] == pytest.approx(np.conj(c) ** 2)


def test_exp_correlation_zero_is_identity():
    assert np.array_equal(exp_correlation(5, 0.0, 1.3), np.eye(5))


@pytest.mark.parametrize("a", [-0.1, 1.0, 1.5])
def test_exp_correlation_rejects_bad_magnitude(a):
    with pytest.raises(ValueError):
        exp_correlation(3, a)


def test_hermitian_eig_rejects_non_hermitian_and_indefinite():
    with pytest.raises(ValueError):
        hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        hermitian_eig(np.diag([1.0, -1.0]))


def test_eigendecompose_tx_sorted_and_reconstructs():
    R = exp_correlation(5, 0.6, 0.3)
    U, lam = eigendecompose_tx(R)
    assert np.all(np.diff(lam) <= 0)
    assert np.allclose((U * lam) @ U.conj().T, R, atol=1e-12)
    assert np.allclose(U.conj().T @ U, np.eye(5), atol=1e-12)
    pivots = U[np.argmax(np.abs(U), axis=0), np.arange(5)]
    assert np.allclose(pivots.imag, 0) and np.all(pivots.real > 0)


def test_matrix_sqrt_squares_back():
    R = exp_correlation(6, 0.8, -1.0)
    S = matrix_sqrt(R)
    assert np.allclose(S @ S, R, atol=1e-12)


def test_complex_normal_moments(rng):
    z = complex_normal(rng, 200_000)
    assert abs(np.mean(np.abs(z) ** 2) - 1.0) < 0.01
    assert abs(np.mean(z * z)) < 0.01


def test_draw_channel_column_covariance(rng):
    sc = build_scenario(SystemConfig(M=4, K=1, N=2), seed=9)
    R = sc.users[0].R_r
    acc = np.zeros((4, 4), dtype=complex)
    T = 20_000
    for _ in range(T):
        H = draw_channel(sc, rng).H[0]
        acc += H @ H.conj().T
    # each of the N columns has covariance R_r
    assert np.linalg.norm(acc / T / 2 - R) / np.linalg.norm(R) < 0.03


def test_matrix_csv_round_trip(tmp_path, rng):
    A = complex_normal(rng, (3, 4)) * 1e-7
    dump_matrix_csv(A, tmp_path / "a.csv")
    assert np.array_equal(load_matrix_csv(tmp_path / "a.csv"), A)
