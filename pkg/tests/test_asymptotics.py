import math

import numpy as np
import pytest
from scipy.optimize import brentq

from mumimo import ScenarioParams, SystemConfig, build_scenario, link_statistics
from mumimo import asymptotics as asy
from mumimo import kernels
from mumimo.channel import complex_normal
from mumimo.estimation import isotropic_link_statistics


def scalar_root(c, B, M, rho):
    b = rho + B * c / M - c
    return (-b + math.sqrt(b * b + 4 * rho * c)) / (2 * rho)


@pytest.mark.parametrize("dense", [True, False])
def test_fixed_point_matches_scalar_quadratic(dense):
    M, B, c, rho = 6, 9, 2.5, 0.3
    if dense:
        inp = asy.ResolventInputs(rho, np.zeros((M, M)), np.stack([c * np.eye(M)] * B), M)
    else:
        inp = asy.ResolventInputs(rho, np.zeros(M), np.full((B, M), c), M)
    fp = asy.solve_fixed_point(inp)
    assert np.allclose(fp.delta, scalar_root(c, B, M, rho), rtol=1e-9)
    assert fp.residual < 1e-10


def test_fixed_point_without_columns():
    S = np.diag([1.0, 2.0, 3.0])
    fp = asy.solve_fixed_point(asy.ResolventInputs(0.5, S, np.zeros((0, 3, 3)), 3))
    assert np.allclose(fp.T, np.linalg.inv(S + 0.5 * np.eye(3)))
    assert fp.iterations == 1


def test_fixed_point_non_convergence_carries_residuals(reference_scenario):
    inp = asy.uplink_resolvent_inputs(link_statistics(reference_scenario))
    with pytest.raises(asy.NonConvergenceError) as err:
        asy.solve_fixed_point(inp, max_iter=2)
    assert len(err.value.residuals) == 2


def test_rejects_nonpositive_rho():
    with pytest.raises(ValueError):
        asy.ResolventInputs(0.0, np.zeros(2), np.ones((1, 2)), 2)


def test_reference_inputs_converge_quickly(reference_scenario):
    fp = asy.solve_fixed_point(asy.uplink_resolvent_inputs(link_statistics(reference_scenario)))
    assert fp.iterations <= 500
    burn = fp.residuals[3:]
    assert np.all(np.diff(burn) <= 0)
    assert np.all(fp.delta >= 0)
    assert np.allclose(fp.T, fp.T.conj().T) and np.linalg.eigvalsh(fp.T).min() > 0


def test_diagonal_backends_agree():
    rng = np.random.default_rng(0)
    cols = rng.uniform(0, 3, (12, 40))
    shift = rng.uniform(0, 1, 40)
    a = kernels.fixed_point_diag(cols, shift, 0.05, 40.0, backend="numpy")
    if kernels.BACKEND == "numba":
        b = kernels.fixed_point_diag(cols, shift, 0.05, 40.0, backend="numba")
        assert np.allclose(a[0], b[0], rtol=1e-12) and np.allclose(a[1], b[1], rtol=1e-12)
    assert a[3]


def test_derivative_trivial_cases():
    M = 4
    S = np.eye(M)
    Theta = np.diag([1.0, 2.0, 0.5, 0.0])
    empty = asy.ResolventInputs(0.2, S, np.zeros((0, M, M)), M)
    fp = asy.solve_fixed_point(empty)
    d = asy.solve_derivative(empty, Theta, fp)
    assert np.allclose(d.Tprime, fp.T @ Theta @ fp.T)
    inp = asy.ResolventInputs(0.2, S, np.stack([np.eye(M), 2 * np.eye(M)]), M)
    fp = asy.solve_fixed_point(inp)
    z = asy.solve_derivative(inp, np.zeros((M, M)), fp)
    assert np.all(z.v == 0) and np.all(z.delta_prime == 0) and np.allclose(z.Tprime, 0)


def test_derivative_batched_equals_single():
    st = link_statistics(build_scenario(SystemConfig(M=16, K=3, N=2), seed=2))
    inp = asy.uplink_resolvent_inputs(st)
    fp = asy.solve_fixed_point(inp)
    th = np.stack([st.phi(0, 0), st.phi(1, 1)])
    both = asy.solve_derivative(inp, th, fp)
    one = asy.solve_derivative(inp, th[1], fp)
    assert np.allclose(both.Tprime[1], one.Tprime) and np.allclose(both.delta_prime[1], one.delta_prime)


def empirical_error(M, draws, rng):
    sc = build_scenario(SystemConfig(M=M, K=4, N=2), seed=21)
    st = link_statistics(sc)
    inp = asy.uplink_resolvent_inputs(st)
    fp = asy.solve_fixed_point(inp)
    D = st.rr(0) / sc.betas[0]
    roots = [np.linalg.cholesky(R + 1e-12 * np.eye(M)) for R in inp.columns]
    emp = []
    for _ in range(draws):
        H = np.stack([L @ complex_normal(rng, M) for L in roots], axis=1) / np.sqrt(M)
        A = H @ H.conj().T + inp.shift + inp.rho * np.eye(M)
        emp.append(np.trace(D @ np.linalg.inv(A)).real / M)
    de = np.trace(D @ fp.T).real / M
    return abs(np.mean(emp) - de) / de


def test_deterministic_equivalent_improves_with_m(rng):
    assert empirical_error(256, 200, rng) < empirical_error(32, 200, rng)


def test_zero_payload_power_gives_zero_uplink():
    st = isotropic_link_statistics(64, [1.0, 2.0], np.ones((2, 2)), 1.0, 0.0, 1.0)
    assert np.all(asy.uplink_sic_approx(st) == 0)
    assert np.all(asy.uplink_mmse_approx(st).rates == 0)


def test_single_user_single_stream_scalar_chain():
    M, beta, l, p, s2 = 50, 2.0, 0.7, 1.3, 1.0
    st = isotropic_link_statistics(M, [beta], [[1.0]], l, p, 1.0, s2)
    phi = l * beta**2 / (l * beta + s2)
    z = p * (beta - phi)
    c = p * phi

    def f(d):
        t = 1.0 / (c / (M * (1 + d)) + z / M + s2 / M)
        return c * t - d

    d = brentq(f, 0.0, 1e6)
    t = d / c
    assert asy.uplink_sic_approx(st)[0] == pytest.approx(math.log2(1 + p * phi * t), rel=1e-9)
    mm = asy.uplink_mmse_approx(st)
    assert mm.mu.sum() == 0
    assert mm.denominator[0, 0] == pytest.approx(mm.vartheta[0, 0] / M)


def test_downlink_single_user_closed_form():
    M = 40
    lam = np.array([[1.4, 0.6]])
    st = isotropic_link_statistics(M, [1.5], lam, 0.8, 1.0, [[0.9, 0.4]])
    a = st.phi_trace()[0]
    theta = a.sum()
    expected = np.log2(1 + M * lam[0] * np.array([0.9, 0.4]) * a**2 / theta).sum()
    assert asy.downlink_approx(st)[0] == pytest.approx(expected, rel=1e-12)
    off = isotropic_link_statistics(M, [1.5, 1.0], np.ones((2, 2)), 1.0, 1.0, 0.0)
    assert np.all(asy.downlink_approx(off) == 0)


def test_dense_and_isotropic_representations_agree():
    sc = build_scenario(SystemConfig(M=12, K=3, N=2), ScenarioParams(a_r=0.0), seed=5)
    dense = link_statistics(sc)
    iso = isotropic_link_statistics(12, sc.betas, sc.stacked("Lambda"), sc.stacked("L"), sc.stacked("P"),
                                    sc.stacked("Omega"))
    assert np.allclose(asy.uplink_sic_approx(dense), asy.uplink_sic_approx(iso), rtol=1e-9)
    assert np.allclose(asy.uplink_mmse_approx(dense).rates, asy.uplink_mmse_approx(iso).rates, rtol=1e-9)
    assert np.allclose(asy.downlink_approx(dense), asy.downlink_approx(iso), rtol=1e-12)


def test_inter_stream_share_vanishes_with_m():
    shares = []
    for M in (32, 64, 128, 256):
        st = link_statistics(build_scenario(SystemConfig(M=M, K=10, N=3), seed=1))
        shares.append(asy.uplink_mmse_approx(st).own_user_share().mean())
    assert np.all(np.diff(shares) < 0)


def test_mmse_sinr_nonnegative(reference_scenario):
    assert np.all(asy.uplink_mmse_approx(link_statistics(reference_scenario)).sinr >= 0)


def hien_limit(tau, beta, Eu, sigma2=1.0):
    return math.log2(1 + tau * beta**2 * Eu**2 / sigma2**2)


def test_half_scaling_single_stream_is_root_m_law():
    betas = np.array([0.5, 1.0, 3.0])
    Eu = 2.0
    got = asy.uplink_scaling_limit(0.5, Eu, Eu, betas, np.ones((3, 1)))
    assert np.allclose(got, [hien_limit(3, b, Eu) for b in betas], rtol=1e-15)


def test_scaling_limit_properties():
    lam = np.array([[1.5, 0.5], [1.2, 0.8]])
    L0 = np.array([[1.0, 2.0], [0.5, 0.5]])
    ups = asy.pilot_shares(lam, L0)
    assert np.all((ups >= 0) & (ups <= 1)) and np.allclose(ups.sum(axis=1), 1)
    betas = [1.0, 2.0]
    assert np.all(asy.uplink_scaling_limit(1.0, L0, 1.0, betas, lam) < asy.uplink_scaling_limit(0.9, L0, 1.0, betas, lam))
    assert np.all(asy.downlink_scaling_limit(1.0, L0, 1.0, betas, lam) < asy.downlink_scaling_limit(0.5, L0, 1.0, betas, lam))
    assert np.all(asy.downlink_scaling_limit(0.5, L0, 0.0, betas, lam) == 0)
    with pytest.raises(ValueError):
        asy.uplink_scaling_limit(1.2, L0, 1.0, betas, lam)
    with pytest.raises(asy.DegenerateUserError):
        asy.downlink_scaling_limit(0.5, np.zeros((2, 2)), 1.0, betas, lam)


def test_full_scaling_sequence_closes_gap_monotonically():
    sc = build_scenario(SystemConfig(M=1, K=4, N=2), ScenarioParams(a_r=0.0), seed=3)
    args = (sc.stacked("L"), sc.stacked("P"), sc.stacked("Omega"), sc.betas, sc.stacked("Lambda"))
    grid = [10, 100, 1000, 10**4, 10**5]
    ul, dl = asy.scaling_sequence(grid, 1.0, *args)
    lim_ul = asy.uplink_scaling_limit(1.0, args[0], args[1], args[3], args[4]).sum()
    lim_dl = asy.downlink_scaling_limit(1.0, args[0], args[2], args[3], args[4]).sum()
    assert np.all(np.diff(np.abs(lim_ul - ul)) < 0) and np.all(np.diff(np.abs(lim_dl - dl)) < 0)
    assert np.all(ul < lim_ul) and np.all(dl < lim_dl)
