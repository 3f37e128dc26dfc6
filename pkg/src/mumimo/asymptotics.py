"""Deterministic equivalents and large-system SE approximations.

The resolvent ``(H H^H + S + rho I)^{-1}``, with independent columns
``h_b ~ CN(0, R_b / M)``, is replaced by the solution ``T`` of a fixed point
in B scalars. Matrices are either dense (M x M) or diagonal; a diagonal of
length 1 stands for a scaled identity of size M. Normalised traces are
``(1/M) tr`` in both cases, i.e. means over the stored diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .estimation import LinkStatistics, isotropic_link_statistics

FP_TOL = 1e-10
FP_MAX_ITER = 1000
FP_DAMPING = 0.5


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, residuals):
        super().__init__(message)
        self.residuals = np.asarray(residuals)


class IllConditionedDerivativeError(ArithmeticError):
    pass


class DegenerateUserError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ResolventInputs:
    """Fixed-point inputs. ``shift`` is the deterministic additive matrix, ``columns`` the B column covariances."""

    rho: float
    shift: np.ndarray
    columns: np.ndarray
    M: int

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        m = self.shift.shape[0]
        if self.dense:
            if self.shift.shape != (m, m) or self.columns.shape[1:] != (m, m):
                raise ValueError("dense inputs need an M x M shift and B x M x M columns")
            if m != self.M:
                raise ValueError("dense matrix size must equal M")
        elif self.columns.shape[1:] != (m,):
            raise ValueError("diagonal inputs need matching lengths")

    @property
    def dense(self) -> bool:
        return self.shift.ndim == 2

    @property
    def B(self) -> int:
        return self.columns.shape[0]

    def ntrace(self, A, Bm=None) -> np.ndarray:
        """``(1/M) tr(A B)`` for matrices (or stacks) in this representation."""
        if self.dense:
            if Bm is None:
                return np.real(np.trace(A, axis1=-2, axis2=-1)) / self.M
            return np.real(np.einsum("...ij,...ji->...", A, Bm)) / self.M
        return (A if Bm is None else A * Bm).mean(axis=-1)

    def mul(self, A, Bm):
        return A @ Bm if self.dense else A * Bm

    def identity(self):
        m = self.shift.shape[0]
        return np.eye(m) if self.dense else np.ones(m)


@dataclass(frozen=True, eq=False)
class FixedPointSolution:
    T: np.ndarray
    delta: np.ndarray
    iterations: int
    residuals: np.ndarray

    @property
    def residual(self) -> float:
        return float(self.residuals[-1]) if self.residuals.size else 0.0


@dataclass(frozen=True, eq=False)
class DerivativeSolution:
    Tprime: np.ndarray
    delta_prime: np.ndarray
    J: np.ndarray
    v: np.ndarray


def _hermitian_inverse(A: np.ndarray) -> np.ndarray:
    A = 0.5 * (A + A.conj().T)
    inv = cho_solve(cho_factor(A), np.eye(A.shape[0]))
    return 0.5 * (inv + inv.conj().T)


def _t_matrix(inp: ResolventInputs, delta: np.ndarray) -> np.ndarray:
    w = 1.0 / (inp.M * (1.0 + delta))
    if inp.dense:
        A = np.einsum("b,bij->ij", w, inp.columns) + inp.shift + inp.rho * np.eye(inp.M)
        return _hermitian_inverse(A)
    return 1.0 / ((w[:, None] * inp.columns).sum(axis=0) + inp.shift + inp.rho)


def solve_fixed_point(inp: ResolventInputs, tol: float = FP_TOL, max_iter: int = FP_MAX_ITER,
                      damping: float = FP_DAMPING, backend=None) -> FixedPointSolution:
    """Successive substitution from ``delta = 1/rho``; damping switches on if the residual grows."""
    if inp.B == 0:
        return FixedPointSolution(_t_matrix(inp, np.zeros(0)), np.zeros(0), 1, np.zeros(1))
    if not inp.dense:
        delta, t, res, ok = kernels.fixed_point_diag(np.real(inp.columns), np.real(inp.shift), inp.rho,
                                                     inp.M, tol, max_iter, damping, backend)
        if not ok:
            raise NonConvergenceError(f"fixed point did not converge in {max_iter} iterations", res)
        return FixedPointSolution(t, delta, len(res), res)

    delta = np.full(inp.B, 1.0 / inp.rho)
    res = []
    prev = np.inf
    damp = False
    for _ in range(max_iter):
        T = _t_matrix(inp, delta)
        new = inp.ntrace(inp.columns, T)
        if damp:
            new = damping * new + (1.0 - damping) * delta
        r = float(np.max(np.abs(new - delta)))
        delta = new
        res.append(r)
        if r < tol:
            return FixedPointSolution(_t_matrix(inp, delta), delta, len(res), np.array(res))
        if r > prev:
            damp = True
        prev = r
    raise NonConvergenceError(f"fixed point did not converge in {max_iter} iterations", res)


def solve_derivative(inp: ResolventInputs, Theta, fp: FixedPointSolution) -> DerivativeSolution:
    """Deterministic equivalent ``T'`` of ``A^{-1} Theta A^{-1}``.

    ``Theta`` may be a stack, in which case every output gains a leading axis.
    """
    Theta = np.asarray(Theta)
    single = Theta.ndim == (2 if inp.dense else 1)
    Th = Theta[None] if single else Theta
    T, delta, M = fp.T, fp.delta, inp.M
    TThT = np.stack([inp.mul(inp.mul(T, th), T) for th in Th])
    Bn = inp.B
    if Bn == 0:
        J = np.zeros((0, 0))
        dp = np.zeros((len(Th), 0))
        v = dp
        Tp = TThT
    else:
        P = np.stack([inp.mul(R, T) for R in inp.columns])
        if inp.dense:
            G = np.real(np.einsum("bij,lji->bl", P, P)) / M
        else:
            G = (P @ P.T) / P.shape[1]
        J = G / (M * (1.0 + delta)[None, :] ** 2)
        A = np.eye(Bn) - J
        if np.linalg.cond(A) > 1e12:
            raise IllConditionedDerivativeError("I - J is numerically singular")
        if inp.dense:
            v = np.real(np.einsum("bij,tji->tb", inp.columns, TThT)) / M
        else:
            v = (TThT @ inp.columns.T) / TThT.shape[1]
        dp = np.linalg.solve(A, v.T).T
        wts = dp / (M * (1.0 + delta) ** 2)
        if inp.dense:
            mid = np.einsum("tb,bij->tij", wts, inp.columns)
            Tp = TThT + T @ mid @ T
            Tp = 0.5 * (Tp + np.conj(np.swapaxes(Tp, -1, -2)))
        else:
            Tp = TThT + (wts @ inp.columns) * T * T
    if single:
        return DerivativeSolution(Tp[0], dp[0], J, v[0])
    return DerivativeSolution(Tp, dp, J, v)


# -- SE approximations -----------------------------------------------------------

def _stat_matrices(stats: LinkStatistics):
    """Per-stream ``Phi`` and the error matrix ``Z`` in the statistics' representation."""
    if stats.dense:
        Phi = np.stack([[stats.phi(k, i) for i in range(stats.N)] for k in range(stats.K)])
    else:
        Phi = stats.phi_eig
    return Phi, stats.Z()


def uplink_resolvent_inputs(stats: LinkStatistics) -> ResolventInputs:
    """``rho = sigma2/M``, shift ``Z/M``, columns ``lambda p Phi`` in stream order."""
    M = stats.M
    return ResolventInputs(stats.sigma2 / M, stats.Z() / M, stats.column_covariances(), M)


def uplink_sic_approx(stats: LinkStatistics, fp: FixedPointSolution | None = None) -> np.ndarray:
    """Per-user ``sum_i log2(1 + lambda p (1/M) tr(Phi T))``."""
    inp = uplink_resolvent_inputs(stats)
    fp = fp or solve_fixed_point(inp)
    Phi, _ = _stat_matrices(stats)
    delta = inp.ntrace(Phi, fp.T[None, None])
    return np.log2(1.0 + stats.lam * stats.p * delta).sum(axis=1)


@dataclass(frozen=True, eq=False)
class UplinkMMSEApprox:
    sinr: np.ndarray
    delta: np.ndarray
    mu: np.ndarray
    vartheta: np.ndarray
    denominator: np.ndarray

    @property
    def rates(self) -> np.ndarray:
        return np.log2(1.0 + self.sinr).sum(axis=1)

    def own_user_share(self) -> np.ndarray:
        """Fraction of each stream's denominator due to the other streams of the same user."""
        K, N = self.sinr.shape
        own = np.zeros((K, N))
        for k in range(K):
            for i in range(N):
                own[k, i] = sum(self.mu[k, i, k, n] for n in range(N) if n != i)
        return own / self.denominator


def uplink_mmse_approx(stats: LinkStatistics, fp: FixedPointSolution | None = None) -> UplinkMMSEApprox:
    """Per-stream SINR approximation of the linear MMSE detector.

    ``mu`` is returned already weighted by ``lambda p / M`` so that the SINR
    denominator is ``sum_{(l,n) != (k,i)} mu[k,i,l,n] + vartheta[k,i] / M``.
    """
    inp = uplink_resolvent_inputs(stats)
    fp = fp or solve_fixed_point(inp)
    K, N, M = stats.K, stats.N, stats.M
    Phi, Z = _stat_matrices(stats)
    q = stats.lam * stats.p
    delta = inp.ntrace(Phi, fp.T[None, None])
    flat = Phi.reshape((K * N,) + Phi.shape[2:])
    d1 = solve_derivative(inp, flat, fp).Tprime
    d2 = solve_derivative(inp, Z + stats.sigma2 * inp.identity(), fp).Tprime
    # tr(Phi_ln T'_ki) / M for every pair, which is already the weight of lambda p / M
    if inp.dense:
        tr = np.real(np.einsum("aij,bji->ab", d1, flat)) / M
    else:
        tr = (d1 @ flat.T) / flat.shape[1]
    qf = q.reshape(-1)
    mu = tr / (1.0 + qf * delta.reshape(-1))[None, :] ** 2 * qf[None, :] / M
    np.fill_diagonal(mu, 0.0)
    vartheta = inp.ntrace(flat, d2[None]).reshape(K, N)
    den = mu.sum(axis=1).reshape(K, N) + vartheta / M
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(q > 0, q * delta**2 / den, 0.0)
    return UplinkMMSEApprox(sinr, delta, mu.reshape(K, N, K, N), vartheta, den)


def downlink_gamma(stats: LinkStatistics, alpha_ki: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``(1/M) tr(R_k sum_{l != k} sum_i omega_li / theta_l Phi_li)`` for every k."""
    K = stats.K
    wts = stats.omega / theta[:, None]
    gamma = np.zeros(K)
    if stats.dense:
        Phi, _ = _stat_matrices(stats)
        agg = np.einsum("ln,lnij->lij", wts, Phi)
        total = agg.sum(axis=0)
        for k in range(K):
            gamma[k] = np.real(np.trace(stats.rr(k) @ (total - agg[k]))) / stats.M
    else:
        agg = np.einsum("ln,lnm->lm", wts, stats.phi_eig)
        total = agg.sum(axis=0)
        for k in range(K):
            gamma[k] = float((stats.r_eig[k] * (total - agg[k])).mean())
    return gamma


def downlink_approx(stats: LinkStatistics) -> np.ndarray:
    """Per-user large-system downlink SE with MF precoding (SIC and linear MMSE alike)."""
    M = stats.M
    a = stats.phi_trace()
    theta = a.sum(axis=1)
    if np.any(theta <= 0):
        raise DegenerateUserError("a user has zero estimated channel power")
    gamma = downlink_gamma(stats, a, theta)
    num = stats.lam * stats.omega * a**2 / theta[:, None]
    den = gamma[:, None] * stats.lam / M + stats.sigma2 / M
    return np.log2(1.0 + num / den).sum(axis=1)


# -- power scaling ------------------------------------------------------------------

def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")


def uplink_scaling_limit(alpha: float, L0, P0, betas, lam, sigma2: float = 1.0, B: int | None = None) -> np.ndarray:
    """Per-user uplink SE limit as ``M -> inf`` with ``L = L0/M^alpha`` and ``P = P0/M^(1-alpha)``."""
    _check_alpha(alpha)
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    K, N = lam.shape
    L0 = np.broadcast_to(np.asarray(L0, dtype=float), (K, N))
    P0 = np.broadcast_to(np.asarray(P0, dtype=float), (K, N))
    beta = np.asarray(betas, dtype=float).reshape(K, 1)
    B = K * N if B is None else B
    z = float((beta * lam * P0).sum()) if alpha == 1.0 else 0.0
    snr = beta**2 * lam**2 * B * L0 * P0 / (sigma2 * (z + sigma2))
    return np.log2(1.0 + snr).sum(axis=1)


def pilot_shares(lam, L0) -> np.ndarray:
    """Each stream's share ``lambda l0 / tr(Lambda L0)`` of its user's effective pilot power."""
    w = np.atleast_2d(np.asarray(lam, dtype=float)) * np.asarray(L0, dtype=float)
    tot = w.sum(axis=1, keepdims=True)
    if np.any(tot <= 0):
        raise DegenerateUserError("a user has zero pilot power")
    return w / tot


def downlink_scaling_limit(alpha: float, L0, Omega0, betas, lam, sigma2: float = 1.0, B: int | None = None,
                           include_own: bool = False) -> np.ndarray:
    """Per-user downlink SE limit under ``L = L0/M^alpha`` and ``Omega = Omega0/M^(1-alpha)``.

    At ``alpha = 1`` the interference level sums the weighted powers of the
    other users; ``include_own`` adds user k's own term as well.
    """
    _check_alpha(alpha)
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    K, N = lam.shape
    L0 = np.broadcast_to(np.asarray(L0, dtype=float), (K, N))
    W0 = np.broadcast_to(np.asarray(Omega0, dtype=float), (K, N))
    beta = np.asarray(betas, dtype=float).reshape(K, 1)
    B = K * N if B is None else B
    ups = pilot_shares(lam, L0)
    if alpha == 1.0:
        per_user = (W0 * ups).sum(axis=1)
        gamma = per_user.sum() - (0.0 if include_own else per_user)
        gamma = np.broadcast_to(gamma, (K,)).reshape(K, 1)
    else:
        gamma = np.zeros((K, 1))
    snr = B * beta**2 * lam**2 * W0 * L0 * ups / (sigma2 * (beta * lam * gamma + sigma2))
    return np.log2(1.0 + snr).sum(axis=1)


def scaled_isotropic_statistics(M: int, alpha: float, L0, P0, Omega0, betas, lam,
                                sigma2: float = 1.0, B: int | None = None) -> LinkStatistics:
    """Statistics for ``R_r = beta I`` with powers scaled for ``M`` antennas."""
    _check_alpha(alpha)
    return isotropic_link_statistics(M, betas, lam, np.asarray(L0, dtype=float) / M**alpha,
                                     np.asarray(P0, dtype=float) / M ** (1 - alpha),
                                     np.asarray(Omega0, dtype=float) / M ** (1 - alpha), sigma2, B)


def scaling_sequence(M_grid, alpha: float, L0, P0, Omega0, betas, lam, sigma2: float = 1.0,
                     B: int | None = None):
    """Sum uplink and downlink approximations at each M; returns two arrays."""
    ul, dl = [], []
    for M in M_grid:
        st = scaled_isotropic_statistics(int(M), alpha, L0, P0, Omega0, betas, lam, sigma2, B)
        ul.append(float(uplink_sic_approx(st).sum()))
        dl.append(float(downlink_approx(st).sum()))
    return np.array(ul), np.array(dl)
