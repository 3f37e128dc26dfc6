"""Uplink pilots and per-user MMSE channel estimation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .channel import ChannelRealization, complex_normal, draw_channel
from .scenario import Scenario, SystemConfig, UserStatistics


class DegenerateEstimationError(ValueError):
    """Raised when the MMSE system is singular (noiseless pilots with a singular prior)."""


@dataclass(frozen=True, eq=False)
class PilotDesign:
    """Orthogonal pilot basis: user k owns columns ``k*N .. (k+1)*N - 1`` of ``V``.

    ``V`` is the unnormalised B x B DFT matrix, so ``V_k^H V_k = B I`` and
    blocks of different users are orthogonal. ``D[k, i] = lambda_{k,i} l_{k,i}``
    is the effective pilot power seen on stream i.
    """

    V: np.ndarray
    D: np.ndarray

    @property
    def B(self) -> int:
        return self.V.shape[0]

    def block(self, k: int) -> np.ndarray:
        N = self.D.shape[1]
        return self.V[:, k * N:(k + 1) * N]


def build_pilots(config: SystemConfig, users) -> PilotDesign:
    B = config.B
    n = np.arange(B)
    V = np.exp(-2j * np.pi * np.outer(n, n) / B)
    D = np.array([u.Lambda * u.L for u in users], dtype=float)
    if np.any(D < 0):
        raise ValueError("effective pilot powers must be nonnegative")
    return PilotDesign(V, D)


def received_pilot_signal(realization: ChannelRealization, pilots: PilotDesign, sigma2: float,
                          rng: np.random.Generator | None):
    """Return ``(Y, b)`` where ``b[k] = Y V_k^* / B`` is user k's despread observation (M x N)."""
    H = realization.H
    M = H[0].shape[0]
    B = pilots.B
    Y = np.zeros((M, B), dtype=complex)
    for k, Hk in enumerate(H):
        Y += (Hk * np.sqrt(pilots.D[k])) @ pilots.block(k).T
    if sigma2 > 0:
        Y += np.sqrt(sigma2) * complex_normal(rng, (M, B))
    b = tuple(Y @ pilots.block(k).conj() / B for k in range(len(H)))
    return Y, b


def mmse_estimate(b_k: np.ndarray, d_k: np.ndarray, R_r: np.ndarray, sigma2: float,
                  B: int) -> np.ndarray:
    """Column-wise MMSE estimate ``sqrt(d) R (d R + sigma2/B I)^{-1} b``.

    The Kronecker-structured MN x MN system is block diagonal across streams,
    so each column is an M x M Hermitian solve.
    """
    b_k = np.asarray(b_k, dtype=complex)
    M, N = b_k.shape
    s = sigma2 / B
    out = np.zeros_like(b_k)
    for i in range(N):
        d = float(d_k[i])
        if d == 0.0:
            continue
        try:
            fac = cho_factor(d * R_r + s * np.eye(M))
        except LinAlgError as exc:
            raise DegenerateEstimationError("singular MMSE system; need sigma2 > 0 or nonsingular R_r") from exc
        out[:, i] = np.sqrt(d) * (R_r @ cho_solve(fac, b_k[:, i]))
    return out


def estimate_covariance(R_r: np.ndarray, d: float, sigma2: float, B: int) -> np.ndarray:
    """Covariance of one estimated column, ``d R (d R + sigma2/B I)^{-1} R``."""
    M = R_r.shape[0]
    if d == 0.0:
        return np.zeros((M, M), dtype=complex)
    try:
        fac = cho_factor(d * R_r + (sigma2 / B) * np.eye(M))
    except LinAlgError as exc:
        raise DegenerateEstimationError("singular MMSE system") from exc
    Phi = d * R_r @ cho_solve(fac, R_r)
    return 0.5 * (Phi + Phi.conj().T)


def error_covariances(users, sigma2: float, B: int):
    """Per-stream estimate covariances ``Phi[k, i]`` and the aggregate error matrix ``Z``."""
    K = len(users)
    N = len(users[0].Lambda)
    M = users[0].R_r.shape[0]
    Phi = np.empty((K, N, M, M), dtype=complex)
    Z = np.zeros((M, M), dtype=complex)
    for k, u in enumerate(users):
        for i in range(N):
            Phi[k, i] = estimate_covariance(u.R_r, float(u.Lambda[i] * u.L[i]), sigma2, B)
            Z += u.Lambda[i] * u.P[i] * (u.R_r - Phi[k, i])
    return Phi, 0.5 * (Z + Z.conj().T)


@dataclass(frozen=True, eq=False)
class EstimationResult:
    Hhat: tuple[np.ndarray, ...]
    Phi: np.ndarray
    Z: np.ndarray


def estimate_channels(scenario: Scenario, realization: ChannelRealization, pilots: PilotDesign,
                      rng: np.random.Generator, Phi=None, Z=None) -> EstimationResult:
    """Pilot transmission followed by per-user MMSE estimation for one block."""
    cfg = scenario.config
    sigma2 = cfg.noise_power
    _, b = received_pilot_signal(realization, pilots, sigma2, rng)
    Hhat = tuple(mmse_estimate(b[k], pilots.D[k], u.R_r, sigma2, cfg.B)
                 for k, u in enumerate(scenario.users))
    if Phi is None or Z is None:
        Phi, Z = error_covariances(scenario.users, sigma2, cfg.B)
    return EstimationResult(Hhat, Phi, Z)


@dataclass(frozen=True, eq=False)
class EstimateMoments:
    """Sample moments of the estimator over independent blocks.

    ``cov[k, i, j] ~ E{hhat_i hhat_j^H}``, ``err_cross[k, i] ~ E{hhat_i (h_i - hhat_i)^H}``,
    ``true_cov[k, i] ~ E{h_i h_i^H}`` and ``err_cov[k, i] ~ E{e_i e_i^H}``;
    the ``*_se`` arrays are entrywise complex standard errors.
    """

    trials: int
    cov: np.ndarray
    cov_se: np.ndarray
    err_cross: np.ndarray
    err_cross_se: np.ndarray
    true_cov: np.ndarray
    err_cov: np.ndarray


def empirical_estimate_covariance(scenario: Scenario, trials: int,
                                  rng: np.random.Generator) -> EstimateMoments:
    """Run the full draw / pilot / estimate pipeline ``trials`` times and collect moments."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = scenario.config
    K, N, M = cfg.K, cfg.N, cfg.M
    pilots = build_pilots(cfg, scenario.users)
    Phi, Z = error_covariances(scenario.users, cfg.noise_power, cfg.B)
    s1 = np.zeros((K, N, N, M, M), dtype=complex)
    s2 = np.zeros((K, N, N, M, M))
    x1 = np.zeros((K, N, M, M), dtype=complex)
    x2 = np.zeros((K, N, M, M))
    t1 = np.zeros((K, N, M, M), dtype=complex)
    e1 = np.zeros((K, N, M, M), dtype=complex)
    for _ in range(trials):
        real = draw_channel(scenario, rng)
        est = estimate_channels(scenario, real, pilots, rng, Phi, Z)
        for k in range(K):
            hh = est.Hhat[k]
            err = real.H[k] - hh
            outer = np.einsum("ai,bj->ijab", hh, hh.conj())
            s1[k] += outer
            s2[k] += np.abs(outer) ** 2
            cross = np.einsum("ai,bi->iab", hh, err.conj())
            x1[k] += cross
            x2[k] += np.abs(cross) ** 2
            t1[k] += np.einsum("ai,bi->iab", real.H[k], real.H[k].conj())
            e1[k] += np.einsum("ai,bi->iab", err, err.conj())
    n = float(trials)

    def _se(first, second):
        mean = first / n
        var = np.maximum(second / n - np.abs(mean) ** 2, 0.0)
        return mean, np.sqrt(var / n)

    cov, cov_se = _se(s1, s2)
    cross, cross_se = _se(x1, x2)
    return EstimateMoments(trials, cov, cov_se, cross, cross_se, t1 / n, e1 / n)


@dataclass(frozen=True, eq=False)
class LinkStatistics:
    """Second-order statistics of all links in eigen form.

    ``R_r[k] = basis[k] diag(r_eig[k]) basis[k]^H`` and
    ``Phi[k, i] = basis[k] diag(phi_eig[k, i]) basis[k]^H``. With ``basis=None``
    every matrix is diagonal; a trailing length of 1 then stands for a scaled
    identity of size M, which is what keeps M = 10**6 cheap.
    """

    M: int
    B: int
    sigma2: float
    r_eig: np.ndarray
    phi_eig: np.ndarray
    lam: np.ndarray
    l: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    basis: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.phi_eig.shape[0]

    @property
    def N(self) -> int:
        return self.phi_eig.shape[1]

    @property
    def dense(self) -> bool:
        return self.basis is not None

    def _assemble(self, k: int, eig: np.ndarray) -> np.ndarray:
        if self.basis is None:
            return eig
        V = self.basis[k]
        out = (V * eig) @ V.conj().T
        return 0.5 * (out + out.conj().T)

    def phi(self, k: int, i: int) -> np.ndarray:
        return self._assemble(k, self.phi_eig[k, i])

    def rr(self, k: int) -> np.ndarray:
        return self._assemble(k, self.r_eig[k])

    def phi_trace(self) -> np.ndarray:
        """``tr(Phi[k, i]) / M`` as a K x N array."""
        return self.phi_eig.mean(axis=-1)

    def column_covariances(self) -> np.ndarray:
        """``lambda p Phi`` for every stream in pilot order ``b = k*N + i``."""
        q = (self.lam * self.p)[..., None]
        if self.basis is None:
            return (q * self.phi_eig).reshape(self.K * self.N, -1)
        return np.stack([q[k, i, 0] * self.phi(k, i) for k in range(self.K) for i in range(self.N)])

    def Z(self) -> np.ndarray:
        q = self.lam * self.p
        if self.basis is None:
            return np.einsum("kn,knm->m", q, self.r_eig[:, None, :] - self.phi_eig)
        out = np.zeros((self.M, self.M), dtype=complex)
        for k in range(self.K):
            out += self._assemble(k, np.einsum("n,nm->m", q[k], self.r_eig[k][None, :] - self.phi_eig[k]))
        return 0.5 * (out + out.conj().T)


def _phi_eigs(r_eig: np.ndarray, d: np.ndarray, s: float) -> np.ndarray:
    num = d[:, :, None] * r_eig[:, None, :] ** 2
    den = d[:, :, None] * r_eig[:, None, :] + s
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return out


def link_statistics(scenario: Scenario) -> LinkStatistics:
    cfg = scenario.config
    eigs = [u.rr_eig for u in scenario.users]
    r_eig = np.array([w for w, _ in eigs])
    basis = np.array([V for _, V in eigs])
    lam = scenario.stacked("Lambda")
    L = scenario.stacked("L")
    phi = _phi_eigs(r_eig, lam * L, cfg.noise_power / cfg.B)
    return LinkStatistics(cfg.M, cfg.B, cfg.noise_power, r_eig, phi, lam, L,
                          scenario.stacked("P"), scenario.stacked("Omega"), basis)


def isotropic_link_statistics(M: int, betas, lam, L, P, Omega, sigma2: float = 1.0,
                              B: int | None = None) -> LinkStatistics:
    """Statistics for ``R_r,k = beta_k I_M`` kept as scalars, valid for any M."""
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    K, N = lam.shape
    B = K * N if B is None else B
    r_eig = np.asarray(betas, dtype=float).reshape(K, 1)
    L = np.broadcast_to(np.asarray(L, dtype=float), (K, N)).copy()
    phi = _phi_eigs(r_eig, lam * L, sigma2 / B)
    return LinkStatistics(int(M), int(B), float(sigma2), r_eig, phi, lam, L,
                          np.broadcast_to(np.asarray(P, dtype=float), (K, N)).copy(),
                          np.broadcast_to(np.asarray(Omega, dtype=float), (K, N)).copy(), None)
