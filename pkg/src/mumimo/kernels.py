"""Per-trial Monte Carlo kernels.

Every kernel has a numpy version and a numba version with the same
signature; ``BACKEND`` (see ``_accel``) picks the default. Random draws are
always made outside the kernels so both paths see identical inputs.

Array conventions: a batch of channels is ``(T, M, B)`` with stream
``b = k*N + i`` for stream i of user k.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import BACKEND, njit

_INV_LN2 = 1.0 / math.log(2.0)


# -- uplink ------------------------------------------------------------------

def uplink_rates_numpy(Hhat, qsqrt, base, N):
    """Per-trial uplink MMSE-SIC rates ``(T, K)`` and linear-MMSE rates ``(T, B)`` in bit/s/Hz.

    With ``G = Q^{1/2} Hhat^H Sigma Hhat Q^{1/2}`` and ``Sigma`` the full
    resolvent, the SIC rate of user k is ``-log2 det(I - G_kk)`` and the
    linear-MMSE rate of stream b is ``-log2(1 - G_bb)``.
    """
    T, M, B = Hhat.shape
    K = B // N
    X = Hhat * qsqrt
    C = X @ np.conj(np.swapaxes(X, -1, -2)) + base
    G = np.conj(np.swapaxes(X, -1, -2)) @ np.linalg.solve(C, X)
    G = 0.5 * (G + np.conj(np.swapaxes(G, -1, -2)))
    idx = np.arange(K)
    Gkk = G.reshape(T, K, N, K, N)[:, idx, :, idx, :]
    A = np.eye(N) - Gkk
    Lc = np.linalg.cholesky(A)
    diag = np.real(np.diagonal(Lc, axis1=-2, axis2=-1))
    sic = (-2.0 * _INV_LN2) * np.log(diag).sum(axis=-1)
    g = np.real(np.diagonal(G, axis1=-2, axis2=-1))
    mmse = -_INV_LN2 * np.log1p(-g)
    return np.ascontiguousarray(sic.T), mmse


@njit
def _forward_substitution(L, X):
    M, B = X.shape
    Y = X.copy()
    for i in range(M):
        inv = 1.0 / L[i, i]
        for b in range(B):
            Y[i, b] *= inv
        for r in range(i + 1, M):
            c = L[r, i]
            for b in range(B):
                Y[r, b] -= c * Y[i, b]
    return Y


@njit
def uplink_rates_numba(Hhat, qsqrt, base, N):
    T, M, B = Hhat.shape
    K = B // N
    sic = np.empty((T, K))
    mmse = np.empty((T, B))
    eye = np.eye(N, dtype=np.complex128)
    for t in range(T):
        X = np.ascontiguousarray(Hhat[t]) * qsqrt
        XH = np.ascontiguousarray(X.conj().T)
        C = base + X @ XH
        L = np.linalg.cholesky(C)
        Y = _forward_substitution(L, X)
        G = np.ascontiguousarray(Y.conj().T) @ Y
        for k in range(K):
            A = eye - G[k * N:(k + 1) * N, k * N:(k + 1) * N]
            A = 0.5 * (A + A.conj().T)
            Lk = np.linalg.cholesky(np.ascontiguousarray(A))
            acc = 0.0
            for i in range(N):
                acc += math.log(Lk[i, i].real)
            sic[t, k] = -2.0 * acc * _INV_LN2
        for b in range(B):
            mmse[t, b] = -math.log1p(-G[b, b].real) * _INV_LN2
    return sic, mmse


# -- downlink ------------------------------------------------------------------

def downlink_moments_numpy(H, Hhat, lam_sqrt, w_scale, N):
    """Sums over the batch of the effective-channel moments used by the downlink bounds.

    ``E[t, (k,i), (l,j)] = sqrt(lam_ki) h_ki^H w_lj sqrt(omega_lj)`` where
    ``w_lj = hhat_lj / sqrt(M theta_l)``; ``w_scale`` carries the combined
    ``sqrt(omega) / sqrt(M theta)`` factor. Returns ``(mean, total, own)``,
    each ``(K, N, N)``: the sum of diagonal blocks ``E_kk``, the sum of
    ``E_k: E_k:^H`` and the sum of ``E_kk E_kk^H``.
    """
    T, M, B = H.shape
    K = B // N
    E = np.conj(np.swapaxes(H * lam_sqrt, -1, -2)) @ (Hhat * w_scale)
    idx = np.arange(K)
    Ekk = E.reshape(T, K, N, K, N)[:, idx, :, idx, :]
    mean = Ekk.sum(axis=1)
    own = (Ekk @ np.conj(np.swapaxes(Ekk, -1, -2))).sum(axis=1)
    rows = E.reshape(T, K, N, B)
    total = np.einsum("tkib,tkjb->kij", rows, rows.conj())
    return mean, total, own


@njit
def downlink_moments_numba(H, Hhat, lam_sqrt, w_scale, N):
    T, M, B = H.shape
    K = B // N
    mean = np.zeros((K, N, N), dtype=np.complex128)
    total = np.zeros((K, N, N), dtype=np.complex128)
    own = np.zeros((K, N, N), dtype=np.complex128)
    for t in range(T):
        Hs = np.ascontiguousarray(H[t]) * lam_sqrt
        W = np.ascontiguousarray(Hhat[t]) * w_scale
        E = np.ascontiguousarray(Hs.conj().T) @ W
        for k in range(K):
            r0 = k * N
            row = E[r0:r0 + N, :]
            blk = np.ascontiguousarray(row[:, r0:r0 + N])
            mean[k] += blk
            total[k] += np.ascontiguousarray(row) @ np.ascontiguousarray(row.conj().T)
            own[k] += blk @ np.ascontiguousarray(blk.conj().T)
    return mean, total, own


# -- deterministic-equivalent fixed point, diagonal case ------------------------

@njit
def fixed_point_diag_numba(cols, shift, rho, M, tol, max_iter, damping):
    """Successive substitution for the diagonal fixed point.

    ``cols`` is ``(B, m)``, ``shift`` is ``(m,)``; normalised traces are
    means over the m entries. Returns ``(delta, t, residuals, converged)``.
    """
    Bn, m = cols.shape
    delta = np.full(Bn, 1.0 / rho)
    t = np.empty(m)
    res = np.empty(max_iter)
    prev = np.inf
    damp = False
    n = 0
    converged = False
    for it in range(max_iter):
        for j in range(m):
            acc = shift[j] + rho
            for b in range(Bn):
                acc += cols[b, j] / (M * (1.0 + delta[b]))
            t[j] = 1.0 / acc
        r = 0.0
        for b in range(Bn):
            acc = 0.0
            for j in range(m):
                acc += cols[b, j] * t[j]
            new = acc / m
            if damp:
                new = damping * new + (1.0 - damping) * delta[b]
            diff = abs(new - delta[b])
            if diff > r:
                r = diff
            delta[b] = new
        res[it] = r
        n = it + 1
        if r < tol:
            converged = True
            break
        if r > prev:
            damp = True
        prev = r
    for j in range(m):
        acc = shift[j] + rho
        for b in range(Bn):
            acc += cols[b, j] / (M * (1.0 + delta[b]))
        t[j] = 1.0 / acc
    return delta, t, res[:n], converged


def fixed_point_diag_numpy(cols, shift, rho, M, tol, max_iter, damping):
    Bn, m = cols.shape
    delta = np.full(Bn, 1.0 / rho)
    res = []
    prev = np.inf
    damp = False
    converged = False
    for _ in range(max_iter):
        t = 1.0 / (shift + rho + (cols / (M * (1.0 + delta))[:, None]).sum(axis=0))
        new = (cols * t).mean(axis=1)
        if damp:
            new = damping * new + (1.0 - damping) * delta
        r = float(np.max(np.abs(new - delta))) if Bn else 0.0
        delta = new
        res.append(r)
        if r < tol:
            converged = True
            break
        if r > prev:
            damp = True
        prev = r
    t = 1.0 / (shift + rho + (cols / (M * (1.0 + delta))[:, None]).sum(axis=0))
    return delta, t, np.array(res), converged


_TABLE = {
    "numpy": (uplink_rates_numpy, downlink_moments_numpy, fixed_point_diag_numpy),
    "numba": (uplink_rates_numba, downlink_moments_numba, fixed_point_diag_numba),
}


def get_kernels(backend: str | None = None):
    """``(uplink_rates, downlink_moments, fixed_point_diag)`` for a backend."""
    backend = backend or BACKEND
    if backend == "numba" and BACKEND != "numba":
        raise RuntimeError("numba backend requested but numba is unavailable or disabled")
    return _TABLE[backend]


def uplink_rates(Hhat, qsqrt, base, N, backend=None):
    return get_kernels(backend)[0](Hhat, qsqrt, base, int(N))


def downlink_moments(H, Hhat, lam_sqrt, w_scale, N, backend=None):
    return get_kernels(backend)[1](H, Hhat, lam_sqrt, w_scale, int(N))


def fixed_point_diag(cols, shift, rho, M, tol=1e-10, max_iter=1000, damping=0.5, backend=None):
    return get_kernels(backend)[2](np.ascontiguousarray(cols, dtype=float),
                                   np.ascontiguousarray(shift, dtype=float),
                                   float(rho), float(M), float(tol), int(max_iter), float(damping))
