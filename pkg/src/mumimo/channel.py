"""Spatial correlation matrices and Kronecker-correlated channel draws."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._accel import njit

HERMITIAN_TOL = 1e-12
CLAMP_TOL = 1e-12


@njit
def _exp_correlation_kernel(dim, coeff):
    R = np.empty((dim, dim), dtype=np.complex128)
    for i in range(dim):
        R[i, i] = 1.0
        c = 1.0 + 0.0j
        for j in range(i + 1, dim):
            c = c * coeff
            R[i, j] = c
            R[j, i] = np.conj(c)
    return R


def exp_correlation(dim: int, a: float, theta: float = 0.0) -> np.ndarray:
    """Exponential correlation matrix with entry ``(a e^{j theta})^(j-i)`` above the diagonal.

    The lower triangle holds the conjugates, so the result is Hermitian with a
    unit diagonal. ``a`` must lie in ``[0, 1)``.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    if not 0.0 <= a < 1.0:
        raise ValueError(f"correlation magnitude must be in [0, 1), got {a}")
    return _exp_correlation_kernel(int(dim), complex(a * np.exp(1j * theta)))


def _check_hermitian(R: np.ndarray) -> None:
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(R))))
    if np.max(np.abs(R - R.conj().T)) > HERMITIAN_TOL * scale:
        raise ValueError("matrix is not Hermitian")


def hermitian_eig(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-pairs of a Hermitian PSD matrix, eigenvalues clamped at zero."""
    _check_hermitian(R)
    R = 0.5 * (R + R.conj().T)
    w, V = np.linalg.eigh(R)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() < -1e-10 * scale:
        raise ValueError("matrix is not positive semidefinite")
    w = np.where(w < CLAMP_TOL * scale, 0.0, w)
    return w, V


def matrix_sqrt(R: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root via eigendecomposition."""
    w, V = hermitian_eig(R)
    root = (V * np.sqrt(w)) @ V.conj().T
    return 0.5 * (root + root.conj().T)


def eigendecompose_tx(R_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(U, Lambda)`` with eigenvalues sorted in descending order.

    Ties keep their original order and every eigenvector is rotated so its
    largest-magnitude entry is real and positive, which makes the result
    reproducible across LAPACK builds.
    """
    w, V = hermitian_eig(R_t)
    order = np.argsort(-w, kind="stable")
    w = w[order]
    V = V[:, order]
    pivot = np.argmax(np.abs(V), axis=0)
    phase = V[pivot, np.arange(V.shape[1])]
    V = V * (np.abs(phase) / phase)[None, :]
    return V, w


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One coherence block: ``H[k]`` is user k's M x N channel in the rotated domain."""

    H: tuple[np.ndarray, ...]

    def stacked(self) -> np.ndarray:
        """All users side by side as an M x NK matrix."""
        return np.concatenate(self.H, axis=1)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples."""
    shape = (int(shape),) if np.isscalar(shape) else tuple(shape)
    z = rng.standard_normal(shape + (2,)).view(np.complex128)[..., 0]
    return z * np.sqrt(0.5)


def draw_channel(scenario, rng: np.random.Generator) -> ChannelRealization:
    """Draw ``H_k = R_r^{1/2} G_w U_k`` independently for every user."""
    cfg = scenario.config
    H = []
    for user in scenario.users:
        Gw = complex_normal(rng, (cfg.M, cfg.N))
        H.append(user.R_r_sqrt @ Gw @ user.U)
    return ChannelRealization(tuple(H))


def dump_matrix_csv(matrix: np.ndarray, path) -> None:
    """Write a complex matrix row-major, one ``re,im`` cell per entry."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([f"{float(z.real)!r},{float(z.imag)!r}" for z in row])


def load_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[complex(*map(float, cell.split(","))) for cell in row] for row in csv.reader(fh)]
    return np.array(rows, dtype=complex)
