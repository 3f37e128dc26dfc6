"""Achievable spectral efficiency by Monte Carlo simulation.

Uplink: per-user MMSE-SIC bound and per-stream linear MMSE detection with
imperfect CSI. Downlink: matched-filter precoding with users that only know
long-term statistics of their effective channel.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import kernels
from .channel import complex_normal
from .estimation import _phi_eigs, link_statistics
from .scenario import Scenario, SystemConfig

BLOCK_TRIALS = 50
UPLINK_STREAM = 1
DOWNLINK_STREAM = 2


class NumericalInconsistencyError(ArithmeticError):
    """A matrix that must be positive definite is not (points to an upstream bug)."""


class DegeneratePrecoderError(ValueError):
    pass


def _logdet_pd(A: np.ndarray) -> float:
    """Natural-log determinant of a Hermitian positive definite matrix."""
    A = 0.5 * (A + A.conj().T)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalInconsistencyError("matrix is not positive definite") from exc
    return 2.0 * float(np.log(np.real(np.diag(L))).sum())


def _as_blocks(Hhat, N=None):
    if isinstance(Hhat, (tuple, list)):
        return np.concatenate(Hhat, axis=1), Hhat[0].shape[1]
    return np.asarray(Hhat), N


def _qflat(Q):
    Q = np.asarray(Q, dtype=float)
    return Q.reshape(-1), Q.shape[-1]


# -- uplink, one realization ----------------------------------------------------

def _interference_cov(Hs, q, Z, sigma2, exclude=None):
    M = Hs.shape[0]
    keep = np.ones(Hs.shape[1], dtype=bool)
    if exclude is not None:
        keep[exclude] = False
    X = Hs[:, keep] * np.sqrt(q[keep])
    return X @ X.conj().T + Z + sigma2 * np.eye(M)


def uplink_sic_rate(Hhat, Z, Q, sigma2: float) -> np.ndarray:
    """``log2 |I + Q_k Hhat_k^H Sigma_k Hhat_k|`` for every user of one realization.

    ``Hhat`` is a sequence of K (M x N) estimates, ``Q`` is K x N with
    ``Q[k, i] = lambda_{k,i} p_{k,i}``.
    """
    q, N = _qflat(Q)
    Hs, _ = _as_blocks(Hhat)
    K = Hs.shape[1] // N
    rates = np.empty(K)
    for k in range(K):
        sl = slice(k * N, (k + 1) * N)
        C = _interference_cov(Hs, q, Z, sigma2, exclude=sl)
        try:
            fac = cho_factor(0.5 * (C + C.conj().T))
        except LinAlgError as exc:
            raise NumericalInconsistencyError("interference-plus-noise covariance is not positive definite") from exc
        Hk = Hs[:, sl] * np.sqrt(q[sl])
        A = np.eye(N) + Hk.conj().T @ cho_solve(fac, Hk)
        rates[k] = _logdet_pd(A) / math.log(2.0)
    return rates


def uplink_mmse_detector(Hhat, Z, Q, sigma2: float, k: int, i: int) -> np.ndarray:
    """``f = sqrt(lambda p) Sigma hhat_{k,i}`` with Sigma the full received-signal resolvent."""
    q, N = _qflat(Q)
    Hs, _ = _as_blocks(Hhat)
    b = k * N + i
    if q[b] == 0.0:
        return np.zeros(Hs.shape[0], dtype=complex)
    C = _interference_cov(Hs, q, Z, sigma2)
    try:
        fac = cho_factor(0.5 * (C + C.conj().T))
    except LinAlgError as exc:
        raise NumericalInconsistencyError("received-signal covariance is not positive definite") from exc
    return np.sqrt(q[b]) * cho_solve(fac, Hs[:, b])


def uplink_mmse_sinr(f, Hhat, Z, Q, sigma2: float, k: int, i: int) -> float:
    """SINR of stream (k, i) after combining with ``f``; own-user streams count as interference."""
    q, N = _qflat(Q)
    Hs, _ = _as_blocks(Hhat)
    b = k * N + i
    f = np.asarray(f)
    if not np.any(f):
        return 0.0
    h = Hs[:, b]
    C = _interference_cov(Hs, q, Z, sigma2)
    sig = q[b] * abs(np.vdot(f, h)) ** 2
    den = float(np.real(np.vdot(f, C @ f))) - sig
    return float(sig / den)


def uplink_mmse_rates(Hhat, Z, Q, sigma2: float) -> np.ndarray:
    """Per-stream ``log2(1 + SINR)`` (K x N) of one realization."""
    q, N = _qflat(Q)
    Hs, _ = _as_blocks(Hhat)
    K = Hs.shape[1] // N
    out = np.zeros((K, N))
    for k in range(K):
        for i in range(N):
            f = uplink_mmse_detector(Hs, Z, Q, sigma2, k, i)
            out[k, i] = math.log2(1.0 + uplink_mmse_sinr(f, Hs, Z, Q, sigma2, k, i))
    return out


# -- downlink ---------------------------------------------------------------------

def mf_precoder(Hhat_k: np.ndarray, Phi_k: np.ndarray) -> np.ndarray:
    """Matched filter ``Hhat_k / sqrt(E tr(Hhat_k Hhat_k^H))``; the normaliser is ``sum_i tr(Phi_{k,i})``."""
    power = float(sum(np.real(np.trace(P)) for P in Phi_k))
    if not power > 0:
        raise DegeneratePrecoderError("user has zero estimated channel power")
    return Hhat_k / math.sqrt(power)


@dataclass(frozen=True, eq=False)
class DownlinkContext:
    """Long-term statistics a user relies on in the downlink.

    ``Hbar[k]`` is the average effective channel, ``C[k]`` the covariance of
    inter-user interference and ``own[k]`` the second moment of the user's
    own effective channel. Standard errors of rates come from a jackknife
    over trial blocks, so the per-block sums are kept.
    """

    Hbar: np.ndarray
    C: np.ndarray
    own: np.ndarray
    sigma2: float
    trials: int
    Hbar_analytic: np.ndarray | None = None
    precoder_power: np.ndarray | None = None
    Hbar_se: np.ndarray | None = None
    blocks: tuple = field(default=(), repr=False)

    @property
    def K(self) -> int:
        return self.Hbar.shape[0]

    @property
    def N(self) -> int:
        return self.Hbar.shape[1]

    def noise_plus_interference(self, k: int) -> np.ndarray:
        A = self.C[k] + self.sigma2 * np.eye(self.N)
        return 0.5 * (A + A.conj().T)

    def xi_bar(self, k: int) -> np.ndarray:
        return np.linalg.inv(self.noise_plus_interference(k))

    def xi(self, k: int) -> np.ndarray:
        Hb = self.Hbar[k]
        return np.linalg.inv(self.noise_plus_interference(k) + Hb @ Hb.conj().T)

    def received_cov(self, k: int, exact_own_signal: bool = False) -> np.ndarray:
        """Covariance of the processed received signal ``z_k``.

        By default the own signal enters through its mean channel, i.e.
        ``Hbar Hbar^H + C + sigma2 I``, the model under which the SIC bound is
        derived. ``exact_own_signal`` uses the simulated second moment instead.
        """
        Hb = self.Hbar[k]
        own = self.own[k] if exact_own_signal else Hb @ Hb.conj().T
        A = own + self.noise_plus_interference(k)
        return 0.5 * (A + A.conj().T)


def downlink_sic_rate(ctx: DownlinkContext, k: int) -> float:
    """``log2 |I + Hbar^H Xi_bar Hbar|`` (no outer expectation)."""
    Hb = ctx.Hbar[k]
    fac = cho_factor(ctx.noise_plus_interference(k))
    A = np.eye(ctx.N) + Hb.conj().T @ cho_solve(fac, Hb)
    return max(_logdet_pd(A) / math.log(2.0), 0.0)


def downlink_mmse_sinr(ctx: DownlinkContext, k: int, exact_own_signal: bool = False) -> np.ndarray:
    """Per-stream SINR with detector ``r_i = Xi hbar_i``."""
    Hb = ctx.Hbar[k]
    Ezz = ctx.received_cov(k, exact_own_signal)
    R = np.linalg.solve(ctx.noise_plus_interference(k) + Hb @ Hb.conj().T, Hb)
    out = np.empty(ctx.N)
    for i in range(ctx.N):
        r, h = R[:, i], Hb[:, i]
        sig = abs(np.vdot(r, h)) ** 2
        den = float(np.real(np.vdot(r, Ezz @ r))) - sig
        out[i] = sig / den if sig > 0 else 0.0
    return out


def downlink_mmse_rate(ctx: DownlinkContext, k: int, exact_own_signal: bool = False) -> float:
    return float(np.log2(1.0 + downlink_mmse_sinr(ctx, k, exact_own_signal)).sum())


# -- sampling -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DropTensors:
    """Everything the per-trial sampler needs, precomputed once per drop.

    Channels are drawn in each user's receive eigenbasis, where MMSE
    estimation is an elementwise gain, then rotated back.
    """

    basis: np.ndarray
    sqrt_r: np.ndarray
    gain: np.ndarray
    sqrt_d: np.ndarray
    noise_std: float
    N: int

    @property
    def K(self) -> int:
        return self.basis.shape[0]

    @property
    def M(self) -> int:
        return self.basis.shape[1]


def drop_tensors(scenario: Scenario, stats=None) -> DropTensors:
    cfg = scenario.config
    stats = stats or link_statistics(scenario)
    d = stats.lam * stats.l
    s = cfg.noise_power / cfg.B
    r = stats.r_eig
    # sqrt(d) e / (d e + s), zero where the denominator vanishes
    gain = _phi_eigs(r, d, s) / np.where(r[:, None, :] > 0, r[:, None, :], 1.0) / np.where(d > 0, np.sqrt(d), 1.0)[:, :, None]
    return DropTensors(stats.basis, np.sqrt(r), np.ascontiguousarray(np.swapaxes(gain, 1, 2)),
                       np.sqrt(d), math.sqrt(s), cfg.N)


def sample_block(dt: DropTensors, rng: np.random.Generator, T: int):
    """Draw ``T`` independent blocks; returns true and estimated channels, each ``(T, M, NK)``."""
    K, M, N = dt.K, dt.M, dt.N
    g = complex_normal(rng, (K, M, N, T))
    w = complex_normal(rng, (K, M, N, T))
    h = dt.sqrt_r[:, :, None, None] * g
    hhat = dt.gain[..., None] * (dt.sqrt_d[:, None, :, None] * h + dt.noise_std * w)
    H = dt.basis @ h.reshape(K, M, N * T)
    Hh = dt.basis @ hhat.reshape(K, M, N * T)

    def _arrange(X):
        return np.ascontiguousarray(X.reshape(K, M, N, T).transpose(3, 1, 0, 2).reshape(T, M, K * N))

    return _arrange(H), _arrange(Hh)


def block_rng(seed: int, stream: int, block: int, drop: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream, drop, block)))


def _block_sizes(trials: int):
    n_full, rem = divmod(trials, BLOCK_TRIALS)
    return [BLOCK_TRIALS] * n_full + ([rem] if rem else [])


def _run_blocks(fn, sizes, workers):
    if workers is None or workers <= 1 or len(sizes) <= 1:
        return [fn(b, T) for b, T in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(len(sizes)), sizes))


def uplink_trials(scenario: Scenario, trials: int, seed: int | None = None, workers: int = 1,
                  stats=None, backend=None, drop: int = 0):
    """Per-trial uplink rates: SIC ``(trials, K)`` and linear MMSE ``(trials, K, N)``."""
    cfg = scenario.config
    stats = stats or link_statistics(scenario)
    dt = drop_tensors(scenario, stats)
    seed = scenario.rng_seed if seed is None else seed
    qsqrt = np.sqrt((stats.lam * stats.p).reshape(-1))
    base = stats.Z() + cfg.noise_power * np.eye(cfg.M)

    def one(b, T):
        _, Hh = sample_block(dt, block_rng(seed, UPLINK_STREAM, b, drop), T)
        return kernels.uplink_rates(Hh, qsqrt, base, cfg.N, backend=backend)

    parts = _run_blocks(one, _block_sizes(trials), workers)
    sic = np.concatenate([p[0] for p in parts])
    mmse = np.concatenate([p[1] for p in parts]).reshape(trials, cfg.K, cfg.N)
    return sic, mmse


def _context_from_sums(mean, total, own, trials, sigma2, **extra):
    Hbar = mean / trials
    own_m = own / trials
    C = (total - own) / trials
    C = 0.5 * (C + np.conj(np.swapaxes(C, -1, -2)))
    return DownlinkContext(Hbar, C, own_m, sigma2, trials, **extra)


def downlink_statistics(scenario: Scenario, trials: int, seed: int | None = None, workers: int = 1,
                        stats=None, backend=None, drop: int = 0) -> DownlinkContext:
    """Estimate the average effective channels and interference covariances by simulation.

    The MF precoder's normaliser is analytic, so ``Hbar`` also has the closed
    form ``diag(sqrt(lam omega) tr(Phi_i)) / sqrt(sum_i tr(Phi_i))``, stored
    as ``Hbar_analytic`` for cross-checking.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = scenario.config
    K, N, M = cfg.K, cfg.N, cfg.M
    stats = stats or link_statistics(scenario)
    dt = drop_tensors(scenario, stats)
    seed = scenario.rng_seed if seed is None else seed
    tr_phi = stats.phi_trace() * M
    norm = tr_phi.sum(axis=1)
    if np.any(norm <= 0):
        raise DegeneratePrecoderError("a user has zero estimated channel power")
    lam_sqrt = np.sqrt(stats.lam).reshape(-1)
    w_scale = (np.sqrt(stats.omega) / np.sqrt(norm)[:, None]).reshape(-1)

    def one(b, T):
        H, Hh = sample_block(dt, block_rng(seed, DOWNLINK_STREAM, b, drop), T)
        mean, total, own = kernels.downlink_moments(H, Hh, lam_sqrt, w_scale, N, backend=backend)
        pw = (np.abs(Hh.reshape(T, M, K, N)) ** 2).sum(axis=(0, 1, 3)) / norm
        return T, mean, total, own, pw

    parts = _run_blocks(one, _block_sizes(trials), workers)
    sums = [sum(p[i] for p in parts) for i in range(1, 5)]
    analytic = np.zeros((K, N, N), dtype=complex)
    for k in range(K):
        analytic[k] = np.diag(np.sqrt(stats.lam[k] * stats.omega[k]) * tr_phi[k] / math.sqrt(norm[k]))
    blocks = tuple((p[0], p[1], p[2], p[3]) for p in parts)
    return _context_from_sums(sums[0], sums[1], sums[2], trials, cfg.noise_power,
                              Hbar_analytic=analytic, precoder_power=sums[3] / trials,
                              blocks=blocks)


def _jackknife(ctx: DownlinkContext, fn):
    """Delete-one-block jackknife standard error of ``fn(context)``."""
    nb = len(ctx.blocks)
    if nb < 2:
        return np.full(np.shape(fn(ctx)), np.nan)
    tot = [sum(b[i] for b in ctx.blocks) for i in range(4)]
    vals = []
    for b in ctx.blocks:
        sub = _context_from_sums(tot[1] - b[1], tot[2] - b[2], tot[3] - b[3], tot[0] - b[0], ctx.sigma2)
        vals.append(fn(sub))
    vals = np.array(vals)
    return np.sqrt((nb - 1) / nb * ((vals - vals.mean(axis=0)) ** 2).sum(axis=0))


# -- report -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinkResult:
    link: str
    detector: str
    user_rate: np.ndarray
    user_se: np.ndarray
    sum_rate: float
    sum_se: float
    stream_rate: np.ndarray | None = None
    stream_se: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SEReport:
    config: SystemConfig
    trials: int
    results: dict

    def __getitem__(self, key) -> LinkResult:
        return self.results[key]

    def net_sum(self, link: str, detector: str) -> float:
        return net_sum_se(self.results[(link, detector)].user_rate, self.config.B, self.config.S)

    def rows(self):
        """``(link, detector, user, stream, rate, stderr)`` tuples, summary rows last."""
        out = []
        for (link, det), r in self.results.items():
            for k in range(len(r.user_rate)):
                if r.stream_rate is not None:
                    for i in range(r.stream_rate.shape[1]):
                        out.append((link, det, k, i, float(r.stream_rate[k, i]), float(r.stream_se[k, i])))
                else:
                    out.append((link, det, k, "", float(r.user_rate[k]), float(r.user_se[k])))
        for (link, det), r in self.results.items():
            prelog = 1.0 - self.config.B / self.config.S
            out.append((link, det, "sum", "", float(r.sum_rate), float(r.sum_se)))
            out.append((link, det, "net", "", prelog * float(r.sum_rate), prelog * float(r.sum_se)))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["link", "detector", "user", "stream", "rate", "stderr"])
            for row in self.rows():
                w.writerow([*row[:4], repr(row[4]), repr(row[5])])


def net_sum_se(rates, B: int, S: int) -> float:
    """Sum rate times the fraction ``1 - B/S`` of the block left after pilots."""
    if B > S:
        raise ValueError("pilot length exceeds the coherence block")
    return (1.0 - B / S) * float(np.sum(rates))


def _mean_se(x, axis=0):
    n = x.shape[axis]
    mean = x.mean(axis=axis)
    se = x.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.full(mean.shape, np.nan)
    return mean, se


def monte_carlo_se(scenario: Scenario, trials: int = 2000, workers: int = 1, seed: int | None = None,
                   dl_trials: int | None = None, backend=None, drop: int = 0,
                   links: tuple = ("ul", "dl")) -> SEReport:
    """Ergodic uplink and downlink rates of one drop, with standard errors.

    ``dl_trials`` sets the budget of the downlink statistics pass, which is
    separate from the uplink trials and defaults to the same number.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    unknown = set(links) - {"ul", "dl"}
    if unknown:
        raise ValueError(f"unknown links {sorted(unknown)}")
    stats = link_statistics(scenario)
    seed = scenario.rng_seed if seed is None else seed
    res = {}
    if "ul" in links:
        sic, mmse = uplink_trials(scenario, trials, seed, workers, stats, backend, drop)
        u, use = _mean_se(sic)
        s, sse = _mean_se(sic.sum(axis=1))
        res[("ul", "sic")] = LinkResult("ul", "sic", u, use, float(s), float(sse))
        st, stse = _mean_se(mmse)
        u, use = _mean_se(mmse.sum(axis=2))
        s, sse = _mean_se(mmse.sum(axis=(1, 2)))
        res[("ul", "mmse")] = LinkResult("ul", "mmse", u, use, float(s), float(sse), st, stse)
    if "dl" in links:
        ctx = downlink_statistics(scenario, dl_trials or trials, seed, workers, stats, backend, drop)
        res.update(downlink_results(ctx))
    return SEReport(scenario.config, trials, res)


def downlink_results(ctx: DownlinkContext) -> dict:
    """SIC and linear-MMSE downlink results with jackknife standard errors."""

    def sic_rates(c):
        return np.array([downlink_sic_rate(c, k) for k in range(c.K)])

    def mmse_streams(c):
        return np.log2(1.0 + np.array([downlink_mmse_sinr(c, k) for k in range(c.K)]))

    r = sic_rates(ctx)
    st = mmse_streams(ctx)
    return {
        ("dl", "sic"): LinkResult("dl", "sic", r, _jackknife(ctx, sic_rates), float(r.sum()),
                                  float(_jackknife(ctx, lambda c: sic_rates(c).sum()))),
        ("dl", "mmse"): LinkResult("dl", "mmse", st.sum(axis=1),
                                   _jackknife(ctx, lambda c: mmse_streams(c).sum(axis=1)),
                                   float(st.sum()), float(_jackknife(ctx, lambda c: mmse_streams(c).sum())),
                                   st, _jackknife(ctx, mmse_streams)),
    }
