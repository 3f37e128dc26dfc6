"""Cell geometry, pathloss, correlation and power control for one user drop."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .channel import eigendecompose_tx, exp_correlation, hermitian_eig


class InvalidGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    """Array sizes and noise power. ``B = N*K`` pilot symbols per block."""

    M: int
    K: int
    N: int
    S: int = 200
    noise_power: float = 1.0

    def __post_init__(self):
        for name in ("M", "K", "N", "S"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.noise_power > 0:
            raise ValueError("noise_power must be positive")
        if self.B > self.S:
            raise ValueError(f"pilot length B = N*K = {self.B} exceeds coherence block S = {self.S}")

    @property
    def B(self) -> int:
        return self.N * self.K


@dataclass(frozen=True, eq=False)
class UserStatistics:
    beta: float
    R_r: np.ndarray
    R_t: np.ndarray
    U: np.ndarray
    Lambda: np.ndarray
    L: np.ndarray
    P: np.ndarray
    Omega: np.ndarray

    @cached_property
    def rr_eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and eigenvectors of the receive correlation."""
        return hermitian_eig(self.R_r)

    @cached_property
    def R_r_sqrt(self) -> np.ndarray:
        w, V = self.rr_eig
        return (V * np.sqrt(w)) @ V.conj().T


@dataclass(frozen=True)
class ScenarioParams:
    """Physical parameters of the simulated cell (defaults follow the reference setup)."""

    cell_radius_m: float = 500.0
    min_distance_m: float = 70.0
    pathloss_exponent: float = 3.7
    # None: reference gain chosen so the cell-edge pathloss is exactly 1
    pathloss_reference: float | None = None
    edge_snr_db: float = -3.0
    rho_over_sigma2_db: float = 0.0
    a_r: float = 0.4
    a_t: float = 0.4
    pilot_budget: float | None = None
    payload_budget: float | None = None

    @property
    def reference_gain(self) -> float:
        if self.pathloss_reference is not None:
            return float(self.pathloss_reference)
        return float(self.cell_radius_m) ** self.pathloss_exponent


@dataclass(frozen=True, eq=False)
class Scenario:
    config: SystemConfig
    users: tuple[UserStatistics, ...]
    rng_seed: int
    params: ScenarioParams = field(default_factory=ScenarioParams)

    def __post_init__(self):
        cfg = self.config
        if len(self.users) != cfg.K:
            raise ValueError("need exactly K users")
        for u in self.users:
            if u.R_r.shape != (cfg.M, cfg.M) or u.R_t.shape != (cfg.N, cfg.N):
                raise ValueError("user matrices do not match the configured dimensions")
            for vec in (u.Lambda, u.L, u.P, u.Omega):
                if vec.shape != (cfg.N,):
                    raise ValueError("per-stream vectors must have length N")

    def stacked(self, name: str) -> np.ndarray:
        """A per-stream attribute (``Lambda``, ``L``, ``P`` or ``Omega``) as a K x N array."""
        return np.array([getattr(u, name) for u in self.users], dtype=float)

    @property
    def betas(self) -> np.ndarray:
        return np.array([u.beta for u in self.users])


def drop_users(config: SystemConfig, cell_radius_m: float, min_distance_m: float,
               rng: np.random.Generator) -> np.ndarray:
    """K distances drawn uniformly in area over the annulus ``[min_distance, radius]``."""
    if not 0 < min_distance_m < cell_radius_m:
        raise InvalidGeometryError(
            f"need 0 < min_distance ({min_distance_m}) < cell radius ({cell_radius_m})")
    u = rng.uniform(size=config.K)
    return np.sqrt(u * (cell_radius_m**2 - min_distance_m**2) + min_distance_m**2)


def pathloss(distance_m, exponent: float = 3.7, reference: float = 1.0):
    """Power-law large-scale fading ``reference * d**-exponent``."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    beta = reference * d ** (-exponent)
    return float(beta) if beta.ndim == 0 else beta


def channel_inversion_powers(beta: float, N: int, target_rho_over_sigma2: float):
    """Statistical channel inversion: ``l = p = (rho/sigma^2) / (N beta)`` on every stream."""
    if not beta > 0:
        raise ValueError("pathloss must be positive for channel inversion")
    if N < 1:
        raise ValueError("N must be >= 1")
    level = target_rho_over_sigma2 / (N * beta)
    return np.full(N, level), np.full(N, level)


def downlink_power_from_edge_snr(edge_snr: float, cell_radius_m: float, exponent: float = 3.7,
                                 reference: float = 1.0, sigma2: float = 1.0) -> float:
    """Per-stream downlink power giving ``edge_snr`` at the cell edge."""
    if not edge_snr > 0:
        raise ValueError("edge SNR must be positive")
    if not sigma2 > 0:
        raise ValueError("noise power must be positive")
    return edge_snr * sigma2 / pathloss(cell_radius_m, exponent, reference)


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def drop_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent generators for distances, receive phases and transmit phases.

    Keeping them separate means user k gets the same position and phases
    whatever K, M or N is, so sweeps share geometry.
    """
    ss = np.random.SeedSequence(int(seed))
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))


def build_scenario(config: SystemConfig, params: ScenarioParams | None = None,
                   seed: int = 0) -> Scenario:
    params = params or ScenarioParams()
    g_pos, g_r, g_t = drop_streams(seed)
    dist = drop_users(config, params.cell_radius_m, params.min_distance_m, g_pos)
    theta_r = g_r.uniform(0.0, 2 * np.pi, size=config.K)
    theta_t = g_t.uniform(0.0, 2 * np.pi, size=config.K)
    ref = params.reference_gain
    betas = np.atleast_1d(pathloss(dist, params.pathloss_exponent, ref))
    rho = float(db2lin(params.rho_over_sigma2_db))
    p_d = downlink_power_from_edge_snr(float(db2lin(params.edge_snr_db)), params.cell_radius_m,
                                       params.pathloss_exponent, ref, config.noise_power)
    users = []
    for k in range(config.K):
        beta = float(betas[k])
        R_r = beta * exp_correlation(config.M, params.a_r, theta_r[k])
        R_t = exp_correlation(config.N, params.a_t, theta_t[k])
        U, lam = eigendecompose_tx(R_t)
        L, P = channel_inversion_powers(beta, config.N, rho)
        if params.pilot_budget is not None and L.sum() > params.pilot_budget * (1 + 1e-12):
            raise ValueError(f"user {k}: pilot power {L.sum()} exceeds budget {params.pilot_budget}")
        if params.payload_budget is not None and P.sum() > params.payload_budget * (1 + 1e-12):
            raise ValueError(f"user {k}: payload power {P.sum()} exceeds budget {params.payload_budget}")
        users.append(UserStatistics(beta=beta, R_r=R_r, R_t=R_t, U=U, Lambda=lam, L=L, P=P,
                                    Omega=np.full(config.N, p_d)))
    return Scenario(config, tuple(users), int(seed), params)


def scale_powers(scenario: Scenario, alpha: float) -> Scenario:
    """Pilot power scaled by ``M**-alpha``, payload powers by ``M**-(1-alpha)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    M = scenario.config.M
    users = tuple(replace(u, L=u.L / M**alpha, P=u.P / M ** (1 - alpha),
                          Omega=u.Omega / M ** (1 - alpha)) for u in scenario.users)
    return Scenario(scenario.config, users, scenario.rng_seed, scenario.params)


_CONFIG_KEYS = {
    "M": ("config", int), "K": ("config", int), "N": ("config", int), "S": ("config", int),
    "sigma2": ("config", float),
    "cell_radius": ("params", float), "min_distance": ("params", float),
    "pathloss_exponent": ("params", float), "pathloss_reference": ("params", float),
    "edge_snr_db": ("params", float), "rho_over_sigma2_db": ("params", float),
    "a_r": ("params", float), "a_t": ("params", float),
    "seed": ("seed", int),
}
_PARAM_NAMES = {"cell_radius": "cell_radius_m", "min_distance": "min_distance_m"}


def read_config_file(path) -> dict:
    """Parse a scenario file: JSON, or plain ``key = value`` lines with ``#`` comments."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return dict(json.loads(text))
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def config_from_mapping(mapping: dict, base: SystemConfig | None = None,
                        base_params: ScenarioParams | None = None, seed: int = 0):
    """Overlay a parsed config mapping on defaults; returns ``(config, params, seed)``."""
    cfg = {f.name: getattr(base, f.name) for f in fields(SystemConfig)} if base else {}
    par = {}
    for key, value in mapping.items():
        if key == "sigma2_dBm":
            cfg["noise_power"] = float(db2lin(float(value)))
            continue
        if key not in _CONFIG_KEYS:
            raise KeyError(f"unknown config key {key!r}")
        target, conv = _CONFIG_KEYS[key]
        if target == "config":
            cfg["noise_power" if key == "sigma2" else key] = conv(value)
        elif target == "params":
            par[_PARAM_NAMES.get(key, key)] = conv(value)
        else:
            seed = conv(value)
    params = replace(base_params or ScenarioParams(), **par)
    config = SystemConfig(**cfg) if {"M", "K", "N"} <= cfg.keys() else None
    return config, params, seed
