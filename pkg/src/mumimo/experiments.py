"""Parameter sweeps behind the three reference figures, plus a custom sweep.

Every experiment is a pure function of its ``ExperimentSpec``: user drops
are seeded from the master seed, Monte Carlo blocks from the drop seed, and
rows come out in grid order. Series values are averages over drops.
"""
from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import asymptotics as asy
from .estimation import link_statistics
from .scenario import ScenarioParams, SystemConfig, build_scenario, scale_powers
from .se import monte_carlo_se

FIG1_M_GRID = (10, 50, 100, 150, 200)
FIG2_M_GRID = (10, 20, 50, 100, 200, 500, 1000, 10**4, 10**5, 10**6)
FIG3_NK_GRID = tuple(range(10, 201, 10))
FIG2_MC_MAX_M = 256


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    grid: tuple
    trials: int = 2000
    seed: int = 0
    drops: int = 10
    K: int = 10
    M: int = 200
    N_values: tuple = (1, 3)
    alphas: tuple = (0.5, 1.0)
    S: int = 200
    noise_power: float = 1.0
    params: ScenarioParams = field(default_factory=ScenarioParams)
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in ("fig1", "fig2", "fig3", "custom"):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        g = tuple(self.grid)
        if not g:
            raise ValueError("grid must be nonempty")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("grid must be strictly increasing")
        if self.trials < 1 or self.drops < 1:
            raise ValueError("trials and drops must be >= 1")
        object.__setattr__(self, "grid", g)


@dataclass
class ResultTable:
    """Rows of ``(sweep value, series, value, stderr)``; stderr is nan for deterministic series."""

    sweep: str
    rows: list = field(default_factory=list)

    def add(self, x, series: str, value: float, stderr: float = math.nan) -> None:
        self.rows.append((x, series, float(value), float(stderr)))

    def series(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        sel = [r for r in self.rows if r[1] == name]
        if not sel:
            raise KeyError(name)
        return (np.array([r[0] for r in sel]), np.array([r[2] for r in sel]),
                np.array([r[3] for r in sel]))

    def value(self, x, name: str) -> tuple[float, float]:
        for r in self.rows:
            if r[0] == x and r[1] == name:
                return r[2], r[3]
        raise KeyError((x, name))

    def names(self) -> list[str]:
        return list(dict.fromkeys(r[1] for r in self.rows))


def _fmt(x) -> str:
    return repr(x) if isinstance(x, float) else str(x)


def write_csv(table: ResultTable, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([table.sweep, "series", "value", "stderr"])
    for x, name, v, se in table.rows:
        w.writerow([_fmt(x), name, repr(v), repr(se)])


def emit_csv(table: ResultTable, path) -> None:
    """Header plus one row per table row, floats in round-trip ``repr`` form."""
    with open(path, "w", newline="") as fh:
        write_csv(table, fh)


def _parse_x(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def read_csv(path) -> ResultTable:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        table = ResultTable(header[0])
        for x, name, v, se in rd:
            table.rows.append((_parse_x(x), name, float(v), float(se)))
    return table


def drop_seed(master: int, drop: int) -> int:
    """Seed of drop ``drop``, derived from the master seed."""
    return int(np.random.SeedSequence(int(master), spawn_key=(drop,)).generate_state(1)[0])


def _log(progress, msg: str) -> None:
    if progress:
        progress(msg)


def stderr_progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


class _Accumulator:
    """Drop average per (x, series); the standard error is the Monte Carlo error of that average."""

    def __init__(self, drops: int):
        self.drops = drops
        self.sums: dict = {}

    def add(self, x, name: str, value: float, stderr: float = math.nan) -> None:
        s = self.sums.setdefault((x, name), [0.0, 0.0])
        s[0] += value
        s[1] += stderr**2

    def into(self, table: ResultTable) -> ResultTable:
        for (x, name), (v, v2) in self.sums.items():
            table.add(x, name, v / self.drops, math.sqrt(v2) / self.drops)
        return table


def _record_point(acc: _Accumulator, x, tag: str, scenario, spec: ExperimentSpec, seed: int, drop: int,
                  links=("ul", "dl")) -> None:
    """Monte Carlo and approximation series for one configuration, net and raw."""
    cfg = scenario.config
    prelog = 1.0 - cfg.B / cfg.S
    rep = monte_carlo_se(scenario, spec.trials, spec.workers, seed, links=links, drop=drop)
    for (link, det), r in rep.results.items():
        acc.add(x, f"{link}_{det}_mc{tag}", prelog * r.sum_rate, prelog * r.sum_se)
        acc.add(x, f"{link}_{det}_mc{tag}_raw", r.sum_rate, r.sum_se)
    stats = link_statistics(scenario)
    approx = {}
    if "ul" in links:
        fp = asy.solve_fixed_point(asy.uplink_resolvent_inputs(stats))
        approx["ul_sic"] = asy.uplink_sic_approx(stats, fp).sum()
        approx["ul_mmse"] = asy.uplink_mmse_approx(stats, fp).rates.sum()
    if "dl" in links:
        approx["dl_sic"] = asy.downlink_approx(stats).sum()
    for name, v in approx.items():
        acc.add(x, f"{name}_approx{tag}", prelog * v)
        acc.add(x, f"{name}_approx{tag}_raw", v)


def run_fig1(spec: ExperimentSpec, progress=None) -> ResultTable:
    """Sum SE against M for each N with K users: Monte Carlo and large-system series."""
    acc = _Accumulator(spec.drops)
    for d in range(spec.drops):
        seed = drop_seed(spec.seed, d)
        for M in spec.grid:
            for N in spec.N_values:
                _log(progress, f"fig1 drop {d + 1}/{spec.drops} M={M} N={N}")
                sc = build_scenario(SystemConfig(int(M), spec.K, N, spec.S, spec.noise_power), spec.params, seed)
                _record_point(acc, M, f"_N{N}", sc, spec, seed, d)
    return _finish(acc, "M", spec)


def run_fig2(spec: ExperimentSpec, progress=None) -> ResultTable:
    """Power-scaling curves for each alpha with their limits.

    Monte Carlo is run up to M = 256; the large-system approximations and
    limits cover the whole grid since they are cheap for any M.
    """
    params = replace(spec.params, a_r=0.0)
    N = spec.N_values[0]
    acc = _Accumulator(spec.drops)
    for d in range(spec.drops):
        seed = drop_seed(spec.seed, d)
        base = build_scenario(SystemConfig(1, spec.K, N, spec.S, spec.noise_power), params, seed)
        betas = base.betas
        lam, L0, P0, W0 = (base.stacked(n) for n in ("Lambda", "L", "P", "Omega"))
        for alpha in spec.alphas:
            tag = f"_alpha{alpha:g}"
            lim_ul = asy.uplink_scaling_limit(alpha, L0, P0, betas, lam, base.config.noise_power).sum()
            lim_dl = asy.downlink_scaling_limit(alpha, L0, W0, betas, lam, base.config.noise_power).sum()
            for M in spec.grid:
                _log(progress, f"fig2 drop {d + 1}/{spec.drops} alpha={alpha:g} M={M}")
                st = asy.scaled_isotropic_statistics(int(M), alpha, L0, P0, W0, betas, lam,
                                                     base.config.noise_power)
                acc.add(M, f"ul_sic_approx{tag}", asy.uplink_sic_approx(st).sum())
                acc.add(M, f"dl_sic_approx{tag}", asy.downlink_approx(st).sum())
                acc.add(M, f"ul_limit{tag}", lim_ul)
                acc.add(M, f"dl_limit{tag}", lim_dl)
                if M <= FIG2_MC_MAX_M:
                    sc = scale_powers(build_scenario(SystemConfig(int(M), spec.K, N, spec.S, spec.noise_power), params, seed), alpha)
                    rep = monte_carlo_se(sc, spec.trials, spec.workers, seed, drop=d)
                    for (link, det), r in rep.results.items():
                        acc.add(M, f"{link}_{det}_mc{tag}", r.sum_rate, r.sum_se)
    return _finish(acc, "M", spec)


def run_fig3(spec: ExperimentSpec, progress=None) -> ResultTable:
    """Net downlink sum SE against the number of streams NK at fixed M.

    Grid points not divisible by N are skipped for that series, with a warning.
    """
    acc = _Accumulator(spec.drops)
    skipped = [(NK, N) for NK in spec.grid for N in spec.N_values if NK % N or NK > spec.S]
    for NK, N in skipped:
        _log(progress or stderr_progress, f"warning: skipping NK={NK} for N={N}")
    for d in range(spec.drops):
        seed = drop_seed(spec.seed, d)
        for NK in spec.grid:
            for N in spec.N_values:
                if (NK, N) in skipped:
                    continue
                _log(progress, f"fig3 drop {d + 1}/{spec.drops} NK={NK} N={N}")
                sc = build_scenario(SystemConfig(spec.M, NK // N, N, spec.S, spec.noise_power), spec.params, seed)
                _record_point(acc, NK, f"_N{N}", sc, spec, seed, d, links=("dl",))
    return _finish(acc, "NK", spec)


def run_custom(spec: ExperimentSpec, progress=None) -> ResultTable:
    """Sweep M for the configured K and each N, with every series of the first figure.

    A nonempty ``alphas`` scales the powers with its first entry.
    """
    acc = _Accumulator(spec.drops)
    for d in range(spec.drops):
        seed = drop_seed(spec.seed, d)
        for M in spec.grid:
            for N in spec.N_values:
                _log(progress, f"custom drop {d + 1}/{spec.drops} M={M} N={N}")
                sc = build_scenario(SystemConfig(int(M), spec.K, N, spec.S, spec.noise_power), spec.params, seed)
                if spec.alphas:
                    sc = scale_powers(sc, spec.alphas[0])
                _record_point(acc, M, f"_N{N}", sc, spec, seed, d)
    return _finish(acc, "M", spec)


def _finish(acc: _Accumulator, sweep: str, spec: ExperimentSpec) -> ResultTable:
    table = acc.into(ResultTable(sweep))
    order = {x: i for i, x in enumerate(spec.grid)}
    names = list(dict.fromkeys(r[1] for r in table.rows))
    rank = {n: i for i, n in enumerate(names)}
    table.rows.sort(key=lambda r: (order[r[0]], rank[r[1]]))
    return table


RUNNERS = {"fig1": run_fig1, "fig2": run_fig2, "fig3": run_fig3, "custom": run_custom}


def run(spec: ExperimentSpec, progress=None) -> ResultTable:
    return RUNNERS[spec.experiment](spec, progress)
