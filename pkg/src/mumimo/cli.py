"""Command-line experiment runner.

    mumimo fig1 --trials 2000 --out fig1.csv
    mumimo fig3 --nk-grid 30:180:30 --drops 3
    mumimo custom --config cell.cfg --m-grid 32,64,128

CSV goes to ``--out`` (or stdout); progress goes to stderr.
"""
from __future__ import annotations

import argparse
import sys

from . import experiments as ex
from .scenario import ScenarioParams, SystemConfig, config_from_mapping, read_config_file


def parse_grid(text: str) -> tuple:
    """``a,b,c`` or inclusive ``start:stop:step`` ranges, mixable with commas."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            start, stop, *step = (int(float(s)) for s in part.split(":"))
            step = step[0] if step else 1
            if step <= 0:
                raise argparse.ArgumentTypeError(f"bad step in {part!r}")
            out.extend(range(start, stop + 1, step))
        else:
            out.append(int(float(part)))
    if not out:
        raise argparse.ArgumentTypeError("empty grid")
    return tuple(out)


def parse_floats(text: str) -> tuple:
    return tuple(float(s) for s in text.split(",") if s.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mumimo", description="Spectral-efficiency sweeps for massive MIMO with multi-antenna users.")
    sub = p.add_subparsers(dest="experiment", required=True)
    for name, help_ in (("fig1", "sum SE against the number of BS antennas"),
                        ("fig2", "power scaling laws"),
                        ("fig3", "net downlink sum SE against the number of streams"),
                        ("custom", "M sweep of a user-defined scenario")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--trials", type=int, default=2000)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--drops", type=int, default=10)
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--out", help="output CSV path (default: stdout)")
        s.add_argument("--config", help="scenario file (JSON or key = value); overrides flags")
        s.add_argument("--m-grid", type=parse_grid)
        s.add_argument("--nk-grid", type=parse_grid)
        s.add_argument("--n-values", type=parse_grid, help="comma-separated streams per user")
        s.add_argument("--alpha", type=parse_floats)
        s.add_argument("-q", "--quiet", action="store_true")
    return p


def spec_from_args(args) -> ex.ExperimentSpec:
    name = args.experiment
    defaults = {
        "fig1": dict(grid=ex.FIG1_M_GRID, N_values=(1, 3), alphas=()),
        "fig2": dict(grid=ex.FIG2_M_GRID, N_values=(3,), alphas=(0.5, 1.0)),
        "fig3": dict(grid=ex.FIG3_NK_GRID, N_values=(1, 3, 10), alphas=()),
        "custom": dict(grid=(200,), N_values=(3,), alphas=()),
    }[name]
    kw = dict(defaults, trials=args.trials, seed=args.seed, drops=args.drops, workers=args.workers)
    grid = args.nk_grid if name == "fig3" else args.m_grid
    if grid:
        kw["grid"] = grid
    if args.n_values:
        kw["N_values"] = args.n_values
    if args.alpha:
        kw["alphas"] = args.alpha
    params = ScenarioParams()
    if args.config:
        mapping = read_config_file(args.config)
        cfg, params, kw["seed"] = config_from_mapping(mapping, SystemConfig(1, 1, 1), params, kw["seed"])
        kw["noise_power"] = cfg.noise_power
        for key in ("K", "S"):
            if key in mapping:
                kw[key] = getattr(cfg, key)
        if "N" in mapping:
            kw["N_values"] = (cfg.N,)
        if "M" in mapping:
            if name == "fig3":
                kw["M"] = cfg.M
            elif name == "custom":
                kw["grid"] = (cfg.M,)
    kw["params"] = params
    return ex.ExperimentSpec(name, **kw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    progress = None if args.quiet else ex.stderr_progress
    try:
        spec = spec_from_args(args)
        table = ex.run(spec, progress)
        if args.out:
            ex.emit_csv(table, args.out)
        else:
            ex.write_csv(table, sys.stdout)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
