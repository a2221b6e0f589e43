"""Command-line front end.

Every command is a pure function of its effective configuration, its input
files and the seed. The effective configuration is written to the output
directory as ``config.json`` and can be fed back through ``--config``.
Precedence: command-line flags, then the config file, then built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .design import (DesignError, boundary_effect_curves, experiment_grid, extend_grid, forward_backward_refine,
                     reference_processes, sequential_design, sequential_design_stationary)
from .domain import RiskFunctional, SpatialGrid
from .fit import (FitError, GpdFit, empirical_extremogram, fit_location_covariate, fit_scale_shape_pooled,
                  fit_variogram_to_extremogram, gpd_fit_mle, qq_plot_data)
from .simulate import MarginalModel, SimulationError, simulate_r_pareto
from .synthetic import SyntheticBasinConfig, make_synthetic_basin
from .variogram import Family, VariogramModel

log = logging.getLogger("extremal_design")

ENV_THREADS = "EXTREMAL_DESIGN_THREADS"

EXIT_CONFIG = 2
EXIT_COMPUTE = 3


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------- configs

@dataclass
class SimulateParams:
    grid: dict = field(default_factory=lambda: {"kind": "1d", "lo": -6.0, "hi": 6.0, "spacing": 0.1})
    model: dict = field(default_factory=lambda: VariogramModel.bounded_exp(2.0, 1.5, 10.0).to_dict())
    marginal: dict = field(default_factory=lambda: {"a": 1.0, "b": 0.0, "xi": 1.0})
    risk: dict = field(default_factory=lambda: {"kind": "supremum"})
    u: float = 1.0
    n: int = 10_000
    max_attempts: int = 10_000
    csv: bool = False


@dataclass
class FitParams:
    raster: str = "data/raster.npz"
    stations_dir: str = "data/stations"
    q: float = 0.995
    covariate: str = "mean"
    family: str = Family.STABLE_FRACTAL.value
    anisotropic: bool = True
    n_starts: int = 20
    n_boot: int = 200
    min_pairs: int = 10


@dataclass
class DesignParams:
    fit_dir: str = "fit"
    basin: str = "data/basin.csv"
    u: float = 20.0
    n: int = 10_000
    l_samp: int = 10
    risk: dict = field(default_factory=lambda: {"kind": "supremum"})
    extend_margin: float = 0.0
    refine: bool = False
    max_sweeps: int = 10
    max_attempts: int = 10_000
    svg: bool = True


@dataclass
class BoundaryParams:
    lo: float = -6.0
    hi: float = 6.0
    spacing: float = 0.1
    u: float = 1.0
    batches: int = 100
    batch_size: int = 1000
    processes: list = field(default_factory=lambda: list(reference_processes()))
    xi: float = 1.0
    svg: bool = True


@dataclass
class IterativeParams:
    process: str = "pareto-weak"
    lo: float = -6.0
    hi: float = 6.0
    spacing: float = 0.1
    u: float = 1.0
    n: int = 10_000
    additions: int = 4
    random_init: int = 2
    random_runs: int = 1
    xi: float = 1.0
    fresh_per_step: bool = False
    svg: bool = True


@dataclass
class SyntheticParams:
    basin: dict = field(default_factory=lambda: SyntheticBasinConfig().to_dict())


PARAMS = {
    "simulate": SimulateParams,
    "fit": FitParams,
    "design": DesignParams,
    "boundary-experiment": BoundaryParams,
    "iterative-experiment": IterativeParams,
    "synthetic": SyntheticParams,
}


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    threads: int = 1
    out_dir: str = "out"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in PARAMS:
            raise ConfigError(f"unknown command {self.command!r}")
        cls = PARAMS[self.command]
        known = {f.name for f in fields(cls)}
        extra = set(self.params) - known
        if extra:
            raise ConfigError(f"unknown parameters for {self.command}: {sorted(extra)}")
        self.params = asdict(cls(**self.params))
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    @property
    def p(self):
        return PARAMS[self.command](**self.params)

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, "threads": self.threads,
                "out_dir": self.out_dir, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(d["command"], int(d.get("seed", 0)), int(d.get("threads", 1)),
                   str(d.get("out_dir", "out")), dict(d.get("params", {})))

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("threads")
        d.pop("out_dir")
        return io.config_hash(d)


# ------------------------------------------------------------------ helpers

def _grid_from_spec(spec: dict) -> SpatialGrid:
    kind = spec.get("kind", "1d")
    if kind == "1d":
        return SpatialGrid.regular_1d(float(spec["lo"]), float(spec["hi"]), float(spec["spacing"]))
    if kind == "2d":
        return SpatialGrid.regular_2d(int(spec["nx"]), int(spec["ny"]), float(spec.get("spacing", 1.0)))
    raise ConfigError(f"unknown grid kind {kind!r}")


def _risk(d: dict, n_locations: int) -> RiskFunctional:
    r = RiskFunctional.from_dict(d)
    if r.weights is not None and r.weights.shape[0] != n_locations:
        raise ConfigError("risk weights do not match the grid")
    return r


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"missing input: {p}")
    return p


def _check_outputs(paths) -> None:
    for p in paths:
        p = Path(p)
        if not p.exists() or p.stat().st_size == 0:
            raise RuntimeError(f"output not written: {p}")
        if p.suffix == ".json":
            io.read_json(p)


# ----------------------------------------------------------------- commands

def cmd_simulate(cfg: RunConfig, out: Path) -> list:
    p = cfg.p
    grid = _grid_from_spec(p.grid)
    model = VariogramModel.from_dict(p.model)
    marg = MarginalModel.from_dict(p.marginal)
    r = _risk(p.risk, grid.n)
    ens = simulate_r_pareto(model, marg, r, p.u, grid, p.n, cfg.seed, max_attempts=p.max_attempts,
                            threads=cfg.threads)
    paths = [out / "ensemble.bin", out / "ensemble.json"]
    io.write_ensemble(paths[0], ens.samples, ens.xi, cfg.seed)
    io.write_json(paths[1], {
        "grid": io.grid_to_dict(grid), "model": model.to_dict(), "marginal": marg.to_dict(),
        "risk": r.to_dict(), "u": p.u, "n": ens.n, "seed": cfg.seed, "config_hash": cfg.hash(),
        "rejection": ens.rejection_stats, "scale": "standardized",
    })
    if p.csv:
        paths.append(out / "ensemble.csv")
        io.write_ensemble_csv(paths[-1], ens.data_scale())
    return paths


def _load_stations(directory: Path) -> list:
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise ConfigError(f"no station files in {directory}")
    return [io.read_station(f) for f in files]


def cmd_fit(cfg: RunConfig, out: Path) -> list:
    p = cfg.p
    raster_path = _require(p.raster)
    stations = _load_stations(_require(p.stations_dir))
    grid, stack = io.read_raster_stack(raster_path)
    if p.covariate == "mean":
        cov_field = stack.mean(axis=0)
    elif p.covariate == "quantile":
        cov_field = np.quantile(stack, p.q, axis=0)
    else:
        raise ConfigError("covariate must be 'mean' or 'quantile'")
    # per-station thresholds; stations that cannot be used are reported and skipped
    usable, failures, quants, covs = [], [], [], []
    for st in stations:
        obs = st.observed()
        if obs.size < 100:
            failures.append({"station": st.name, "reason": "fewer than 100 observations"})
            continue
        usable.append(st)
        quants.append(float(np.quantile(obs, p.q)))
        covs.append(float(cov_field[grid.nearest(st.location)[0]]))
    if len(usable) < 3:
        raise FitError("fewer than 3 usable stations")
    loc = fit_location_covariate(np.array(quants), np.array(covs), p.covariate)
    excess_sets = []
    station_rows = []
    for st, c in zip(usable, covs):
        b = float(loc(c))
        obs = st.observed()
        ex = obs[obs > b] - b
        excess_sets.append(ex)
        row = {"name": st.name, "location": st.location.tolist(), "covariate": c, "b": b,
               "n_exceedances": int(ex.size)}
        try:
            row["gpd"] = gpd_fit_mle(ex, threshold=b).to_dict()
        except FitError as e:
            failures.append({"station": st.name, "reason": str(e)})
        station_rows.append(row)
    pooled = fit_scale_shape_pooled(excess_sets)
    emp = empirical_extremogram(stack, grid, q=p.q, min_pairs=p.min_pairs)
    vfit = fit_variogram_to_extremogram(emp, Family(p.family), anisotropic=p.anisotropic,
                                        n_starts=p.n_starts, seed=cfg.seed)
    paths = [out / "location_fit.json", out / "pooled_fit.json", out / "variogram.json",
             out / "extremogram.csv", out / "covariate.csv", out / "stations.json", out / "fit_report.json"]
    io.write_json(paths[0], loc.to_dict())
    io.write_json(paths[1], pooled.to_dict())
    io.write_json(paths[2], vfit.to_dict())
    io.write_table(paths[3], ["lag", "sector", "rho", "pairs"],
                   [(r["lag"], r["sector"], r["rho"], r["pairs"]) for r in emp.rows()])
    io.write_field_csv(paths[4], grid, cov_field)
    io.write_json(paths[5], station_rows)
    pooled_gpd = GpdFit(float(pooled.a_hat), float(pooled.xi_hat), pooled.standard_errors, pooled.n_exceedances)
    for i, (st, ex) in enumerate(zip(usable, excess_sets)):
        if ex.size < 2:
            continue
        try:
            qq = qq_plot_data(pooled_gpd, ex, n_boot=p.n_boot, seed=cfg.seed + i)
        except FitError as e:
            failures.append({"station": st.name, "reason": f"QQ bands: {e}"})
            continue
        paths.append(out / f"qq_{st.name}.csv")
        io.write_table(paths[-1], ["empirical", "model", "lower", "upper"], qq.tolist())
    io.write_json(paths[6], {
        "seed": cfg.seed, "config_hash": cfg.hash(), "q": p.q,
        "inputs": {"raster": io.file_hash(raster_path),
                   **{st.name: io.file_hash(Path(p.stations_dir) / f"{st.name}.csv") for st in usable
                      if (Path(p.stations_dir) / f"{st.name}.csv").exists()}},
        "n_stations_used": len(usable), "failures": failures,
        "n_exceedances": pooled.n_exceedances, "variogram_at_bound": vfit.at_bound,
    })
    return paths


def _basin_grid(path: Path):
    fld = io.read_field_csv(path)
    inside = fld.values > 0.5
    if not inside.any():
        raise ConfigError("basin mask is empty")
    return SpatialGrid(fld.grid.locations[inside], fld.grid.cell_spacing)


def cmd_design(cfg: RunConfig, out: Path) -> list:
    p = cfg.p
    if p.l_samp < 1:
        raise ConfigError("l_samp must be at least 1")
    fit_dir = _require(p.fit_dir)
    basin = _basin_grid(_require(p.basin))
    loc = io.read_json(_require(fit_dir / "location_fit.json"))
    pooled = io.read_json(_require(fit_dir / "pooled_fit.json"))
    vario = io.read_json(_require(fit_dir / "variogram.json"))
    cov = io.read_field_csv(_require(fit_dir / "covariate.csv"))
    stations = io.read_json(_require(fit_dir / "stations.json"))
    grid, region = extend_grid(basin, p.extend_margin)
    cov_cells = cov.values[cov.grid.nearest(grid.locations)]
    b = loc["b1"] + loc["b2"] * cov_cells
    marg = MarginalModel(pooled["a"], b, pooled["xi"])
    model = VariogramModel.from_dict(vario["model"])
    r = _risk(p.risk, grid.n if p.extend_margin == 0 else len(region))
    observed = []
    for st in stations:
        k = int(basin.nearest(st["location"])[0])
        if np.linalg.norm(basin.locations[k] - np.asarray(st["location"])) <= 0.5 * basin.cell_spacing:
            observed.append(k)
    observed = sorted(set(observed))
    # the simulation risk is evaluated on the region only, so it matches the reference probability
    sim_r = r if p.extend_margin == 0 else RiskFunctional.supremum()
    ens = simulate_r_pareto(model, marg, sim_r, p.u, grid, p.n, cfg.seed, max_attempts=p.max_attempts,
                            threads=cfg.threads)
    state = sequential_design(ens, marg, r, p.u, p.l_samp, observed, grid,
                              region=None if p.extend_margin == 0 else region)
    result = state.to_dict()
    if p.refine and len(state.chosen_sites) >= 2:
        ref = forward_backward_refine(state, ens, marg, r, p.u, p.max_sweeps,
                                      region=None if p.extend_margin == 0 else region)
        result["refined"] = ref.to_dict()
    result.update({"seed": cfg.seed, "config_hash": cfg.hash(), "u": p.u, "risk": r.to_dict(),
                   "rejection": ens.rejection_stats, "extend_margin": p.extend_margin})
    paths = [out / "design.json", out / "design_steps.csv", out / "discrepancy_surface.csv"]
    io.write_json(paths[0], result)
    locs = grid.locations
    io.write_table(paths[1], ["step", "site", "x", "y", "discrepancy"],
                   [(i + 1, k, locs[k][0], locs[k][1], d) for i, (k, d) in enumerate(state.history)])
    rows = []
    for i, R in enumerate(state.surfaces):
        for k in range(grid.n):
            rows.append((i + 1, locs[k][0], locs[k][1], R[k]))
    io.write_table(paths[2], ["step", "x", "y", "discrepancy"], rows)
    if p.svg:
        paths.append(out / "design.svg")
        io.svg_heatmap(paths[-1], grid, state.surfaces[0], marks=state.chosen_sites,
                       title="first-step discrepancy and chosen sites")
    return paths


def cmd_boundary_experiment(cfg: RunConfig, out: Path) -> list:
    p = cfg.p
    procs = reference_processes(p.xi)
    unknown = [n for n in p.processes if n not in procs]
    if unknown:
        raise ConfigError(f"unknown processes: {unknown}")
    grid = experiment_grid(p.lo, p.hi, p.spacing)
    tables = boundary_effect_curves([procs[n] for n in p.processes], p.u, p.batches, p.batch_size,
                                    cfg.seed, grid, threads=cfg.threads)
    paths = []
    for panel in ("concurrent", "exclusive"):
        rows = [(t.process, h, e, lo, hi) for t in tables if t.panel == panel
                for h, e, lo, hi in zip(t.h, t.estimate, t.lower, t.upper)]
        paths.append(out / f"boundary_{panel}.csv")
        io.write_table(paths[-1], ["process", "h", "estimate", "lower", "upper"], rows)
        if p.svg:
            paths.append(out / f"boundary_{panel}.svg")
            io.svg_lines(paths[-1], {t.process: (t.h, t.estimate) for t in tables if t.panel == panel},
                         title=f"{panel} exceedance", xlabel="h", ylabel="probability")
    paths.append(out / "boundary_summary.json")
    io.write_json(paths[-1], {"seed": cfg.seed, "config_hash": cfg.hash(),
                              "processes": {n: procs[n].to_dict() for n in p.processes}})
    return paths


def scaled_coverage(state) -> list:
    """Per-step conditional coverage of each candidate, rescaled to [0, 1]."""
    out = []
    I = state.reference_prob
    for R in state.surfaces:
        cov = (I - R) / I if I > 0 else np.zeros_like(R)
        fin = np.isfinite(cov)
        lo, hi = (cov[fin].min(), cov[fin].max()) if fin.any() else (0.0, 1.0)
        out.append((cov - lo) / (hi - lo) if hi > lo else np.where(fin, 0.0, np.nan))
    return out


def cmd_iterative_experiment(cfg: RunConfig, out: Path) -> list:
    p = cfg.p
    procs = reference_processes(p.xi)
    if p.process not in procs:
        raise ConfigError(f"unknown process {p.process!r}")
    grid = experiment_grid(p.lo, p.hi, p.spacing)
    r = RiskFunctional.supremum()
    x = grid.locations[:, 0]
    ends = [int(np.argmin(x)), int(np.argmax(x))]
    runs = [("boundary", 0, sequential_design_stationary(procs[p.process], r, p.u, p.additions, ends, p.n,
                                                         cfg.seed, grid, fresh_per_step=p.fresh_per_step,
                                                         threads=cfg.threads))]
    for j in range(p.random_runs):
        st = sequential_design_stationary(procs[p.process], r, p.u, p.additions, (), p.n, cfg.seed + 1 + j, grid,
                                          random_init=p.random_init, fresh_per_step=p.fresh_per_step,
                                          threads=cfg.threads)
        runs.append(("random", j, st))
    paths = []
    summary = {"seed": cfg.seed, "config_hash": cfg.hash(), "process": procs[p.process].to_dict(), "runs": []}
    for label, j, st in runs:
        name = f"iterative_{label}" if label == "boundary" else f"iterative_random_{j}"
        rows = []
        for step, (cov, (k, d)) in enumerate(zip(scaled_coverage(st), st.history)):
            for i in range(grid.n):
                rows.append((step + 1, x[i], cov[i], int(i == k)))
        paths.append(out / f"{name}.csv")
        io.write_table(paths[-1], ["step", "x", "coverage_scaled", "selected"], rows)
        if p.svg:
            paths.append(out / f"{name}.svg")
            io.svg_lines(paths[-1], {f"step {s + 1}": (x, c) for s, c in enumerate(scaled_coverage(st))},
                         title=name, xlabel="s", ylabel="scaled coverage")
        summary["runs"].append({"init": label, "run": j, "initial_x": x[st.observed_sites].tolist(),
                                "added_x": x[st.chosen_sites].tolist(), "discrepancy_trace": st.trace,
                                "reference_prob": st.reference_prob})
    paths.append(out / "iterative_summary.json")
    io.write_json(paths[-1], summary)
    return paths


def cmd_synthetic(cfg: RunConfig, out: Path) -> list:
    bcfg = SyntheticBasinConfig.from_dict(cfg.p.basin)
    sb = make_synthetic_basin(bcfg, cfg.seed)
    sdir = out / "stations"
    sdir.mkdir(parents=True, exist_ok=True)
    paths = [out / "raster.npz", out / "basin.csv", out / "truth.json"]
    io.write_raster_stack(paths[0], sb.grid, sb.raster)
    io.write_field_csv(paths[1], sb.grid, sb.basin_mask.astype(float))
    io.write_json(paths[2], {**sb.truth(), "seed": cfg.seed, "station_cells": sb.station_cells.tolist()})
    for st in sb.stations:
        io.write_station(sdir / f"{st.name}.csv", st)
        paths.append(sdir / f"{st.name}.csv")
    return paths


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "design": cmd_design,
    "boundary-experiment": cmd_boundary_experiment,
    "iterative-experiment": cmd_iterative_experiment,
    "synthetic": cmd_synthetic,
}


# ------------------------------------------------------------------ parsing

def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s}")


# flag name -> (params key, type) per command
FLAGS = {
    "simulate": {"n": int, "u": float, "max-attempts": int, "csv": _bool},
    "fit": {"raster": str, "stations-dir": str, "q": float, "covariate": str, "family": str,
            "anisotropic": _bool, "n-starts": int, "n-boot": int, "min-pairs": int},
    "design": {"fit-dir": str, "basin": str, "u": float, "n": int, "l-samp": int, "extend-margin": float,
               "refine": _bool, "max-sweeps": int, "max-attempts": int, "svg": _bool},
    "boundary-experiment": {"u": float, "batches": int, "batch-size": int, "spacing": float, "xi": float,
                            "svg": _bool},
    "iterative-experiment": {"process": str, "u": float, "n": int, "additions": int, "random-init": int,
                             "random-runs": int, "spacing": float, "xi": float, "fresh-per-step": _bool,
                             "svg": _bool},
    "synthetic": {},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help=f"worker threads (environment override: {ENV_THREADS})")
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="extremal-design", parents=[common],
                                     description="Sampling designs for spatial extremes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in FLAGS.items():
        sp = sub.add_parser(name, parents=[common])
        for flag, typ in flags.items():
            sp.add_argument(f"--{flag}", dest="p_" + flag.replace("-", "_"), type=typ, default=None)
    return parser


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    base = {"command": args.command, "params": {}}
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        data = io.read_json(_require(cfg_path))
        if "command" in data and data["command"] != args.command:
            raise ConfigError(f"config is for {data['command']!r}, not {args.command!r}")
        if "params" in data or "command" in data:
            base.update({k: v for k, v in data.items() if k != "command"})
        else:
            base["params"] = data
    params = dict(base.get("params", {}))
    for key, val in vars(args).items():
        if key.startswith("p_") and val is not None:
            params[key[2:]] = val
    base["params"] = params
    for key in ("seed", "out_dir"):
        if hasattr(args, key):
            base[key] = getattr(args, key)
    if ENV_THREADS in environ:
        try:
            base["threads"] = int(environ[ENV_THREADS])
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer") from None
    if hasattr(args, "threads"):
        base["threads"] = args.threads
    try:
        return RunConfig.from_dict(base)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "config.json", cfg.to_dict())
        paths = COMMANDS[cfg.command](cfg, out)
        _check_outputs(paths)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, FitError, DesignError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_COMPUTE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for pth in paths:
        print(pth)
    return 0


if __name__ == "__main__":
    sys.exit(main())
