"""Synthetic basin data with known marginal and dependence truth.

The raster stack mimics a radar product: each time slice is a log-Gaussian
spectral field scaled by a radial Pareto variable, so its pairwise tail
dependence follows the closed-form extremogram of the truth variogram. The
time-mean of the stack is the covariate of the location model. Station
series have exceedance probability ``1 - q`` above
``b(s) = b1 + b2 * covariate(s)`` and generalized Pareto excesses with
scale ``a`` and shape ``xi`` above it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .domain import SpatialGrid, StationSeries
from .fit import gpd_isf
from .simulate import AngularSampler, make_rng
from .variogram import VariogramModel


def _default_variogram() -> dict:
    return VariogramModel.stable_fractal(1.2, 0.6, 12.0, kappa=1.4, delta=0.5).to_dict()


@dataclass(frozen=True)
class SyntheticBasinConfig:
    nx: int = 30
    ny: int = 30
    spacing: float = 1.0
    n_stations: int = 14
    n_in_basin: int = 3
    raster_steps: int = 4000
    station_steps: int = 46_000
    q: float = 0.995
    b1: float = 1.14
    b2: float = 20.8
    a: float = 1.87
    xi: float = 0.33
    variogram: dict = field(default_factory=_default_variogram)
    basin_centre: tuple = (15.0, 14.0)
    basin_axes: tuple = (8.0, 5.0)
    basin_angle: float = 0.6

    def to_dict(self) -> dict:
        d = asdict(self)
        d["basin_centre"] = list(self.basin_centre)
        d["basin_axes"] = list(self.basin_axes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticBasinConfig":
        d = dict(d)
        for k in ("basin_centre", "basin_axes"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SyntheticBasin:
    grid: SpatialGrid
    basin_mask: np.ndarray
    raster: np.ndarray
    covariate: np.ndarray
    stations: list
    station_cells: np.ndarray
    location: np.ndarray
    config: SyntheticBasinConfig

    @property
    def basin_cells(self) -> np.ndarray:
        return np.flatnonzero(self.basin_mask)

    def truth(self) -> dict:
        c = self.config
        return {"b1": c.b1, "b2": c.b2, "a": c.a, "xi": c.xi, "variogram": c.variogram, "q": c.q}


def ellipse_mask(grid: SpatialGrid, centre, axes, angle: float) -> np.ndarray:
    d = grid.locations - np.asarray(centre, float)
    c, s = np.cos(angle), np.sin(angle)
    u = c * d[:, 0] + s * d[:, 1]
    v = -s * d[:, 0] + c * d[:, 1]
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def _background_scale(grid: SpatialGrid) -> np.ndarray:
    x = grid.locations[:, 0] / max(grid.locations[:, 0].max(), 1.0)
    y = grid.locations[:, 1] / max(grid.locations[:, 1].max(), 1.0)
    return 0.06 + 0.05 * np.exp(-((x - 0.3) ** 2 + (y - 0.7) ** 2) / 0.15) + 0.02 * y


def _pick_stations(grid, basin, n_total, n_in, rng):
    inside = np.flatnonzero(basin)
    outside = np.flatnonzero(~basin)
    cells = list(rng.choice(inside, size=n_in, replace=False))
    # keep outside stations at least 3 cells apart so they do not cluster
    for k in rng.permutation(outside):
        if len(cells) == n_total:
            break
        if grid.distances([k], cells).min() >= 3 * grid.cell_spacing:
            cells.append(int(k))
    if len(cells) < n_total:
        raise ValueError("could not place the requested number of stations")
    return np.array(cells, dtype=int)


def station_series(rng, b: float, a: float, xi: float, q: float, n: int) -> np.ndarray:
    """Series with ``P(X > b) = 1 - q`` and GPD(a, xi) excesses above ``b``."""
    u = rng.random(n)
    out = b * (u / q) ** 3
    tail = u > q
    out[tail] = b + gpd_isf((1.0 - u[tail]) / (1.0 - q), a, xi)
    return out


def make_synthetic_basin(cfg: SyntheticBasinConfig = SyntheticBasinConfig(), seed: int = 0) -> SyntheticBasin:
    grid = SpatialGrid.regular_2d(cfg.nx, cfg.ny, cfg.spacing)
    basin = ellipse_mask(grid, cfg.basin_centre, cfg.basin_axes, cfg.basin_angle)
    model = VariogramModel.from_dict(cfg.variogram)
    sampler = AngularSampler(model, grid)
    rng = make_rng(seed, 11)
    raster = np.empty((cfg.raster_steps, grid.n))
    scale = _background_scale(grid)
    for start in range(0, cfg.raster_steps, 500):
        stop = min(start + 500, cfg.raster_steps)
        logv = sampler.log_spectral(stop - start, rng)
        radial = 1.0 / rng.random(stop - start)
        raster[start:stop] = scale * np.log1p(radial[:, None] * np.exp(logv))
    covariate = raster.mean(axis=0)
    location = cfg.b1 + cfg.b2 * covariate
    cells = _pick_stations(grid, basin, cfg.n_stations, cfg.n_in_basin, make_rng(seed, 12))
    stations = []
    for i, k in enumerate(cells):
        vals = station_series(make_rng(seed, 13, i), location[k], cfg.a, cfg.xi, cfg.q, cfg.station_steps)
        stations.append(StationSeries(grid.locations[k], np.arange(cfg.station_steps), vals, f"st{i:02d}"))
    return SyntheticBasin(grid, basin, raster, covariate, stations, cells, location, cfg)
