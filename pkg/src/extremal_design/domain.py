"""Spatial grids, risk functionals and the small data containers shared by the package."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree


class RiskKind(str, Enum):
    SUPREMUM = "supremum"
    MEAN = "mean"
    WEIGHTED = "weighted"
    SITE = "site"


@dataclass(frozen=True)
class RiskFunctional:
    """A closed family of risk functionals summarizing a field by one number.

    ``weights`` is only used by the weighted kind and ``site`` only by the
    single-site kind. Weights are normalized to sum to one so that every
    member of the family evaluates a constant field ``c`` to ``c``.
    """

    kind: RiskKind = RiskKind.SUPREMUM
    weights: Optional[np.ndarray] = None
    site: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RiskKind(self.kind))
        if self.kind is RiskKind.WEIGHTED:
            if self.weights is None:
                raise ValueError("weighted risk functional needs weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and nonnegative")
            if w.sum() <= 0:
                raise ValueError("weights must sum to a positive value")
            object.__setattr__(self, "weights", w / w.sum())
        if self.kind is RiskKind.SITE and (self.site is None or self.site < 0):
            raise ValueError("single-site risk functional needs a valid site index")

    @classmethod
    def supremum(cls) -> "RiskFunctional":
        return cls(RiskKind.SUPREMUM)

    @classmethod
    def mean(cls) -> "RiskFunctional":
        return cls(RiskKind.MEAN)

    @classmethod
    def weighted(cls, weights) -> "RiskFunctional":
        return cls(RiskKind.WEIGHTED, weights=np.asarray(weights, dtype=float))

    @classmethod
    def at_site(cls, site: int) -> "RiskFunctional":
        return cls(RiskKind.SITE, site=int(site))

    @property
    def is_linear(self) -> bool:
        return self.kind in (RiskKind.MEAN, RiskKind.WEIGHTED, RiskKind.SITE)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.weights is not None:
            out["weights"] = self.weights.tolist()
        if self.site is not None:
            out["site"] = self.site
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RiskFunctional":
        w = d.get("weights")
        return cls(RiskKind(d["kind"]), weights=None if w is None else np.asarray(w), site=d.get("site"))

    def __call__(self, values) -> np.ndarray:
        """Evaluate on the full grid. ``values`` may be a vector or an (N, L) array."""
        v = np.asarray(values, dtype=float)
        if self.kind is RiskKind.SUPREMUM:
            return v.max(axis=-1)
        if self.kind is RiskKind.MEAN:
            return v.mean(axis=-1)
        if self.kind is RiskKind.WEIGHTED:
            if self.weights.shape[0] != v.shape[-1]:
                raise ValueError("weights do not match the number of grid locations")
            return v @ self.weights
        return v[..., self.site]

    def sup_on_simplex(self, n_locations: int) -> float:
        """Largest value the functional takes on the unit L1 simplex."""
        if self.kind is RiskKind.MEAN:
            return 1.0 / n_locations
        if self.kind is RiskKind.WEIGHTED:
            return float(self.weights.max())
        return 1.0


def risk_eval(r: RiskFunctional, values, subset) -> float:
    """Evaluate the discretized functional on the locations in ``subset``.

    The supremum and mean use the subset maximum and average, the weighted
    kind renormalizes its weights over the subset, and the single-site kind
    requires its site to be part of the subset.
    """
    idx = np.asarray(list(subset) if not isinstance(subset, np.ndarray) else subset, dtype=int)
    if idx.size == 0:
        raise ValueError("empty evaluation set")
    v = np.asarray(values, dtype=float)
    if idx.min() < 0 or idx.max() >= v.shape[-1]:
        raise IndexError("subset index out of range")
    sub = v[..., idx]
    if r.kind is RiskKind.SUPREMUM:
        return sub.max(axis=-1)
    if r.kind is RiskKind.MEAN:
        return sub.mean(axis=-1)
    if r.kind is RiskKind.WEIGHTED:
        w = r.weights[idx]
        if w.sum() <= 0:
            raise ValueError("subset carries zero total weight")
        return sub @ (w / w.sum())
    hits = np.flatnonzero(idx == r.site)
    if hits.size == 0:
        raise ValueError("risk site is not in the evaluation set")
    return sub[..., hits[0]]


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Candidate locations of a discretized region with boundary flags.

    Locations are stored as an ``(L, d)`` array. Boundary flags default to
    the discrete rule for regular rasters: a cell is on the boundary when it
    has fewer in-region 4-neighbours (2 in 1-D) than an interior cell.
    """

    locations: np.ndarray
    cell_spacing: float
    boundary_flags: Optional[np.ndarray] = None
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float)
        if locs.ndim == 1:
            locs = locs[:, None]
        if locs.shape[0] < 1:
            raise ValueError("grid needs at least one location")
        if not np.all(np.isfinite(locs)):
            raise ValueError("grid coordinates must be finite")
        if not self.cell_spacing > 0:
            raise ValueError("cell_spacing must be positive")
        locs.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        tree = cKDTree(locs)
        object.__setattr__(self, "_tree", tree)
        if len(tree.query_pairs(1e-9 * self.cell_spacing)) > 0:
            raise ValueError("grid locations must be pairwise distinct")
        if self.boundary_flags is None:
            flags = self._raster_boundary()
        else:
            flags = np.asarray(self.boundary_flags, dtype=bool)
            if flags.shape != (locs.shape[0],):
                raise ValueError("one boundary flag per location is required")
        flags.setflags(write=False)
        object.__setattr__(self, "boundary_flags", flags)

    def _raster_boundary(self) -> np.ndarray:
        locs = self.locations
        d = locs.shape[1]
        h = self.cell_spacing
        counts = np.zeros(locs.shape[0], dtype=int)
        for axis in range(d):
            for sign in (-1.0, 1.0):
                shifted = locs.copy()
                shifted[:, axis] += sign * h
                dist, _ = self._tree.query(shifted)
                counts += dist < 0.5 * h
        return counts < 2 * d

    @classmethod
    def regular_1d(cls, lo: float, hi: float, spacing: float) -> "SpatialGrid":
        n = int(round((hi - lo) / spacing)) + 1
        return cls(np.linspace(lo, hi, n)[:, None], spacing)

    @classmethod
    def regular_2d(cls, nx: int, ny: int, spacing: float = 1.0, origin=(0.0, 0.0),
                   mask: Optional[np.ndarray] = None) -> "SpatialGrid":
        """Raster of ``nx * ny`` cells in row-major (y outer) order, optionally masked."""
        xs = origin[0] + spacing * np.arange(nx)
        ys = origin[1] + spacing * np.arange(ny)
        xx, yy = np.meshgrid(xs, ys)
        locs = np.column_stack([xx.ravel(), yy.ravel()])
        if mask is not None:
            locs = locs[np.asarray(mask, dtype=bool).ravel()]
        return cls(locs, spacing)

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def nearest(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim and pts.shape[0] == self.dim:
            pts = pts.T
        _, idx = self._tree.query(pts)
        return np.asarray(idx, dtype=int)

    def index_of(self, point) -> int:
        """Index of the grid location matching ``point`` within half a cell."""
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        dist, idx = self._tree.query(pt)
        if dist > 0.5 * self.cell_spacing:
            raise ValueError(f"no grid location at {pt.tolist()}")
        return int(idx)

    def pairwise_lags(self) -> np.ndarray:
        """Array of lag vectors ``s_i - s_j`` with shape (L, L, d)."""
        return self.locations[:, None, :] - self.locations[None, :, :]

    def distances(self, i, j=None) -> np.ndarray:
        a = self.locations[np.atleast_1d(i)]
        b = self.locations if j is None else self.locations[np.atleast_1d(j)]
        return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def dist_to_boundary(grid: SpatialGrid, subset) -> float:
    """Smallest distance from a location in ``subset`` to a boundary location."""
    idx = np.atleast_1d(np.asarray(list(subset) if not isinstance(subset, np.ndarray) else subset, dtype=int))
    if idx.size == 0:
        raise ValueError("empty evaluation set")
    bnd = np.flatnonzero(grid.boundary_flags)
    if bnd.size == 0:
        return float("inf")
    return float(grid.distances(idx, bnd).min())


@dataclass(frozen=True)
class StationSeries:
    location: np.ndarray
    times: np.ndarray
    values: np.ndarray
    name: str = ""
    rainfall: bool = True

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.location, dtype=float))
        times = np.asarray(self.times)
        vals = np.asarray(self.values, dtype=float)
        if times.shape[0] != vals.shape[0]:
            raise ValueError("times and values differ in length")
        if times.shape[0] > 1 and not np.all(times[1:] > times[:-1]):
            raise ValueError("times must be strictly increasing")
        if self.rainfall and np.any(vals[~np.isnan(vals)] < 0):
            raise ValueError("rainfall values must be nonnegative")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", vals)

    def observed(self) -> np.ndarray:
        return self.values[~np.isnan(self.values)]


@dataclass(frozen=True)
class GriddedField:
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError("one value per grid location is required")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)
