"""Sequential station selection that preserves exceedance probabilities of a risk functional.

All candidates at all steps are scored against one fixed Monte Carlo
ensemble. At each step the candidate whose addition gives the smallest
discrepancy ``|I - P_hat{r_sites(X) >= u}|`` is added, where ``I`` is the
full-region exceedance frequency. Ties go to the candidate farthest from
the sites already in the design, then to the lowest index.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .domain import RiskFunctional, RiskKind, SpatialGrid, risk_eval
from .simulate import (DEFAULT_MAX_ATTEMPTS, MarginalModel, ParetoEnsemble, make_rng,
                       simulate_gaussian_exceedances, simulate_r_pareto)
from .variogram import VariogramModel

log = logging.getLogger(__name__)

MIN_ENSEMBLE = 100


class DesignError(ValueError):
    pass


def _data_matrix(ens, marg: Optional[MarginalModel]) -> np.ndarray:
    if isinstance(ens, ParetoEnsemble):
        return ens.data_scale(marg)
    data = np.asarray(ens, dtype=float)
    return data if marg is None else marg.data_scale(data)


def _region_risk(r: RiskFunctional, data: np.ndarray, region) -> np.ndarray:
    if region is None:
        return r(data)
    return risk_eval(r, data, np.asarray(region, dtype=int))


def reference_prob(ens, marg: Optional[MarginalModel], r: RiskFunctional, u: float, region=None) -> float:
    """Fraction of ensemble members whose full-region data-scale risk reaches ``u``."""
    data = _data_matrix(ens, marg)
    if data.shape[0] == 0:
        raise DesignError("empty ensemble")
    return float(np.mean(_region_risk(r, data, region) >= u))


def subset_risk(r: RiskFunctional, data: np.ndarray, subset, grid: Optional[SpatialGrid] = None) -> np.ndarray:
    """Risk estimated from the sites in ``subset`` only.

    For the single-site functional the value at the subset location nearest
    to the target site is used.
    """
    idx = np.asarray(list(subset), dtype=int)
    if idx.size == 0:
        raise DesignError("empty evaluation set")
    if r.kind is RiskKind.SITE and r.site not in set(idx.tolist()):
        if grid is None:
            raise DesignError("a grid is needed to estimate a single-site risk off-site")
        d = grid.distances([r.site], idx)[0]
        return data[:, idx[int(np.argmin(d))]]
    return risk_eval(r, data, idx)


def subset_discrepancy(ens, marg, r: RiskFunctional, u: float, subset, I: float,
                       grid: Optional[SpatialGrid] = None) -> float:
    data = _data_matrix(ens, marg)
    frac = float(np.mean(subset_risk(r, data, subset, grid) >= u))
    return abs(I - frac)


class _Scorer:
    """Exceedance counts of ``r_{S + k} >= u`` for every candidate ``k`` at once."""

    def __init__(self, data: np.ndarray, r: RiskFunctional, u: float, grid: Optional[SpatialGrid]):
        self.data = data
        self.r = r
        self.u = u
        self.grid = grid
        self.n, self.L = data.shape
        if r.kind is RiskKind.SUPREMUM:
            self.exceed = (data >= u).astype(np.float32)

    def counts(self, current: Sequence[int]) -> np.ndarray:
        cur = list(current)
        kind = self.r.kind
        d = self.data
        if kind is RiskKind.SUPREMUM:
            if not cur:
                return self.exceed.sum(axis=0).round().astype(np.int64)
            covered = (d[:, cur] >= self.u).any(axis=1)
            extra = (~covered).astype(np.float32) @ self.exceed
            return int(covered.sum()) + extra.round().astype(np.int64)
        if kind is RiskKind.MEAN:
            s = d[:, cur].sum(axis=1) if cur else np.zeros(self.n)
            m = len(cur) + 1
            return ((s[:, None] + d) / m >= self.u).sum(axis=0)
        if kind is RiskKind.WEIGHTED:
            w = self.r.weights
            sw = d[:, cur] @ w[cur] if cur else np.zeros(self.n)
            wt = float(w[cur].sum()) if cur else 0.0
            tot = wt + w
            with np.errstate(invalid="ignore", divide="ignore"):
                est = (sw[:, None] + d * w[None, :]) / tot[None, :]
            out = (est >= self.u).sum(axis=0)
            out[tot <= 0] = 0
            return out
        # single site: nearest design site to the target
        if self.grid is None:
            raise DesignError("single-site designs need the grid")
        dist = self.grid.distances([self.r.site])[0]
        cand = (d >= self.u).sum(axis=0)
        if not cur:
            return cand
        best = min(cur, key=lambda j: (dist[j], j))
        base = int((d[:, best] >= self.u).sum())
        closer = (dist < dist[best]) | ((dist == dist[best]) & (np.arange(self.L) < best))
        return np.where(closer, cand, base)

    def count_of(self, subset) -> int:
        return int(np.sum(subset_risk(self.r, self.data, subset, self.grid) >= self.u))


@dataclass
class DesignState:
    """Outcome of a sequential design.

    ``history`` lists ``(chosen index, achieved discrepancy)`` per step and
    ``surfaces`` the candidate discrepancies ``R[k]`` evaluated at each step
    (``nan`` for ineligible cells).
    """

    grid: SpatialGrid
    observed_sites: list
    chosen_sites: list
    reference_prob: float
    discrepancy: np.ndarray
    history: list = field(default_factory=list)
    surfaces: list = field(default_factory=list)
    n_members: int = 0
    final_discrepancy: float = float("nan")
    swaps: int = 0

    @property
    def trace(self) -> list:
        return [d for _, d in self.history]

    @property
    def sites(self) -> list:
        return list(self.observed_sites) + list(self.chosen_sites)

    def to_dict(self) -> dict:
        locs = self.grid.locations
        return {
            "observed_sites": [int(i) for i in self.observed_sites],
            "observed_coordinates": [locs[i].tolist() for i in self.observed_sites],
            "chosen_sites": [int(i) for i in self.chosen_sites],
            "chosen_coordinates": [locs[i].tolist() for i in self.chosen_sites],
            "reference_prob": self.reference_prob,
            "discrepancy_trace": [float(d) for d in self.trace],
            "final_discrepancy": float(self.final_discrepancy),
            "n_members": self.n_members,
            "swaps": self.swaps,
        }


def _pick(R: np.ndarray, eligible: np.ndarray, mind: np.ndarray) -> int:
    vals = np.where(eligible, R, np.inf)
    best = vals.min()
    tied = np.flatnonzero(eligible & (vals == best))
    if tied.size == 1:
        return int(tied[0])
    far = mind[tied].max()
    return int(tied[mind[tied] == far][0])


def sequential_design(ens, marg: Optional[MarginalModel], r: RiskFunctional, u: float, n_samp: int,
                      observed=(), grid: Optional[SpatialGrid] = None, candidates=None, region=None,
                      record_surfaces: bool = True) -> DesignState:
    """Greedy sequential design of ``n_samp`` new sites.

    Parameters
    ----------
    ens : ParetoEnsemble or array
        Ensemble on the standardized scale (mapped through ``marg``) or a
        data-scale array of shape (N, L).
    observed : index set of existing stations, kept in every design.
    candidates : optional index set restricting where new sites may go.
    region : optional index set on which the reference risk is evaluated;
        defaults to the whole grid. Pass the original region together with a
        grid extended beyond it to let candidates fall outside the region.
    """
    data = _data_matrix(ens, marg)
    if grid is None and isinstance(ens, ParetoEnsemble):
        grid = ens.grid
    n, L = data.shape
    if n < MIN_ENSEMBLE:
        raise DesignError("insufficient Monte Carlo resolution")
    if n_samp < 1:
        raise DesignError("n_samp must be at least 1")
    observed = [int(i) for i in observed]
    eligible = np.zeros(L, dtype=bool)
    eligible[np.arange(L) if candidates is None else np.asarray(candidates, dtype=int)] = True
    eligible[observed] = False
    if eligible.sum() < n_samp:
        raise DesignError("grid has fewer free candidate cells than requested sites")
    I = reference_prob(data, None, r, u, region)
    scorer = _Scorer(data, r, u, grid)
    if grid is not None and observed:
        mind = grid.distances(np.arange(L), observed).min(axis=1)
    else:
        mind = np.full(L, np.inf)
    state = DesignState(grid, observed, [], I, np.full(L, np.nan), n_members=n)
    for _ in range(n_samp):
        R = np.abs(I - scorer.counts(state.sites) / n)
        R = np.where(eligible, R, np.nan)
        k = _pick(R, eligible, mind)
        state.chosen_sites.append(k)
        state.history.append((k, float(R[k])))
        if record_surfaces:
            state.surfaces.append(R)
        state.discrepancy = R
        eligible[k] = False
        if grid is not None:
            mind = np.minimum(mind, grid.distances(np.arange(L), [k])[:, 0])
    state.final_discrepancy = state.history[-1][1]
    return state


def design_discrepancy(data: np.ndarray, r: RiskFunctional, u: float, sites, I: float,
                       grid: Optional[SpatialGrid] = None) -> float:
    return abs(I - float(np.mean(subset_risk(r, data, sites, grid) >= u)))


def forward_backward_refine(state: DesignState, ens, marg, r: RiskFunctional, u: float,
                            max_sweeps: int = 10, region=None) -> DesignState:
    """Swap sweeps: drop one chosen site, re-add the best candidate, keep strict improvements.

    A swap is accepted only when the discrepancy drops by more than ``1/(2N)``,
    i.e. by at least one ensemble member.
    """
    if len(state.chosen_sites) < 2:
        raise DesignError("refinement needs at least two chosen sites")
    data = _data_matrix(ens, marg)
    n, L = data.shape
    grid = state.grid
    scorer = _Scorer(data, r, u, grid)
    I = state.reference_prob
    chosen = list(state.chosen_sites)
    fixed = set(state.observed_sites)
    cur = design_discrepancy(data, r, u, list(fixed) + chosen, I, grid)
    swaps = 0
    for _ in range(max_sweeps):
        improved = False
        for pos in range(len(chosen)):
            rest = chosen[:pos] + chosen[pos + 1:]
            base = list(state.observed_sites) + rest
            R = np.abs(I - scorer.counts(base) / n)
            eligible = np.ones(L, dtype=bool)
            eligible[list(fixed) + rest] = False
            R = np.where(eligible, R, np.inf)
            k = int(np.argmin(R))
            if k != chosen[pos] and R[k] < cur - 0.5 / n:
                log.debug("swap %d -> %d (%.5f -> %.5f)", chosen[pos], k, cur, R[k])
                chosen[pos] = k
                cur = float(R[k])
                swaps += 1
                improved = True
        if not improved:
            break
    return replace(state, chosen_sites=chosen, final_discrepancy=cur, swaps=swaps,
                   history=list(state.history), surfaces=list(state.surfaces))


def exhaustive_optimum(data: np.ndarray, r: RiskFunctional, u: float, size: int, I: float,
                       observed=(), grid: Optional[SpatialGrid] = None):
    """Best discrepancy over all ``size``-subsets of free cells (small grids only)."""
    L = data.shape[1]
    free = [k for k in range(L) if k not in set(observed)]
    if math.comb(len(free), size) > 200_000:
        raise DesignError("too many subsets for exhaustive search")
    best, arg = math.inf, None
    for combo in itertools.combinations(free, size):
        d = design_discrepancy(data, r, u, list(observed) + list(combo), I, grid)
        if d < best:
            best, arg = d, combo
    return best, list(arg)


# ------------------------------------------------------- counting identities

def coverage_counts(exceed: np.ndarray, sites: Sequence[int], full_mask: Optional[np.ndarray] = None) -> dict:
    """Integer counts behind the coverage decompositions of a site sequence.

    ``exceed`` is the (N, L) boolean exceedance matrix. Counts are taken over
    members with a full-region exceedance (``full_mask``, default: any
    exceedance). Returns the direct count together with the sum of marginal
    counts minus joint counts, and the sum of first-new-exceedance counts.
    """
    E = np.asarray(exceed, dtype=bool)
    mask = E.any(axis=1) if full_mask is None else np.asarray(full_mask, dtype=bool)
    E = E[mask]
    sites = list(sites)
    direct = int(E[:, sites].any(axis=1).sum())
    marginals = [int(E[:, s].sum()) for s in sites]
    joints, fresh = [], [marginals[0]]
    prev = E[:, sites[0]].copy()
    for s in sites[1:]:
        joints.append(int((E[:, s] & prev).sum()))
        fresh.append(int((E[:, s] & ~prev).sum()))
        prev |= E[:, s]
    return {
        "direct": direct,
        "marginal_minus_joint": sum(marginals) - sum(joints),
        "first_new": sum(fresh),
        "marginals": marginals,
        "joints": joints,
        "n_full": int(mask.sum()),
    }


def sequential_identity_holds(exceed: np.ndarray, sites: Sequence[int], full_mask=None) -> bool:
    """Check coverage(L) = coverage(L-1) + marginal(s_L) - joint(s_L, previous) on counts."""
    E = np.asarray(exceed, dtype=bool)
    mask = E.any(axis=1) if full_mask is None else np.asarray(full_mask, dtype=bool)
    E = E[mask]
    sites = list(sites)
    for m in range(2, len(sites) + 1):
        prev = E[:, sites[: m - 1]].any(axis=1)
        new = E[:, sites[m - 1]]
        lhs = int(E[:, sites[:m]].any(axis=1).sum())
        rhs = int(prev.sum()) + int(new.sum()) - int((new & prev).sum())
        if lhs != rhs:
            return False
    return True


# ------------------------------------------------ stationary 1-D experiments

@dataclass(frozen=True)
class ProcessConfig:
    """A stationary process used in the 1-D experiments.

    ``kind`` is ``"gaussian"`` (stationary Gaussian field with covariance
    ``sill - gamma``, conditioned on its maximum by rejection) or
    ``"r-pareto"`` (log-Gaussian generalized Pareto process with identity
    margins and tail index ``xi``).
    """

    name: str
    kind: str
    model: VariogramModel
    xi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "r-pareto"):
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.kind == "gaussian" and not self.model.is_bounded:
            raise ValueError("a stationary Gaussian process needs a bounded variogram")

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "model": self.model.to_dict(), "xi": self.xi}

    @classmethod
    def from_dict(cls, d: dict) -> "ProcessConfig":
        return cls(d["name"], d["kind"], VariogramModel.from_dict(d["model"]), float(d.get("xi", 1.0)))


def reference_processes(xi: float = 1.0) -> dict:
    """The four 1-D benchmark processes, keyed by name."""
    cfgs = [
        ProcessConfig("gaussian-strong", "gaussian", VariogramModel.bounded_exp(2.0, 1.5, 100.0)),
        ProcessConfig("gaussian-weak", "gaussian", VariogramModel.bounded_exp(2.0, 1.5, 1.0)),
        ProcessConfig("pareto-strong", "r-pareto", VariogramModel.bounded_exp(2.0, 1.5, 10.0), xi),
        ProcessConfig("pareto-weak", "r-pareto", VariogramModel.power(1.5, 2.5), xi),
    ]
    return {c.name: c for c in cfgs}


def experiment_grid(lo: float = -6.0, hi: float = 6.0, spacing: float = 0.1) -> SpatialGrid:
    return SpatialGrid.regular_1d(lo, hi, spacing)


def simulate_process(cfg: ProcessConfig, grid: SpatialGrid, u: float, n: int, seed: int,
                     threads: int = 1, max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> np.ndarray:
    """``n`` data-scale paths of ``cfg`` whose grid maximum reaches ``u``."""
    if cfg.kind == "gaussian":
        return simulate_gaussian_exceedances(cfg.model, grid, u, n, seed, max_attempts=max_attempts * n)
    ens = simulate_r_pareto(cfg.model, MarginalModel(1.0, 0.0, cfg.xi), RiskFunctional.supremum(), u,
                            grid, n, seed, max_attempts=max_attempts, threads=threads)
    return ens.samples


def _random_init(L: int, count: int, seed: int) -> list:
    rng = make_rng(seed, 7)
    return sorted(int(i) for i in rng.choice(L, size=count, replace=False))


def sequential_design_stationary(cfg: ProcessConfig, r: RiskFunctional, u: float, n_samp: int,
                                 init=(), n: int = 10_000, seed: int = 0,
                                 grid: Optional[SpatialGrid] = None, random_init: int = 0,
                                 fresh_per_step: bool = False, threads: int = 1) -> DesignState:
    """Simulate a stationary process and run the greedy design on it.

    ``init`` gives starting sites (grid indices); with ``random_init > 0``
    that many starting sites are drawn at random instead. Without either,
    the first site is the best singleton. ``fresh_per_step`` scores every
    step on a new ensemble, which is useful for studying Monte Carlo noise.
    """
    grid = experiment_grid() if grid is None else grid
    init = list(init)
    if random_init:
        if init:
            raise DesignError("give either init sites or random_init, not both")
        init = _random_init(grid.n, random_init, seed)
    if not fresh_per_step:
        data = simulate_process(cfg, grid, u, n, seed, threads)
        return sequential_design(data, None, r, u, n_samp, init, grid)
    state = None
    for step in range(n_samp):
        data = simulate_process(cfg, grid, u, n, seed + 1_000_003 * step, threads)
        prev = [] if state is None else state.chosen_sites
        one = sequential_design(data, None, r, u, 1, init + prev, grid)
        k, d = one.history[0]
        if state is None:
            state = replace(one, observed_sites=list(init), chosen_sites=[k])
        else:
            state.chosen_sites.append(k)
            state.history.append((k, d))
            state.surfaces.extend(one.surfaces)
            state.discrepancy = one.discrepancy
        state.final_discrepancy = d
    return state


def _batch_ci(values: np.ndarray, level: float = 0.95) -> tuple:
    lo, hi = np.nanquantile(values, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return np.nanmean(values, axis=0), lo, hi


@dataclass
class CurveTable:
    """Curve estimates with percentile confidence bands over batches."""

    process: str
    panel: str
    h: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def at(self, h: float) -> tuple:
        i = int(np.argmin(np.abs(self.h - h)))
        return float(self.estimate[i]), float(self.lower[i]), float(self.upper[i])


def _cells_in(grid: SpatialGrid, lo: float, hi: float) -> np.ndarray:
    x = grid.locations[:, 0]
    tol = 1e-9 * grid.cell_spacing
    return np.flatnonzero((x >= lo - tol) & (x <= hi + tol))


def concurrent_exceedance(exceed: np.ndarray, grid: SpatialGrid, hs: np.ndarray, width: float = 1.0) -> np.ndarray:
    """P(exceedance on [0, w] and on [h, h + w] | exceedance on [0, w]) for each ``h``."""
    base = exceed[:, _cells_in(grid, 0.0, width)].any(axis=1)
    nb = base.sum()
    out = np.full(len(hs), np.nan)
    if nb == 0:
        return out
    for i, h in enumerate(hs):
        other = exceed[:, _cells_in(grid, h, h + width)].any(axis=1)
        out[i] = (base & other).sum() / nb
    return out


def exclusive_exceedance(exceed: np.ndarray, grid: SpatialGrid, hs: np.ndarray, half: float = 0.5) -> np.ndarray:
    """P(exceedances fall only inside [h - half, h + half] | some exceedance) for each ``h``."""
    x = grid.locations[:, 0]
    any_ex = exceed.any(axis=1)
    n_any = any_ex.sum()
    out = np.full(len(hs), np.nan)
    if n_any == 0:
        return out
    order = np.argsort(x)
    ex = exceed[:, order]
    xs = x[order]
    first = xs[np.argmax(ex, axis=1)]
    last = xs[ex.shape[1] - 1 - np.argmax(ex[:, ::-1], axis=1)]
    tol = 1e-9 * grid.cell_spacing
    for i, h in enumerate(hs):
        inside = any_ex & (first >= h - half - tol) & (last <= h + half + tol)
        out[i] = inside.sum() / n_any
    return out


def boundary_effect_curves(configs, u: float = 1.0, n_batches: int = 100, batch_size: int = 1000,
                           seed: int = 0, grid: Optional[SpatialGrid] = None, left_h=None, right_h=None,
                           threads: int = 1) -> list:
    """Concurrent and exclusive exceedance curves for each process, with batch confidence bands.

    Returns a list of :class:`CurveTable`, two per process (panels
    ``"concurrent"`` and ``"exclusive"``).
    """
    grid = experiment_grid() if grid is None else grid
    lo, hi = grid.locations[:, 0].min(), grid.locations[:, 0].max()
    if left_h is None:
        left_h = np.round(np.arange(0.0, hi - 1.0 + 1e-9, grid.cell_spacing), 10)
    if right_h is None:
        right_h = np.round(np.arange(lo + 0.5, hi - 0.5 + 1e-9, grid.cell_spacing), 10)
    left_h, right_h = np.asarray(left_h, float), np.asarray(right_h, float)
    tables = []
    for j, cfg in enumerate(configs):
        data = simulate_process(cfg, grid, u, n_batches * batch_size, seed + 7919 * j, threads)
        exceed = data >= u
        left = np.empty((n_batches, len(left_h)))
        right = np.empty((n_batches, len(right_h)))
        for b in range(n_batches):
            e = exceed[b * batch_size:(b + 1) * batch_size]
            left[b] = concurrent_exceedance(e, grid, left_h)
            right[b] = exclusive_exceedance(e, grid, right_h)
        tables.append(CurveTable(cfg.name, "concurrent", left_h, *_batch_ci(left)))
        tables.append(CurveTable(cfg.name, "exclusive", right_h, *_batch_ci(right)))
    return tables


def extend_grid(grid: SpatialGrid, margin: float):
    """Raster grid covering ``grid`` plus every cell within ``margin`` of it.

    Returns the extended grid and the indices of the original cells in it.
    The original cells keep their boundary flags.
    """
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    h = grid.cell_spacing
    k = int(math.ceil(margin / h - 1e-9))
    if k == 0:
        return grid, np.arange(grid.n)
    locs = grid.locations
    offs = np.arange(-k, k + 1) * h
    shifts = np.stack(np.meshgrid(*([offs] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim)
    shifts = shifts[np.linalg.norm(shifts, axis=1) <= margin + 1e-9 * h]
    cand = (locs[:, None, :] + shifts[None, :, :]).reshape(-1, grid.dim)
    cand = np.unique(np.round(cand / h, 6), axis=0) * h
    dist, _ = grid._tree.query(cand)
    extra = cand[dist > 0.5 * h]
    new_locs = np.vstack([locs, extra])
    flags = np.concatenate([grid.boundary_flags, np.zeros(len(extra), dtype=bool)])
    return SpatialGrid(new_locs, h, flags), np.arange(grid.n)
