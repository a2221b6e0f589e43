"""Peaks-over-threshold estimation: GPD fits, covariate location model, extremogram and variogram fits.

Standard errors of the pooled fit come from the inverse Hessian of the
independence log-likelihood; temporal and spatial dependence between
exceedances makes them optimistic.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .domain import SpatialGrid
from .simulate import make_rng
from .variogram import Family, VariogramModel, extremogram_from_variogram

log = logging.getLogger(__name__)

_XI_BOUNDS = (-0.5, 2.0)
_XI_ZERO = 1e-7
# below this the closed forms lose precision and the exponential limit is exact to rounding
_XI_TINY = 1e-12


class FitError(RuntimeError):
    pass


# ---------------------------------------------------------------- GPD basics

def gpd_survival(x, sigma: float, xi: float):
    """Survival function ``(1 + xi x / sigma)_+^(-1/xi)``; exponential when ``xi == 0``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    if abs(xi) < _XI_TINY:
        out = np.exp(-x / sigma)
    else:
        t = xi * x / sigma
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(t > -1.0, np.exp(-np.log1p(np.maximum(t, -1.0 + 1e-300)) / xi), 0.0)
    return out if out.ndim else float(out)


def gpd_isf(p, sigma: float, xi: float):
    """Inverse survival: the excess exceeded with probability ``p``."""
    p = np.asarray(p, dtype=float)
    if abs(xi) < _XI_TINY:
        out = -sigma * np.log(p)
    else:
        out = sigma * np.expm1(-xi * np.log(p)) / xi
    return out if out.ndim else float(out)


def gpd_quantile(p, sigma: float, xi: float):
    """Quantile function (inverse CDF)."""
    return gpd_isf(1.0 - np.asarray(p, dtype=float), sigma, xi)


def gpd_sample(rng: np.random.Generator, n: int, sigma: float, xi: float) -> np.ndarray:
    return gpd_isf(1.0 - rng.random(n), sigma, xi)


def gpd_loglik(x, sigma: float, xi: float) -> float:
    x = np.asarray(x, dtype=float)
    if sigma <= 0:
        return -math.inf
    if abs(xi) < _XI_ZERO:
        return float(-x.size * math.log(sigma) - x.sum() / sigma)
    t = xi * x / sigma
    if np.any(t <= -1.0):
        return -math.inf
    return float(-x.size * math.log(sigma) - (1.0 + 1.0 / xi) * np.log1p(t).sum())


def gpd_score(x, sigma: float, xi: float) -> np.ndarray:
    """Gradient of :func:`gpd_loglik` with respect to ``(sigma, xi)``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if abs(xi) < _XI_ZERO:
        t = x / sigma
        return np.array([-n / sigma + x.sum() / sigma ** 2, float(np.sum(0.5 * t ** 2 - t))])
    denom = sigma + xi * x
    d_sigma = -n / sigma + (1.0 + xi) / sigma * np.sum(x / denom)
    d_xi = np.sum(np.log1p(xi * x / sigma) / xi ** 2 - (1.0 + 1.0 / xi) * x / denom)
    return np.array([d_sigma, float(d_xi)])


def _observed_information(x, sigma, xi) -> np.ndarray:
    h = np.array([1e-6 * max(sigma, 1e-3), 1e-6])
    info = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h[k]
        # steps can leave the support at the boundary; the SE is then nan
        with np.errstate(invalid="ignore", divide="ignore"):
            up = gpd_score(x, sigma + e[0], xi + e[1])
            dn = gpd_score(x, sigma - e[0], xi - e[1])
        info[:, k] = -(up - dn) / (2 * h[k])
    return 0.5 * (info + info.T)


@dataclass(frozen=True)
class GpdFit:
    sigma_hat: float
    xi_hat: float
    standard_errors: tuple
    n_exceedances: int
    threshold: float = 0.0
    loglik: float = float("nan")
    at_bound: bool = False

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma_hat,
            "xi": self.xi_hat,
            "se_sigma": self.standard_errors[0],
            "se_xi": self.standard_errors[1],
            "n_exceedances": self.n_exceedances,
            "threshold": self.threshold,
            "loglik": self.loglik,
            "at_bound": self.at_bound,
        }


def _mle(x: np.ndarray):
    xmax = float(x.max())
    mean, var = float(x.mean()), float(x.var())

    def nll(theta):
        sigma, xi = math.exp(theta[0]), theta[1]
        ll = gpd_loglik(x, sigma, xi)
        if not math.isfinite(ll):
            # push back towards the feasible region sigma > -xi * xmax
            return 1e300, np.array([-1.0, -1.0])
        g = gpd_score(x, sigma, xi)
        return -ll, -np.array([g[0] * sigma, g[1]])

    # keeps the optimizer away from overflow on small or odd samples
    log_sigma_bounds = (math.log(xmax) - 25.0, math.log(xmax) + 25.0)
    xi_mom = float(np.clip(0.5 * (1.0 - mean ** 2 / var), -0.4, 1.5)) if var > 0 else 0.1
    starts = [xi_mom, 0.1, -0.2, 0.5, 1.0]
    best = None
    for xi0 in starts:
        sigma0 = max(mean * (1.0 - xi0), 1e-3 * mean)
        if xi0 < 0:
            sigma0 = max(sigma0, -xi0 * xmax * 1.05)
        t0 = float(np.clip(math.log(sigma0), *log_sigma_bounds))
        res = optimize.minimize(nll, [t0, xi0], jac=True, method="L-BFGS-B",
                                bounds=[log_sigma_bounds, _XI_BOUNDS],
                                options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 2000})
        if not np.isfinite(res.fun) or res.fun >= 1e299:
            continue
        if best is None or res.fun < best.fun:
            best = res
    return best


def _newton_polish(x, sigma, xi, steps=5):
    for _ in range(steps):
        g = gpd_score(x, sigma, xi)
        info = _observed_information(x, sigma, xi)
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            break
        s_new, x_new = sigma + step[0], xi + step[1]
        if not (s_new > 0 and _XI_BOUNDS[0] < x_new < _XI_BOUNDS[1]):
            break
        if gpd_loglik(x, s_new, x_new) < gpd_loglik(x, sigma, xi) - 1e-9:
            break
        sigma, xi = s_new, x_new
    return sigma, xi


def gpd_fit_mle(excesses, threshold: float = 0.0, min_n: int = 30) -> GpdFit:
    """Maximum likelihood GPD fit with ``xi`` restricted to (-0.5, 2)."""
    x = np.asarray(excesses, dtype=float)
    x = x[~np.isnan(x)]
    if x.size < min_n:
        raise FitError(f"need at least {min_n} excesses, got {x.size}")
    if np.any(x < 0):
        raise FitError("excesses must be nonnegative")
    if np.ptp(x) == 0:
        raise FitError("degenerate sample: all excesses are equal")
    if x.max() < 1e-200:
        raise FitError("degenerate sample: excesses are numerically zero")
    res = _mle(x)
    if res is None:
        raise FitError("GPD likelihood maximization failed from every start")
    sigma, xi = math.exp(res.x[0]), float(res.x[1])
    at_bound = min(abs(xi - _XI_BOUNDS[0]), abs(xi - _XI_BOUNDS[1])) < 1e-6
    if not at_bound:
        sigma, xi = _newton_polish(x, sigma, xi)
    info = _observed_information(x, sigma, xi)
    try:
        cov = np.linalg.inv(info)
        se = tuple(float(v) for v in np.sqrt(np.clip(np.diag(cov), 0, None)))
    except np.linalg.LinAlgError:
        se = (float("nan"), float("nan"))
    return GpdFit(sigma, xi, se, int(x.size), float(threshold), gpd_loglik(x, sigma, xi), at_bound)


@dataclass(frozen=True)
class PooledFit:
    a_hat: float
    xi_hat: float
    standard_errors: tuple
    n_stations: int
    n_exceedances: int
    loglik: float

    def to_dict(self) -> dict:
        return {
            "a": self.a_hat,
            "xi": self.xi_hat,
            "se_a": self.standard_errors[0],
            "se_xi": self.standard_errors[1],
            "n_stations": self.n_stations,
            "n_exceedances": self.n_exceedances,
            "loglik": self.loglik,
        }


def pooled_loglik(excess_sets, a: float, xi: float) -> float:
    return float(sum(gpd_loglik(np.asarray(e, dtype=float), a, xi) for e in excess_sets))


def fit_scale_shape_pooled(excess_sets: Sequence, min_total: int = 100) -> PooledFit:
    """Common scale and shape for all stations under the independence likelihood."""
    sets = [np.asarray(e, dtype=float) for e in excess_sets]
    sets = [e[~np.isnan(e)] for e in sets]
    total = sum(e.size for e in sets)
    if total < min_total:
        raise FitError(f"need at least {min_total} exceedances in total, got {total}")
    # a sum of per-station likelihoods with shared parameters is the likelihood of the union
    fit = gpd_fit_mle(np.concatenate(sets), min_n=min_total)
    return PooledFit(fit.sigma_hat, fit.xi_hat, fit.standard_errors, len(sets), total,
                     pooled_loglik(sets, fit.sigma_hat, fit.xi_hat))


# ---------------------------------------------------------- location model

@dataclass(frozen=True)
class LocationModelFit:
    b1: float
    b2: float
    standard_errors: tuple
    covariate_name: str = "mean"
    residual_sd: float = 0.0

    def __call__(self, y):
        return self.b1 + self.b2 * np.asarray(y, dtype=float)

    def to_dict(self) -> dict:
        return {"b1": self.b1, "b2": self.b2, "se_b1": self.standard_errors[0],
                "se_b2": self.standard_errors[1], "covariate": self.covariate_name,
                "residual_sd": self.residual_sd}


def fit_location_covariate(station_quantiles, covariate, covariate_name: str = "mean") -> LocationModelFit:
    """Ordinary least squares of per-station quantiles on a covariate."""
    q = np.asarray(station_quantiles, dtype=float)
    y = np.asarray(covariate, dtype=float)
    if q.shape != y.shape:
        raise ValueError("one covariate value per station is required")
    if q.size < 3:
        raise FitError("need at least 3 stations")
    if np.ptp(y) == 0:
        raise FitError("covariate has zero variance")
    X = np.column_stack([np.ones_like(y), y])
    coef, *_ = np.linalg.lstsq(X, q, rcond=None)
    resid = q - X @ coef
    dof = q.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    se = tuple(float(v) for v in np.sqrt(np.clip(np.diag(cov), 0, None)))
    return LocationModelFit(float(coef[0]), float(coef[1]), se, covariate_name, math.sqrt(s2))


# -------------------------------------------------------------- extremogram

@dataclass(frozen=True)
class EmpiricalExtremogram:
    """Pooled extremogram estimates per (lag bin, direction sector).

    ``rho_hat``, ``pair_counts``, ``mean_lag`` have shape (n_bins, n_sectors);
    ``lag_vectors`` holds a representative lag vector per cell, shape
    (n_bins, n_sectors, d). Cells with fewer pairs than ``min_pairs`` or no
    marginal exceedance are flagged in ``reliable``.
    """

    lag_bins: np.ndarray
    rho_hat: np.ndarray
    pair_counts: np.ndarray
    mean_lag: np.ndarray
    lag_vectors: np.ndarray
    reliable: np.ndarray
    q: float = 0.995

    @property
    def n_sectors(self) -> int:
        return self.rho_hat.shape[1]

    def cells(self):
        """Iterate ``(bin, sector)`` indices of reliable cells."""
        return list(zip(*np.nonzero(self.reliable)))

    def rows(self):
        for b, s in itertools.product(range(self.rho_hat.shape[0]), range(self.n_sectors)):
            yield {
                "lag": float(self.mean_lag[b, s]) if self.pair_counts[b, s] else
                float(0.5 * (self.lag_bins[b] + self.lag_bins[b + 1])),
                "sector": s,
                "rho": float(self.rho_hat[b, s]),
                "pairs": int(self.pair_counts[b, s]),
                "reliable": bool(self.reliable[b, s]),
            }


def default_lag_bins(grid: SpatialGrid, max_lag: Optional[float] = None) -> np.ndarray:
    h = grid.cell_spacing
    if max_lag is None:
        ext = np.ptp(grid.locations, axis=0)
        max_lag = 0.5 * float(np.sqrt((ext ** 2).sum()))
    n = max(1, int(math.floor(max_lag / h + 0.5)))
    return h * (np.arange(n + 1) + 0.5)


def _sector_of(lags: np.ndarray, n_sectors: int) -> np.ndarray:
    if n_sectors == 1 or lags.shape[-1] == 1:
        return np.zeros(lags.shape[:-1], dtype=int)
    ang = np.mod(np.arctan2(lags[..., 1], lags[..., 0]), np.pi)
    width = np.pi / n_sectors
    return np.floor(np.mod(ang + 0.5 * width, np.pi) / width).astype(int) % n_sectors


def sector_direction(sector: int, n_sectors: int, d: int) -> np.ndarray:
    if d == 1:
        return np.array([1.0])
    ang = sector * np.pi / n_sectors
    return np.array([math.cos(ang), math.sin(ang)])


def empirical_extremogram(stack, grid: SpatialGrid, q: float = 0.995, lag_bins=None,
                          sectors: Optional[int] = None, min_pairs: int = 10) -> EmpiricalExtremogram:
    """Ratio of joint to marginal exceedance counts above per-location ``q``-quantiles.

    Every ordered pair ``(s, s + h)`` contributes its joint count to the
    numerator and the exceedance count at ``s`` to the denominator of the
    (lag bin, sector) cell it falls into. Sectors are axial, so ``h`` and
    ``-h`` always share a cell.
    """
    X = np.asarray(stack, dtype=float)
    if X.ndim != 2 or X.shape[1] != grid.n:
        raise ValueError("stack must have shape (time, n_locations)")
    if X.shape[0] < 2:
        raise ValueError("need at least two time slices")
    if not 0.5 < q < 1:
        raise ValueError("q must lie in (0.5, 1)")
    if sectors is None:
        sectors = 4 if grid.dim == 2 else 1
    bins = default_lag_bins(grid) if lag_bins is None else np.asarray(lag_bins, dtype=float)
    thr = np.nanquantile(X, q, axis=0)
    E = (X >= thr).astype(float)
    E[np.isnan(X)] = 0.0
    joint = E.T @ E
    marg = E.sum(axis=0)

    lags = grid.pairwise_lags()
    i, j = np.nonzero(~np.eye(grid.n, dtype=bool))
    lag = lags[j, i]  # s_j - s_i
    dist = np.sqrt((lag ** 2).sum(-1))
    b = np.searchsorted(bins, dist, side="right") - 1
    keep = (b >= 0) & (b < bins.size - 1)
    i, j, lag, dist, b = i[keep], j[keep], lag[keep], dist[keep], b[keep]
    s = _sector_of(lag, sectors)
    nb = bins.size - 1
    cell = b * sectors + s
    size = nb * sectors
    num = np.bincount(cell, weights=joint[i, j], minlength=size)
    den = np.bincount(cell, weights=marg[i], minlength=size)
    npairs = np.bincount(cell, minlength=size) // 2
    dsum = np.bincount(cell, weights=dist, minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(den > 0, num / den, np.nan)
        mlag = np.where(npairs > 0, dsum / np.maximum(2 * npairs, 1), np.nan)
    rho = rho.reshape(nb, sectors)
    mlag = mlag.reshape(nb, sectors)
    npairs = npairs.reshape(nb, sectors)
    reliable = (npairs >= min_pairs) & ~np.isnan(rho)
    vecs = np.zeros((nb, sectors, grid.dim))
    for k in range(sectors):
        d = sector_direction(k, sectors, grid.dim)
        vecs[:, k, :] = np.nan_to_num(mlag[:, k])[:, None] * d[None, :]
    return EmpiricalExtremogram(bins, rho, npairs, mlag, vecs, reliable, q)


def model_extremogram(model: VariogramModel, lag_vectors) -> np.ndarray:
    return extremogram_from_variogram(np.asarray(model(lag_vectors), dtype=float))


# --------------------------------------------------------- variogram fitting

def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-t))


def _logit(p):
    return math.log(p / (1.0 - p))


class _Param:
    """Unconstrained parametrization of a variogram family."""

    def __init__(self, family: Family, dim: int, anisotropic: bool):
        self.family = family
        self.aniso = anisotropic and dim == 2
        names = ["alpha", "lam"]
        if family is Family.STABLE_FRACTAL:
            names.append("beta")
        if family is Family.BOUNDED_EXP:
            names.append("sigma")
        if self.aniso:
            names += ["kappa", "delta"]
        self.names = names

    def to_model(self, t) -> VariogramModel:
        p = dict(zip(self.names, t))
        alpha = 2.0 * float(_sigmoid(p["alpha"]))
        alpha = min(max(alpha, 1e-6), 2.0)
        lam = math.exp(float(np.clip(p["lam"], -30, 30)))
        kappa = math.exp(float(np.clip(p.get("kappa", 0.0), -10, 10)))
        delta = (math.pi / 4) * float(_sigmoid(p["delta"])) if "delta" in p else 0.0
        if "delta" in p:
            delta = min(max(delta, 1e-12), math.pi / 4 - 1e-12)
        kw = {}
        if self.family is Family.STABLE_FRACTAL:
            beta = 2.0 - math.exp(float(np.clip(p["beta"], -30, 30)))
            kw["beta"] = beta if beta != 0 else 1e-12
        if self.family is Family.BOUNDED_EXP:
            kw["sigma"] = math.exp(float(np.clip(p["sigma"], -30, 30)))
        return VariogramModel(self.family, alpha, lam, anisotropy=_aniso(kappa, delta), **kw)

    def from_model(self, m: VariogramModel) -> np.ndarray:
        out = {"alpha": _logit(min(max(m.alpha / 2, 1e-9), 1 - 1e-9)), "lam": math.log(m.lam)}
        if "beta" in self.names:
            out["beta"] = math.log(2.0 - m.beta)
        if "sigma" in self.names:
            out["sigma"] = math.log(m.sigma)
        if self.aniso:
            out["kappa"] = math.log(m.anisotropy.kappa)
            frac = min(max(m.anisotropy.delta / (math.pi / 4), 1e-6), 1 - 1e-6)
            out["delta"] = _logit(frac)
        return np.array([out[n] for n in self.names])


def _aniso(kappa, delta):
    from .variogram import AnisotropyParams
    return AnisotropyParams(kappa, delta)


@dataclass(frozen=True)
class VariogramFit:
    model: VariogramModel
    objective: float
    at_bound: bool
    n_cells: int

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "objective": self.objective,
                "at_bound": self.at_bound, "n_cells": self.n_cells}


def _start_lattice(param: _Param, scale: float, n_starts: int, seed: int):
    alphas = [0.5, 1.0, 1.5]
    lams = [0.3 * scale, scale, 3.0 * scale]
    betas = [-1.0, 0.5, 1.5]
    sigmas = [1.0, 2.0, 5.0]
    kappas = [0.7, 1.0, 1.4]
    deltas = [0.2, 0.5]
    axes = {"alpha": alphas, "lam": lams, "beta": betas, "sigma": sigmas, "kappa": kappas, "delta": deltas}
    lattice = list(itertools.product(*[axes[n] for n in param.names]))
    rng = make_rng(seed, 7)
    order = rng.permutation(len(lattice))[:n_starts]
    starts = []
    for k in order:
        d = dict(zip(param.names, lattice[k]))
        t = {"alpha": _logit(d["alpha"] / 2), "lam": math.log(d["lam"])}
        if "beta" in d:
            t["beta"] = math.log(2 - d["beta"])
        if "sigma" in d:
            t["sigma"] = math.log(d["sigma"])
        if "kappa" in d:
            t["kappa"] = math.log(d["kappa"])
            t["delta"] = _logit(d["delta"] / (math.pi / 4))
        starts.append(np.array([t[n] for n in param.names]))
    return starts


def fit_variogram_to_extremogram(emp: EmpiricalExtremogram, family=Family.STABLE_FRACTAL,
                                 anisotropic: bool = True, n_starts: int = 20, seed: int = 0,
                                 min_cells: int = 4) -> VariogramFit:
    """Weighted least squares between modelled and empirical extremogram.

    Nelder-Mead runs from ``n_starts`` points of a coarse parameter lattice;
    the best candidates are polished with a trust-region least-squares solve.
    """
    family = Family(family)
    cells = emp.cells()
    if len(cells) < min_cells:
        raise FitError(f"need at least {min_cells} reliable extremogram cells, got {len(cells)}")
    bi, si = np.array([c[0] for c in cells]), np.array([c[1] for c in cells])
    lags = emp.lag_vectors[bi, si]
    target = emp.rho_hat[bi, si]
    w = emp.pair_counts[bi, si].astype(float)
    sw = np.sqrt(w / w.sum())
    dim = lags.shape[-1]
    param = _Param(family, dim, anisotropic)
    scale = float(np.median(emp.mean_lag[bi, si]))

    def resid(t):
        try:
            m = param.to_model(t)
            with np.errstate(all="ignore"):
                r = sw * (model_extremogram(m, lags) - target)
        except (ValueError, OverflowError):
            return np.full(target.size, 1e3)
        return np.where(np.isfinite(r), r, 1e3)

    def obj(t):
        r = resid(t)
        return float(r @ r)

    results = []
    for t0 in _start_lattice(param, scale, n_starts, seed):
        res = optimize.minimize(obj, t0, method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": 1e-14, "maxiter": 4000 * len(t0),
                                         "maxfev": 6000 * len(t0)})
        results.append((res.fun, res.x))
    results.sort(key=lambda r: r[0])
    best_val, best_t = results[0]
    for _, t0 in results[:3]:
        ls = optimize.least_squares(resid, t0, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                    max_nfev=5000)
        val = obj(ls.x)
        if val < best_val:
            best_val, best_t = val, ls.x
    model = param.to_model(best_t)
    at_bound = bool(np.any(np.abs(best_t) > 12))
    if at_bound:
        warnings.warn("variogram fit ended near a parameter bound", RuntimeWarning)
    return VariogramFit(model, best_val, at_bound, len(cells))


# ------------------------------------------------------------------- QQ data

def qq_plot_data(fit: GpdFit, excesses, n_boot: int = 200, seed: int = 0) -> np.ndarray:
    """QQ table with pointwise parametric-bootstrap bands.

    Columns: empirical quantile, model quantile, lower band, upper band, at
    plotting positions ``i / (n + 1)``. Each bootstrap sample is refitted and
    its order statistics are mapped through the refitted CDF and back through
    the original fit, so the bands include estimation uncertainty.
    """
    if n_boot < 200:
        raise ValueError("n_boot must be at least 200")
    x = np.sort(np.asarray(excesses, dtype=float))
    n = x.size
    pp = np.arange(1, n + 1) / (n + 1)
    model_q = gpd_quantile(pp, fit.sigma_hat, fit.xi_hat)
    rng = make_rng(seed, 11)
    boot = np.empty((n_boot, n))
    k = 0
    tries = 0
    while k < n_boot:
        tries += 1
        if tries > 5 * n_boot:
            raise FitError("bootstrap refits failed too often")
        xs = np.sort(gpd_sample(rng, n, fit.sigma_hat, fit.xi_hat))
        try:
            f = gpd_fit_mle(xs, min_n=min(30, n))
        except FitError:
            continue
        surv = gpd_survival(xs, f.sigma_hat, f.xi_hat)
        surv = np.clip(surv, 1e-300, 1.0)
        boot[k] = gpd_isf(surv, fit.sigma_hat, fit.xi_hat)
        k += 1
    lo, hi = np.quantile(boot, [0.025, 0.975], axis=0)
    return np.column_stack([x, model_q, lo, hi])
