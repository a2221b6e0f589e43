"""Gaussian fields, log-Gaussian angular processes and generalized r-Pareto ensembles.

Pareto-scale samples are built as ``Y = R * W / r(W)`` where ``R`` is unit
Pareto and ``W`` lies on the unit L1 simplex. Drawing the conditioning
anchor of the log-Gaussian spectral function uniformly over the grid gives
``W`` the angular law tilted by the L1 norm; a thinning step with
probability ``r(W) / max r`` re-tilts it towards ``r``, so that ``Y`` follows
the exponent measure restricted to ``{r(y) >= 1}`` exactly.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import RiskFunctional, RiskKind, SpatialGrid
from .variogram import VariogramModel, variogram_matrix

log = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 10_000
CHUNK_SIZE = 2048
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8)


class SimulationError(RuntimeError):
    pass


class RejectionCapError(SimulationError):
    def __init__(self, attempts: int):
        super().__init__(
            f"acceptance probability too low; raise max_attempts or lower u "
            f"(a path needed more than {attempts} attempts)"
        )


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *stream)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class MarginalModel:
    """Location ``b``, scale ``a`` (scalars or per-location arrays) and tail index ``xi``."""

    a: object = 1.0
    b: object = 0.0
    xi: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if np.any(~(a > 0)):
            raise ValueError("scale a must be positive everywhere")
        if not np.all(np.isfinite(b)):
            raise ValueError("location b must be finite")
        if not math.isfinite(self.xi):
            raise ValueError("xi must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def constant_scale(self) -> bool:
        return self.a.ndim == 0 or bool(np.all(self.a == self.a.flat[0]))

    def data_scale(self, p_std):
        """Map standardized values ``p`` to ``a * p + b``."""
        return self.a * np.asarray(p_std, dtype=float) + self.b

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist(), "xi": self.xi}

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalModel":
        return cls(np.asarray(d["a"]), np.asarray(d["b"]), float(d["xi"]))


def pareto_to_standard(y, xi: float):
    """``(y**xi - 1) / xi``, with the logarithm at ``xi == 0``."""
    y = np.asarray(y, dtype=float)
    if xi == 0.0:
        return np.log(y)
    return np.expm1(xi * np.log(y)) / xi


def standard_to_pareto(p, xi: float):
    p = np.asarray(p, dtype=float)
    if xi == 0.0:
        return np.exp(p)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = xi * p
        return np.where(t > -1.0, np.exp(np.log1p(np.maximum(t, -1.0 + 1e-300)) / xi), 0.0 if xi > 0 else np.inf)


def standardize(y, a, b, xi: float):
    """Pareto-scale value ``y`` to data scale ``a * (y**xi - 1) / xi + b``."""
    return np.asarray(a, dtype=float) * pareto_to_standard(y, xi) + np.asarray(b, dtype=float)


def unstandardize(x, a, b, xi: float):
    """Inverse of :func:`standardize`; values outside the support map to 0 or inf."""
    return standard_to_pareto((np.asarray(x, dtype=float) - b) / a, xi)


def conditional_covariance(gamma: np.ndarray) -> np.ndarray:
    """Covariance of the Gaussian field pinned to zero at the first location."""
    g = np.asarray(gamma, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("variogram matrix must be square")
    if not np.allclose(g, g.T, rtol=1e-12, atol=1e-12) or np.any(np.diag(g) != 0):
        raise ValueError("variogram matrix must be symmetric with zero diagonal")
    col = g[:, 0]
    sigma = col[:, None] + col[None, :] - g
    sigma = 0.5 * (sigma + sigma.T)
    sigma[0, :] = 0.0
    sigma[:, 0] = 0.0
    if sigma.shape[0] > 1:
        ev = np.linalg.eigvalsh(sigma)
        if ev[0] < -1e-8 * max(ev[-1], 0.0) or (ev[-1] <= 0 and ev[0] < 0):
            raise ValueError("invalid variogram (not conditionally negative definite)")
    return sigma


def stationary_covariance(model: VariogramModel, grid: SpatialGrid) -> np.ndarray:
    """Covariance ``sill - gamma`` of the stationary field behind a bounded variogram."""
    if not model.is_bounded:
        raise ValueError("a stationary covariance needs a bounded variogram")
    return model.sill - variogram_matrix(model, grid)


def gaussian_factor(sigma: np.ndarray) -> np.ndarray:
    """Lower factor ``F`` with ``F @ F.T ~= sigma``; pinned (zero-variance) rows stay zero."""
    s = np.asarray(sigma, dtype=float)
    n = s.shape[0]
    free = np.flatnonzero(np.diag(s) > 0)
    factor = np.zeros_like(s)
    if free.size == 0:
        return factor
    block = s[np.ix_(free, free)]
    scale = float(np.max(np.diag(block)))
    for jitter in _JITTERS:
        try:
            chol = np.linalg.cholesky(block + jitter * scale * np.eye(free.size))
        except np.linalg.LinAlgError:
            continue
        if jitter:
            log.debug("Cholesky needed relative jitter %g", jitter)
        factor[np.ix_(free, free)] = chol
        return factor
    raise SimulationError(f"covariance factorization failed after diagonal jitter up to {_JITTERS[-1]:g}")


@dataclass(frozen=True)
class GaussianEnsemble:
    samples: np.ndarray
    seed: int
    grid: Optional[SpatialGrid] = None
    model: Optional[VariogramModel] = None


def simulate_gaussian(sigma: np.ndarray, n: int, seed: int, grid=None, model=None,
                      factor: Optional[np.ndarray] = None) -> GaussianEnsemble:
    """Draw ``n`` zero-mean Gaussian vectors with covariance ``sigma``."""
    if n < 1:
        raise ValueError("need at least one sample")
    f = gaussian_factor(sigma) if factor is None else factor
    rng = make_rng(seed, 0)
    z = rng.standard_normal((n, f.shape[0]))
    return GaussianEnsemble(z @ f.T, int(seed), grid, model)


class AngularSampler:
    """Reusable draws of the log-Gaussian angular process on a fixed grid.

    ``anchor="random"`` draws the conditioning location uniformly per sample;
    an integer pins it to that grid index.
    """

    def __init__(self, model: VariogramModel, grid: SpatialGrid, anchor="random"):
        self.model = model
        self.grid = grid
        self.gamma = variogram_matrix(model, grid)
        self.sigma = conditional_covariance(self.gamma)
        self.factor_t = np.ascontiguousarray(gaussian_factor(self.sigma).T)
        self.anchor = anchor

    @property
    def n_locations(self) -> int:
        return self.grid.n

    def log_spectral(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Logs of unnormalized spectral fields with unit mean at every location."""
        L = self.n_locations
        if L == 1:
            return np.zeros((n, 1))
        g = rng.standard_normal((n, L)) @ self.factor_t
        if self.anchor == "random":
            k = rng.integers(0, L, size=n)
        else:
            k = np.full(n, int(self.anchor))
        rows = np.arange(n)
        # increments relative to the anchor have variance 2 * gamma; drift is half of it
        return g - g[rows, k][:, None] - self.gamma[k]

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        logz = self.log_spectral(n, rng)
        logz -= logz.max(axis=1, keepdims=True)
        w = np.exp(logz)
        w /= w.sum(axis=1, keepdims=True)
        return w


def simulate_angular(model: VariogramModel, grid: SpatialGrid, n: int, seed: int,
                     anchor="random") -> np.ndarray:
    """``n`` angular samples on the unit L1 simplex, shape (n, L)."""
    return AngularSampler(model, grid, anchor).draw(n, make_rng(seed, 0))


def unit_pareto_from_uniform(u):
    return 1.0 / np.asarray(u, dtype=float)


def sample_unit_pareto(rng: np.random.Generator, size=None):
    # 1 - U lies in (0, 1]
    return unit_pareto_from_uniform(1.0 - rng.random(size))


def _pareto_threshold(marg: MarginalModel, r: RiskFunctional, u: float, n_locations: int) -> float:
    """Lower bound on the radial value ``R`` any accepted sample needs."""
    a, b, xi = marg.a, marg.b, marg.xi
    if r.kind is RiskKind.SUPREMUM:
        need = np.min(unstandardize(u, a, np.broadcast_to(b, (n_locations,)), xi))
    elif r.kind is RiskKind.SITE:
        a_s = a if a.ndim == 0 else a[r.site]
        b_s = b if b.ndim == 0 else b[r.site]
        need = float(unstandardize(u, a_s, b_s, xi))
    elif marg.constant_scale and xi <= 1.0:
        # Jensen: r(f(R theta)) <= f(R) for concave f and r(theta) = 1
        b_r = float(r(np.broadcast_to(b, (n_locations,))))
        need = float(unstandardize(u, a.flat[0], b_r, xi))
    else:
        need = 1.0
    return max(1.0, float(need))


@dataclass(frozen=True)
class ParetoEnsemble:
    """Accepted generalized r-Pareto paths on the standardized scale."""

    grid: SpatialGrid
    samples: np.ndarray
    xi: float
    risk: RiskFunctional
    u: float
    seed: int
    attempts: int
    model: Optional[VariogramModel] = None
    marginal: Optional[MarginalModel] = None
    max_attempts_used: int = 0

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def rejection_stats(self) -> dict:
        return {"accepted": self.n, "attempted": self.attempts, "max_attempts_per_path": self.max_attempts_used}

    def data_scale(self, marg: Optional[MarginalModel] = None) -> np.ndarray:
        m = marg if marg is not None else self.marginal
        return self.samples if m is None else m.data_scale(self.samples)


def _simulate_chunk(sampler: AngularSampler, marg: MarginalModel, r: RiskFunctional, u: float,
                    n: int, seed: int, chunk: int, max_attempts: int, r_min: float):
    rng = make_rng(seed, 1, chunk)
    L = sampler.n_locations
    c_tilt = r.sup_on_simplex(L)
    out = np.empty((n, L))
    filled = 0
    attempts_total = 0
    since_last = 0
    worst = 0
    rate = 0.5
    while filled < n:
        batch = int(min(max(64, 1.3 * (n - filled) / max(rate, 1e-4)), max(64, 4_000_000 // L)))
        w = sampler.draw(batch, rng)
        tilt_u = rng.random(batch)
        radial = r_min * sample_unit_pareto(rng, batch)
        rw = r(w)
        ok = tilt_u * c_tilt <= rw
        theta = w / rw[:, None]
        p = pareto_to_standard(radial[:, None] * theta, marg.xi)
        ok &= r(marg.data_scale(p)) >= u
        hits = np.flatnonzero(ok)
        rate = max(hits.size / batch, 1.0 / (4 * batch))
        prev = -1
        for h in hits:
            gap = since_last + (h - prev)
            if gap > max_attempts:
                raise RejectionCapError(max_attempts)
            worst = max(worst, gap)
            out[filled] = p[h]
            filled += 1
            since_last = 0
            prev = h
            if filled == n:
                attempts_total += h + 1
                break
        else:
            since_last += batch - 1 - prev
            attempts_total += batch
            if since_last > max_attempts:
                raise RejectionCapError(max_attempts)
    return out, attempts_total, worst


def simulate_r_pareto(model: VariogramModel, marg: MarginalModel, r: RiskFunctional, u: float,
                      grid: SpatialGrid, n: int, seed: int, max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                      threads: int = 1, chunk_size: int = CHUNK_SIZE) -> ParetoEnsemble:
    """Simulate ``n`` paths whose data-scale risk ``r(a P + b)`` reaches ``u``.

    Paths are produced in fixed-size chunks, each with its own random stream
    keyed by ``(seed, chunk)``, so the output does not depend on ``threads``.
    """
    if n < 1:
        raise ValueError("need at least one path")
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    sampler = AngularSampler(model, grid)
    r_min = _pareto_threshold(marg, r, u, grid.n)
    if not math.isfinite(r_min):
        raise RejectionCapError(max_attempts)
    sizes = [min(chunk_size, n - s) for s in range(0, n, chunk_size)]

    def work(i):
        return _simulate_chunk(sampler, marg, r, u, sizes[i], seed, i, max_attempts, r_min)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(i) for i in range(len(sizes))]
    samples = np.vstack([p[0] for p in parts])
    attempts = int(sum(p[1] for p in parts))
    worst = int(max(p[2] for p in parts))
    log.info("r-Pareto simulation: %d accepted out of %d attempts", n, attempts)
    return ParetoEnsemble(grid, samples, marg.xi, r, float(u), int(seed), attempts,
                          model, marg, worst)


def simulate_gaussian_exceedances(model: VariogramModel, grid: SpatialGrid, u: float, n: int,
                                  seed: int, max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> np.ndarray:
    """Stationary Gaussian paths conditioned on ``max(path) >= u`` by rejection."""
    factor_t = gaussian_factor(stationary_covariance(model, grid)).T
    rng = make_rng(seed, 2)
    out = []
    kept = 0
    drawn = 0
    while kept < n:
        z = rng.standard_normal((max(256, 2 * (n - kept)), grid.n)) @ factor_t
        drawn += z.shape[0]
        z = z[z.max(axis=1) >= u]
        out.append(z[: n - kept])
        kept += out[-1].shape[0]
        if kept == 0 and drawn > max_attempts:
            raise RejectionCapError(max_attempts)
    return np.vstack(out)
