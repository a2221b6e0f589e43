"""Semi-variogram models with geometric anisotropy, and their link to the extremogram."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .domain import SpatialGrid


class Family(str, Enum):
    STABLE_FRACTAL = "stable-fractal"
    POWER = "power"
    BOUNDED_EXP = "bounded-exponential"


@dataclass(frozen=True)
class AnisotropyParams:
    """Geometric anisotropy ``A = diag(1, kappa) @ R(delta)``.

    ``delta = 0`` is accepted as the isotropic-rotation flag value; any other
    angle has to lie in the open interval (0, pi/4).
    """

    kappa: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.delta != 0.0 and not (0.0 < self.delta < math.pi / 4):
            raise ValueError("delta must lie in (0, pi/4)")

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.delta), math.sin(self.delta)
        return np.array([[c, -s], [self.kappa * s, self.kappa * c]])

    @property
    def is_identity(self) -> bool:
        return self.kappa == 1.0 and self.delta == 0.0


def anisotropy_transform(a: AnisotropyParams, h) -> np.ndarray:
    """Apply the anisotropy matrix to lag vectors of shape (..., d); identity when d == 1."""
    h = np.asarray(h, dtype=float)
    if h.ndim == 0:
        return h
    if h.shape[-1] == 1:
        return h
    if h.shape[-1] != 2:
        raise ValueError("anisotropy is defined for 1-D and 2-D lags only")
    return h @ a.matrix.T


@dataclass(frozen=True)
class VariogramModel:
    family: Family
    alpha: float
    lam: float
    beta: Optional[float] = None
    sigma: Optional[float] = None
    anisotropy: AnisotropyParams = field(default_factory=AnisotropyParams)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (0 < self.alpha <= 2):
            raise ValueError("alpha must lie in (0, 2]")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.family is Family.STABLE_FRACTAL:
            if self.beta is None or not self.beta < 2:
                raise ValueError("stable-fractal model needs beta < 2")
            if self.beta == 0:
                raise ValueError("beta = 0 is the logarithmic limit, which is not supported")
        if self.family is Family.BOUNDED_EXP and (self.sigma is None or not self.sigma > 0):
            raise ValueError("bounded-exponential model needs a positive sill sigma")

    @classmethod
    def stable_fractal(cls, alpha, beta, lam, kappa=1.0, delta=0.0):
        return cls(Family.STABLE_FRACTAL, alpha, lam, beta=beta, anisotropy=AnisotropyParams(kappa, delta))

    @classmethod
    def power(cls, alpha, lam, kappa=1.0, delta=0.0):
        return cls(Family.POWER, alpha, lam, anisotropy=AnisotropyParams(kappa, delta))

    @classmethod
    def bounded_exp(cls, sigma, alpha, lam, kappa=1.0, delta=0.0):
        return cls(Family.BOUNDED_EXP, alpha, lam, sigma=sigma, anisotropy=AnisotropyParams(kappa, delta))

    @property
    def is_bounded(self) -> bool:
        if self.family is Family.BOUNDED_EXP:
            return True
        return self.family is Family.STABLE_FRACTAL and self.beta < 0

    @property
    def sill(self) -> float:
        """Supremum of the variogram; ``inf`` for unbounded models."""
        if self.family is Family.BOUNDED_EXP:
            return float(self.sigma)
        if self.is_bounded:
            return 1.0 / (1.0 - 2.0 ** (self.beta / self.alpha))
        return math.inf

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "alpha": self.alpha,
            "beta": self.beta,
            "lambda": self.lam,
            "sigma": self.sigma,
            "kappa": self.anisotropy.kappa,
            "delta": self.anisotropy.delta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariogramModel":
        return cls(
            Family(d["family"]),
            float(d["alpha"]),
            float(d["lambda"]),
            beta=None if d.get("beta") is None else float(d["beta"]),
            sigma=None if d.get("sigma") is None else float(d["sigma"]),
            anisotropy=AnisotropyParams(float(d.get("kappa", 1.0)), float(d.get("delta", 0.0))),
        )

    def with_params(self, **kw) -> "VariogramModel":
        aniso = kw.pop("anisotropy", None)
        kappa = kw.pop("kappa", None)
        delta = kw.pop("delta", None)
        if aniso is None:
            aniso = AnisotropyParams(
                self.anisotropy.kappa if kappa is None else kappa,
                self.anisotropy.delta if delta is None else delta,
            )
        return replace(self, anisotropy=aniso, **kw)

    def of_distance(self, r) -> np.ndarray:
        """Variogram as a function of the transformed lag norm ``||A h||``."""
        x = (np.asarray(r, dtype=float) / self.lam) ** self.alpha
        if self.family is Family.POWER:
            return x
        if self.family is Family.BOUNDED_EXP:
            return self.sigma * -np.expm1(-x)
        ratio = self.beta / self.alpha
        # log1p/expm1 keep small lags accurate
        with np.errstate(over="ignore"):
            return np.expm1(ratio * np.log1p(x)) / np.expm1(ratio * np.log(2.0))

    def __call__(self, h) -> np.ndarray:
        return variogram_eval(self, h)


def variogram_eval(m: VariogramModel, h) -> np.ndarray:
    """Evaluate ``gamma(h)`` for lag vectors of shape (..., d) or scalar 1-D lags."""
    h = np.asarray(h, dtype=float)
    if h.ndim == 0:
        r = np.abs(h)
    else:
        r = np.linalg.norm(anisotropy_transform(m.anisotropy, h), axis=-1)
    return m.of_distance(r)


def extremogram_from_variogram(gamma_val) -> np.ndarray:
    g = np.asarray(gamma_val, dtype=float)
    if np.any(g < 0) or np.any(np.isnan(g)):
        raise ValueError("variogram values must be nonnegative")
    out = 2.0 * ndtr(-np.sqrt(g / 2.0))
    return out if out.ndim else float(out)


def variogram_from_extremogram(rho) -> np.ndarray:
    r = np.asarray(rho, dtype=float)
    if np.any(~((r > 0) & (r <= 1))):
        raise ValueError("extremogram values must lie in (0, 1]")
    out = 2.0 * ndtri(r / 2.0) ** 2
    return out if out.ndim else float(out)


def variogram_matrix(m: VariogramModel, grid: SpatialGrid) -> np.ndarray:
    """Matrix of ``gamma(s_i - s_j)`` over all grid pairs."""
    lags = grid.pairwise_lags()
    if grid.dim == 1:
        g = m.of_distance(np.abs(lags[..., 0]))
    else:
        g = variogram_eval(m, lags)
    g = 0.5 * (g + g.T)
    np.fill_diagonal(g, 0.0)
    return g
