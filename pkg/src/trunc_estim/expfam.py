"""
Canonical exponential families used throughout the package.

Two families are supported, both written as ``h(x) exp(theta . t(x) - A(theta))``:

* ``gaussian``: full-covariance normal on R^d with statistic
  ``t(x) = [x, -(x x^T) flattened row-major]`` and natural parameter
  ``theta = (Sigma^{-1} mu, Sigma^{-1} / 2)`` (length ``d + d*d``),
  carrier ``h(x) = (2 pi)^{-d/2}``.
* ``exponential``: product of exponentials on [0, inf)^d with ``t(x) = x`` and
  ``theta < 0`` componentwise (rate ``-theta``), carrier ``h = 1``.

Matrix blocks are always flattened row-major.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from ._seeding import as_rng
from .errors import DegenerateMoments, DimensionError, InvalidParameters

GAUSSIAN = "gaussian"
EXPONENTIAL = "exponential"
_LOG_2PI = math.log(2.0 * math.pi)
_PD_REL_TOL = 1e-12


@dataclass(frozen=True)
class FamilyKind:
    family: str
    d: int

    def __post_init__(self):
        if self.family not in (GAUSSIAN, EXPONENTIAL):
            raise InvalidParameters(f"unknown family {self.family!r}")
        if int(self.d) < 1:
            raise InvalidParameters("dimension d must be >= 1")
        object.__setattr__(self, "d", int(self.d))

    @classmethod
    def gaussian(cls, d: int) -> "FamilyKind":
        return cls(GAUSSIAN, d)

    @classmethod
    def exponential(cls, d: int) -> "FamilyKind":
        return cls(EXPONENTIAL, d)

    @property
    def m(self) -> int:
        """Length of the natural-parameter vector."""
        return self.d + self.d * self.d if self.family == GAUSSIAN else self.d

    @property
    def degree(self) -> int:
        """Polynomial degree of the sufficient statistic."""
        return 2 if self.family == GAUSSIAN else 1


def checked_cholesky(mat: np.ndarray, what: str = "matrix",
                     exc=InvalidParameters) -> np.ndarray:
    """Lower Cholesky factor, rejecting matrices that are not safely PD.

    The smallest pivot ``L_ii^2`` must exceed ``1e-12 * trace / d``.
    """
    mat = np.asarray(mat, dtype=float)
    d = mat.shape[0]
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise exc(f"{what} is not positive definite") from None
    scale = np.trace(mat) / d
    if not np.all(np.isfinite(chol)) or scale <= 0 or np.min(np.diag(chol)) ** 2 <= _PD_REL_TOL * scale:
        raise exc(f"{what} is not positive definite")
    return chol


def _sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


class NaturalParams:
    """Immutable natural parameter of a supported family.

    The quadratic block of a Gaussian parameter is symmetrized on
    construction; derived quantities (precision, covariance, mean) are
    computed once and cached.
    """

    __slots__ = ("kind", "theta", "_cache")

    def __init__(self, kind: FamilyKind, theta):
        theta = np.array(theta, dtype=float).reshape(-1)
        if theta.size != kind.m:
            raise DimensionError(f"expected {kind.m} natural parameters for {kind}, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise InvalidParameters("natural parameters must be finite")
        cache = {}
        if kind.family == GAUSSIAN:
            d = kind.d
            block = _sym(theta[d:].reshape(d, d))
            theta[d:] = block.reshape(-1)
            precision = 2.0 * block
            cache["chol_prec"] = checked_cholesky(precision, "precision block")
        elif np.any(theta >= 0):
            raise InvalidParameters("exponential natural parameters must be strictly negative")
        theta.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "_cache", cache)

    def __setattr__(self, name, value):
        raise AttributeError("NaturalParams is immutable")

    def __repr__(self):
        return f"NaturalParams({self.kind.family}, d={self.kind.d}, theta={self.theta.tolist()})"

    def __eq__(self, other):
        return (isinstance(other, NaturalParams) and self.kind == other.kind
                and np.array_equal(self.theta, other.theta))

    def __hash__(self):
        return hash((self.kind, self.theta.tobytes()))

    @property
    def d(self) -> int:
        return self.kind.d

    @property
    def family(self) -> str:
        return self.kind.family

    # -- Gaussian views -------------------------------------------------
    @property
    def linear(self) -> np.ndarray:
        return self.theta[: self.d] if self.family == GAUSSIAN else self.theta

    @property
    def quadratic(self) -> np.ndarray:
        d = self.d
        return self.theta[d:].reshape(d, d)

    @property
    def precision(self) -> np.ndarray:
        return 2.0 * self.quadratic

    @property
    def cov(self) -> np.ndarray:
        if "cov" not in self._cache:
            if self.family == GAUSSIAN:
                chol = self._cache["chol_prec"]
                inv_chol = np.linalg.inv(chol)
                self._cache["cov"] = _sym(inv_chol.T @ inv_chol)
            else:
                self._cache["cov"] = np.diag(1.0 / self.theta ** 2)
        return self._cache["cov"]

    @property
    def mean(self) -> np.ndarray:
        if "mean" not in self._cache:
            if self.family == GAUSSIAN:
                self._cache["mean"] = self.cov @ self.linear
            else:
                self._cache["mean"] = -1.0 / self.theta
        return self._cache["mean"]

    @property
    def cov_chol(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance (Gaussian only)."""
        if "cov_chol" not in self._cache:
            self._cache["cov_chol"] = checked_cholesky(self.cov, "covariance")
        return self._cache["cov_chol"]

    # -- constructors / serialization ----------------------------------
    @classmethod
    def gaussian(cls, mu, sigma) -> "NaturalParams":
        return mean_cov_to_params(MeanCov(mu, sigma))

    @classmethod
    def exponential(cls, theta) -> "NaturalParams":
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return cls(FamilyKind.exponential(theta.size), theta)

    def to_dict(self) -> dict:
        return {"family": self.family, "d": self.d, "theta": [float(v) for v in self.theta]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "NaturalParams":
        return cls(FamilyKind(obj["family"], int(obj["d"])), obj["theta"])

    @classmethod
    def from_json(cls, text: str) -> "NaturalParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class MeanCov:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (mu.size, mu.size):
            raise DimensionError("sigma must be d x d with d = len(mu)")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


def mean_cov_to_params(mc: MeanCov) -> NaturalParams:
    d = mc.mu.size
    sigma = _sym(mc.sigma)
    chol = checked_cholesky(sigma, "covariance")
    inv_chol = np.linalg.inv(chol)
    precision = _sym(inv_chol.T @ inv_chol)
    theta = np.concatenate([precision @ mc.mu, 0.5 * precision.reshape(-1)])
    return NaturalParams(FamilyKind.gaussian(d), theta)


def params_to_mean_cov(p: NaturalParams) -> MeanCov:
    if p.family != GAUSSIAN:
        raise InvalidParameters("mean/covariance view is only defined for Gaussians")
    return MeanCov(p.mean.copy(), p.cov.copy())


def _as_points(kind: FamilyKind, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x = x.reshape(1, -1) if single else x
    if x.shape[1] != kind.d:
        raise DimensionError(f"points have dimension {x.shape[1]}, family has d={kind.d}")
    return x, single


def suff_stats(kind: FamilyKind, x) -> np.ndarray:
    """Sufficient statistic of one point (shape ``(m,)``) or of rows ``(n, m)``."""
    pts, single = _as_points(kind, x)
    if kind.family == GAUSSIAN:
        outer = -(pts[:, :, None] * pts[:, None, :]).reshape(len(pts), -1)
        out = np.concatenate([pts, outer], axis=1)
    else:
        out = pts.copy()
    return out[0] if single else out


def log_partition(p: NaturalParams) -> float:
    if p.family == GAUSSIAN:
        chol = p._cache["chol_prec"]
        # A = 1/2 mu' Sigma^-1 mu + 1/2 log det Sigma, with Sigma^-1 mu = theta_1
        return float(0.5 * p.linear @ p.mean - np.sum(np.log(np.diag(chol))))
    return float(np.sum(np.log(-1.0 / p.theta)))


def mean_suff_stats(p: NaturalParams) -> np.ndarray:
    """Expected sufficient statistic, i.e. the gradient of the log-partition."""
    if p.family == GAUSSIAN:
        mu = p.mean
        second = p.cov + np.outer(mu, mu)
        return np.concatenate([mu, -second.reshape(-1)])
    return -1.0 / p.theta


def suff_stats_cov(p: NaturalParams) -> np.ndarray:
    """Closed-form covariance of ``t(x)``, the Hessian of the log-partition."""
    if p.family == EXPONENTIAL:
        return np.diag(1.0 / p.theta ** 2)
    d = p.d
    mu, sig = p.mean, p.cov
    out = np.empty((p.kind.m, p.kind.m))
    out[:d, :d] = sig
    # Cov(x_i, -x_j x_k) = -(mu_j S_ik + mu_k S_ij)
    cross = -(np.einsum("j,ik->ijk", mu, sig) + np.einsum("k,ij->ijk", mu, sig))
    out[:d, d:] = cross.reshape(d, d * d)
    out[d:, :d] = out[:d, d:].T
    quad = (np.einsum("ik,jl->ijkl", sig, sig) + np.einsum("il,jk->ijkl", sig, sig)
            + np.einsum("i,k,jl->ijkl", mu, mu, sig) + np.einsum("i,l,jk->ijkl", mu, mu, sig)
            + np.einsum("j,k,il->ijkl", mu, mu, sig) + np.einsum("j,l,ik->ijkl", mu, mu, sig))
    out[d:, d:] = quad.reshape(d * d, d * d)
    return out


def moment_match(kind: FamilyKind, v) -> NaturalParams:
    """Closed-form inverse of :func:`mean_suff_stats`."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != kind.m:
        raise DimensionError(f"moment vector must have length {kind.m}")
    if kind.family == EXPONENTIAL:
        if np.any(~(v > 0)):
            raise DegenerateMoments("exponential moments must be strictly positive")
        return NaturalParams(kind, -1.0 / v)
    d = kind.d
    mu = v[:d]
    sigma = _sym(-v[d:].reshape(d, d) - np.outer(mu, mu))
    chol = checked_cholesky(sigma, "implied covariance", exc=DegenerateMoments)
    inv_chol = np.linalg.inv(chol)
    precision = _sym(inv_chol.T @ inv_chol)
    return NaturalParams(kind, np.concatenate([precision @ mu, 0.5 * precision.reshape(-1)]))


def log_density(p: NaturalParams, x) -> Union[float, np.ndarray]:
    pts, single = _as_points(p.kind, x)
    if p.family == GAUSSIAN:
        t = suff_stats(p.kind, pts)
        out = t @ p.theta - log_partition(p) - 0.5 * p.d * _LOG_2PI
    else:
        with np.errstate(invalid="ignore"):
            out = pts @ p.theta - log_partition(p)
        out = np.where(np.all(pts >= 0, axis=1), out, -np.inf)
    return float(out[0]) if single else out


def density(p: NaturalParams, x):
    return np.exp(log_density(p, x))


def sample(p: NaturalParams, n: int, rng_seed=None) -> np.ndarray:
    """``n`` exact independent draws as an ``(n, d)`` array."""
    if int(n) < 1:
        raise ValueError("sample size n must be >= 1")
    rng = as_rng(rng_seed)
    if p.family == GAUSSIAN:
        g = rng.standard_normal((int(n), p.d))
        return p.mean + g @ p.cov_chol.T
    u = rng.random((int(n), p.d))
    return -np.log1p(-u) / (-p.theta)
