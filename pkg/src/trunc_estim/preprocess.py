"""
Data normalization and the convex parameter domains the solver works in.

Gaussian data are whitened by the empirical mean and covariance (denominator
``n``); exponential data are rescaled coordinatewise so the empirical mean is
one.  The resulting domains are

* ``GaussianTheta(b)``: ``||Sigma^-1 mu|| <= b``, ``||Sigma||_2 <= b`` and
  ``||I - Sigma^-1||_F <= b``, all expressed on natural-parameter blocks so
  the set is convex in ``theta``;
* ``ExpTheta(r, R)``: the box ``[-1/r, -r]^d`` intersected with the ball of
  radius ``R`` around ``(-1, ..., -1)``.

Projections are Euclidean in ``theta`` coordinates and computed with
Dykstra's alternating projections over the individual constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import expfam
from .errors import DataError, EmptyDomain, InvalidParameters, ProjectionFailure
from .expfam import EXPONENTIAL, GAUSSIAN, FamilyKind, NaturalParams

DYKSTRA_TOL = 1e-8
DYKSTRA_MAX_SWEEPS = 10_000
_FEAS_TOL = 1e-9


# ---------------------------------------------------------------------------
# affine maps

class AffineTransform:
    """The map ``z = A (x - c)`` together with its cached inverse."""

    def __init__(self, A, c):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        c = np.atleast_1d(np.asarray(c, dtype=float))
        if A.shape != (c.size, c.size):
            raise InvalidParameters("A must be d x d with d = len(c)")
        try:
            A_inv = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            raise InvalidParameters("affine map is not invertible") from None
        self.A, self.c, self.A_inv = A, c, A_inv
        for arr in (self.A, self.c, self.A_inv):
            arr.setflags(write=False)

    @classmethod
    def identity(cls, d: int) -> "AffineTransform":
        return cls(np.eye(d), np.zeros(d))

    @property
    def d(self) -> int:
        return self.c.size

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.A == np.diag(np.diag(self.A))))

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.c) @ self.A.T

    def invert(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) @ self.A_inv.T + self.c

    def params_to_original(self, p: NaturalParams) -> NaturalParams:
        """Law of ``x`` when ``z = A(x - c)`` follows ``p``."""
        if p.family == GAUSSIAN:
            mu = self.A_inv @ p.mean + self.c
            sigma = self.A_inv @ p.cov @ self.A_inv.T
            return NaturalParams.gaussian(mu, sigma)
        self._check_scaling()
        return NaturalParams.exponential(np.diag(self.A) * p.theta)

    def params_to_transformed(self, p: NaturalParams) -> NaturalParams:
        """Law of ``z = A(x - c)`` when ``x`` follows ``p``."""
        if p.family == GAUSSIAN:
            mu = self.A @ (p.mean - self.c)
            sigma = self.A @ p.cov @ self.A.T
            return NaturalParams.gaussian(mu, sigma)
        self._check_scaling()
        return NaturalParams.exponential(p.theta / np.diag(self.A))

    def _check_scaling(self):
        if not self.is_diagonal or np.any(np.diag(self.A) <= 0) or np.any(self.c != 0):
            raise InvalidParameters("exponential parameters only transform under positive diagonal scalings")

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "c": self.c.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "AffineTransform":
        return cls(obj["A"], obj["c"])


# ---------------------------------------------------------------------------
# parameter domains

@dataclass(frozen=True)
class ParameterDomain:
    """Convex parameter set plus the smoothness/interiority constants.

    ``b`` is used by the Gaussian variant, ``r`` and ``R`` by the
    exponential one.
    """

    family: str
    d: int
    lam: float
    Lam: float
    eta: float
    alpha: float
    b: Optional[float] = None
    r: Optional[float] = None
    R: Optional[float] = None

    def __post_init__(self):
        if self.family == GAUSSIAN:
            if self.b is None or not self.b > 0:
                raise InvalidParameters("Gaussian domain needs b > 0")
        elif self.family == EXPONENTIAL:
            if self.r is None or self.R is None or not (0 < self.r <= 1) or not self.R > 0:
                raise InvalidParameters("exponential domain needs 0 < r <= 1 and R > 0")
        else:
            raise InvalidParameters(f"unknown family {self.family!r}")
        if not 0 < self.lam <= self.Lam:
            raise InvalidParameters("domain constants need 0 < lam <= Lam")

    @property
    def kind(self) -> FamilyKind:
        return FamilyKind(self.family, self.d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("family", "d", "lam", "Lam", "eta", "alpha", "b", "r", "R")}

    @classmethod
    def from_dict(cls, obj: dict) -> "ParameterDomain":
        return cls(**obj)


def gaussian_theta_constants(b: float) -> tuple[float, float]:
    """Bounds ``(lam, Lam)`` on the spectrum of ``Cov[t(x)]`` over ``GaussianTheta(b)``.

    Evaluates the explicit eigenvalue bounds for ``Cov_{N(mu,Sigma)}[t(x)]``
    at the domain's extremes: ``1/(1+b) <= eig(Sigma) <= b`` and
    ``||mu|| <= b^2``.
    """
    ev_lo, ev_hi = 1.0 / (1.0 + b), b
    mu2 = b ** 4
    low4 = min(ev_lo, ev_lo ** 2)
    high4 = max(ev_lo, ev_hi ** 2)
    lam = min(low4 / 4.0, low4 / (16.0 * mu2 + math.sqrt(low4)))
    Lam = 7.0 * (1.0 + mu2) * high4
    return lam, Lam


def gaussian_domain(d: int, alpha: float, c_b: float = 1.0, lam=None, Lam=None,
                    eta=None, b=None) -> ParameterDomain:
    if not 0 < alpha < 1:
        raise InvalidParameters("alpha must lie in (0, 1)")
    if b is None:
        b = c_b * math.log(1.0 / alpha) / alpha ** 2
    lam0, Lam0 = gaussian_theta_constants(b)
    return ParameterDomain(GAUSSIAN, d, lam=lam if lam is not None else lam0,
                           Lam=Lam if Lam is not None else Lam0,
                           eta=eta if eta is not None else alpha ** 3 / 10.0,
                           alpha=alpha, b=b)


def exponential_domain(d: int, alpha: float, c_r: float = 0.5, c_R: float = 10.0,
                       lam=None, Lam=None, eta=None, r=None, R=None) -> ParameterDomain:
    if not 0 < alpha < 1:
        raise InvalidParameters("alpha must lie in (0, 1)")
    r = c_r * alpha if r is None else r
    R = c_R / alpha if R is None else R
    return ParameterDomain(EXPONENTIAL, d, lam=lam if lam is not None else r * r,
                           Lam=Lam if Lam is not None else 1.0 / (r * r),
                           eta=eta if eta is not None else r / 10.0, alpha=alpha, r=r, R=R)


def shrunk_domain(dom: ParameterDomain, eta: Optional[float] = None) -> ParameterDomain:
    """The convex subset of the ``eta``-interior onto which warm starts are projected."""
    eta = dom.eta if eta is None else eta
    if dom.family == GAUSSIAN:
        b = dom.b / 2.0
        # smallest admissible Sigma^-1 given ||Sigma|| <= b is I/b
        if b < 1 and math.sqrt(dom.d) * (1.0 / b - 1.0) > b:
            raise EmptyDomain(f"shrunk Gaussian domain with b={b} is empty")
        return replace(dom, b=b)
    r, R = dom.r + eta, dom.R - eta
    if r > 1 or R <= 0:
        raise EmptyDomain(f"shrunk exponential domain (r={r}, R={R}) is empty")
    return replace(dom, r=r, R=R)


# ---------------------------------------------------------------------------
# elementary projections (operate on flat theta vectors, return new arrays)

def _project_ball(x: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    diff = x - center
    norm = np.linalg.norm(diff)
    if norm <= radius:
        return x.copy()
    return center + diff * (radius / norm)


def _gaussian_constraints(d: int, b: float) -> list[Callable[[np.ndarray], np.ndarray]]:
    half_eye = 0.5 * np.eye(d).reshape(-1)

    def linear_ball(x):
        out = x.copy()
        out[:d] = _project_ball(x[:d], np.zeros(d), b)
        return out

    def eig_floor(x):
        out = x.copy()
        block = x[d:].reshape(d, d)
        block = 0.5 * (block + block.T)
        w, V = np.linalg.eigh(block)
        # ||Sigma||_2 <= b  <=>  eig(Sigma^-1 / 2) >= 1 / (2b)
        out[d:] = ((V * np.maximum(w, 0.5 / b)) @ V.T).reshape(-1)
        return out

    def frob_ball(x):
        out = x.copy()
        # ||I - Sigma^-1||_F <= b  <=>  ||Sigma^-1/2 - I/2||_F <= b/2
        out[d:] = _project_ball(x[d:], half_eye, 0.5 * b)
        return out

    return [linear_ball, eig_floor, frob_ball]


def _exponential_constraints(d: int, r: float, R: float) -> list[Callable[[np.ndarray], np.ndarray]]:
    center = -np.ones(d)
    return [lambda x: np.clip(x, -1.0 / r, -r), lambda x: _project_ball(x, center, R)]


def domain_constraints(dom: ParameterDomain) -> list[Callable[[np.ndarray], np.ndarray]]:
    if dom.family == GAUSSIAN:
        return _gaussian_constraints(dom.d, dom.b)
    return _exponential_constraints(dom.d, dom.r, dom.R)


def _violation(dom: ParameterDomain, theta: np.ndarray) -> float:
    """Largest constraint violation (<= 0 means feasible)."""
    d = dom.d
    if dom.family == GAUSSIAN:
        block = theta[d:].reshape(d, d)
        block = 0.5 * (block + block.T)
        ev_min = np.linalg.eigvalsh(block)[0]
        return max(np.linalg.norm(theta[:d]) - dom.b,
                   0.5 / dom.b - ev_min,
                   np.linalg.norm(block - 0.5 * np.eye(d)) - 0.5 * dom.b)
    return max(np.max(theta) + dom.r, -1.0 / dom.r - np.min(theta),
               np.linalg.norm(theta + 1.0) - dom.R)


def dykstra(x0: np.ndarray, projections: Sequence[Callable[[np.ndarray], np.ndarray]],
            tol: float = DYKSTRA_TOL, max_sweeps: int = DYKSTRA_MAX_SWEEPS) -> np.ndarray:
    """Projection onto an intersection of convex sets by Dykstra's algorithm."""
    x = np.array(x0, dtype=float)
    incs = [np.zeros_like(x) for _ in projections]
    for _ in range(max_sweeps):
        prev = x
        for i, proj in enumerate(projections):
            y = proj(x + incs[i])
            incs[i] = x + incs[i] - y
            x = y
        if np.linalg.norm(x - prev) < tol:
            # a fixed point that some set moves means the sets do not intersect
            gap = max(np.linalg.norm(proj(x) - x) for proj in projections)
            if gap > math.sqrt(tol):
                raise ProjectionFailure(f"Dykstra stalled {gap:.3g} away from a constraint set; "
                                        "the sets appear not to intersect")
            return x
    raise ProjectionFailure(f"Dykstra projection did not converge in {max_sweeps} sweeps")


def _check_family(dom: ParameterDomain, p: NaturalParams):
    if p.kind != dom.kind:
        raise InvalidParameters(f"parameter family {p.kind} does not match domain {dom.kind}")


def contains_domain(dom: ParameterDomain, p: NaturalParams, tol: float = _FEAS_TOL) -> bool:
    _check_family(dom, p)
    return _violation(dom, np.asarray(p.theta)) <= tol


def project_theta(dom: ParameterDomain, theta: np.ndarray,
                  extra: Sequence[Callable[[np.ndarray], np.ndarray]] = ()) -> np.ndarray:
    """Projection of a raw parameter vector onto the domain (and extra sets)."""
    theta = np.asarray(theta, dtype=float)
    projections = list(extra) + domain_constraints(dom)
    if _violation(dom, theta) <= 0 and all(np.array_equal(P(theta), theta) for P in extra):
        return theta.copy()
    return dykstra(theta, projections)


def project_domain(dom: ParameterDomain, p: NaturalParams) -> NaturalParams:
    """Euclidean projection of ``p`` onto the domain (identity if feasible)."""
    _check_family(dom, p)
    if _violation(dom, np.asarray(p.theta)) <= 0:
        return p
    return NaturalParams(p.kind, project_theta(dom, p.theta))


def project_interior(dom: ParameterDomain, eta: Optional[float], p: NaturalParams) -> NaturalParams:
    """Projection onto the shrunk domain used for warm starts."""
    return project_domain(shrunk_domain(dom, eta), p)


# ---------------------------------------------------------------------------
# pre-processing routines

def _empirical_mean_cov(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    centered = x - mu
    return mu, centered.T @ centered / len(x)


def gaussian_preprocess(samples, alpha: float, c_b: float = 1.0, diagonal: bool = False,
                        **domain_overrides):
    """Whitening transform and ``GaussianTheta`` domain from truncated samples.

    With ``diagonal=True`` each coordinate is only centered and scaled to unit
    variance, so axis-aligned boxes stay axis-aligned in the new coordinates.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise DataError("samples must be an (n, d) array")
    n, d = x.shape
    if n <= d:
        raise DataError(f"need more samples than dimensions (n={n}, d={d})")
    mu, cov = _empirical_mean_cov(x)
    if diagonal:
        var = np.diag(cov)
        if np.any(var <= 0):
            raise DataError("a coordinate has zero empirical variance")
        return (AffineTransform(np.diag(1.0 / np.sqrt(var)), mu),
                gaussian_domain(d, alpha, c_b=c_b, **domain_overrides))
    w, V = np.linalg.eigh(cov)
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise DataError("empirical covariance is singular")
    A = (V / np.sqrt(w)) @ V.T
    return AffineTransform(0.5 * (A + A.T), mu), gaussian_domain(d, alpha, c_b=c_b, **domain_overrides)


def exponential_preprocess(samples, alpha: float, c_r: float = 0.5, c_R: float = 10.0,
                           **domain_overrides):
    """Coordinatewise rescaling so the empirical mean is one.

    No sign flip is applied; the transformed data stay on the nonnegative
    orthant.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise DataError("samples must be a non-empty (n, d) array")
    if np.any(x < 0):
        raise DataError("exponential samples must be nonnegative")
    mean = x.mean(axis=0)
    if np.any(mean <= 0):
        raise DataError("a coordinate has zero empirical mean")
    d = x.shape[1]
    return (AffineTransform(np.diag(1.0 / mean), np.zeros(d)),
            exponential_domain(d, alpha, c_r=c_r, c_R=c_R, **domain_overrides))


def preprocess(family: str, samples, alpha: float, **kwargs):
    if family == GAUSSIAN:
        return gaussian_preprocess(samples, alpha, **kwargs)
    return exponential_preprocess(samples, alpha, **kwargs)
