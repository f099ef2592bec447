"""
Survival-set learners.

* :func:`learn_box` -- bounding box of the positives.
* :func:`learn_halfspace` -- direction from signed cube roots of the
  per-coordinate third central moments, threshold from held-out data.
* :func:`learn_set_pu` -- positive/unlabeled reduction: mix positives with
  draws from a reference parameter, label them, and fit an L1 polynomial
  threshold classifier (:func:`l1_poly_regression`).

The histogram helpers at the bottom evaluate the reduction's noise-rate sets
exactly on discretized one-dimensional models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import expfam
from ._seeding import as_rng
from .errors import DataError, DimensionError, FeatureCapExceeded, InvalidParameters
from .truncation import (AxisBox, Full, Halfspace, PolyThreshold, monomial_exponents,
                         monomial_features)


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y: int


@dataclass
class LabeledData:
    """Column view of a labeled sample: ``X`` is ``(n, d)``, ``y`` holds 0/1."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y).astype(np.int8).reshape(-1)
        if len(self.X) != len(self.y):
            raise DimensionError("X and y must have the same number of rows")
        if np.any((self.y != 0) & (self.y != 1)):
            raise InvalidParameters("labels must be 0 or 1")

    def __len__(self):
        return len(self.y)

    def records(self) -> list[LabeledSample]:
        return [LabeledSample(x.copy(), int(y)) for x, y in zip(self.X, self.y)]

    @classmethod
    def from_records(cls, recs: Sequence[LabeledSample]) -> "LabeledData":
        if len(recs) == 0:
            raise DataError("no labeled samples")
        return cls(np.array([r.x for r in recs], dtype=float), np.array([r.y for r in recs]))


def _as_labeled(data) -> LabeledData:
    return data if isinstance(data, LabeledData) else LabeledData.from_records(list(data))


def _matrix(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or len(x) == 0:
        raise DataError("samples must be a non-empty (n, d) array")
    return x


# ---------------------------------------------------------------------------
# boxes

def learn_box(samples) -> AxisBox:
    """Componentwise min/max of the samples."""
    x = _matrix(samples)
    return AxisBox(x.min(axis=0), x.max(axis=0))


# ---------------------------------------------------------------------------
# halfspaces

@dataclass
class HalfspaceDiag:
    """What the halfspace learner saw.

    ``w_cuberoot`` is the normalized signed cube root of ``M``;
    ``w_refined`` is the direction actually used: after ``refine_iters``
    tensor power iterations started from it and the optional margin
    tightening (equal to ``w_cuberoot`` when neither is run).  ``M_se`` are the standard errors of ``M``.
    """

    gamma_hat: np.ndarray
    M: np.ndarray
    M_se: np.ndarray
    degenerate: bool = False
    threshold_used: float = 0.0
    w_cuberoot: Optional[np.ndarray] = None
    w_refined: Optional[np.ndarray] = None
    refine_iters: int = 0
    tightened: bool = False
    tau: Optional[float] = None

    def to_dict(self) -> dict:
        arr = lambda v: None if v is None else np.asarray(v).tolist()  # noqa: E731
        return {"gamma_hat": arr(self.gamma_hat), "M": arr(self.M), "M_se": arr(self.M_se),
                "degenerate": bool(self.degenerate), "threshold_used": float(self.threshold_used),
                "w_cuberoot": arr(self.w_cuberoot), "w_refined": arr(self.w_refined),
                "refine_iters": int(self.refine_iters), "tightened": self.tightened,
                "tau": self.tau}


def third_central_moment_diag(samples) -> HalfspaceDiag:
    """Mean and per-coordinate third central moment of the first half of the rows."""
    x = _matrix(samples)
    if len(x) < 2:
        raise DataError("need at least 2 samples")
    first = x[: len(x) // 2]
    gamma_hat = first.mean(axis=0)
    cubes = (first - gamma_hat) ** 3
    M = cubes.mean(axis=0)
    se = cubes.std(axis=0) / math.sqrt(len(first))
    return HalfspaceDiag(gamma_hat, M, se)


def signed_cube_root_direction(M) -> np.ndarray:
    w = np.cbrt(np.asarray(M, dtype=float))
    norm = np.linalg.norm(w)
    if norm == 0:
        raise InvalidParameters("all third moments vanish; no direction is defined")
    return w / norm


def tensor_power_refine(centered: np.ndarray, w0: np.ndarray, iters: int) -> np.ndarray:
    """Power iteration ``v <- T(I, v, v) / ||T(I, v, v)||`` on the empirical third-moment tensor."""
    v = np.asarray(w0, dtype=float).copy()
    for _ in range(iters):
        proj = centered @ v
        u = centered.T @ (proj * proj) / len(centered)
        norm = np.linalg.norm(u)
        if norm == 0:
            break
        v = u / norm
    return v


def tighten_halfspace(x: np.ndarray, w0: np.ndarray, rounds: int = 3,
                      max_tilt: float = 0.2) -> np.ndarray:
    """Tilt ``w0`` to maximize ``min_i w . x_i`` (a local support-function step).

    Each round solves the linear program ``max t`` subject to
    ``x_i . (w + B u) >= t`` with ``B`` an orthonormal basis of ``w``'s
    complement and ``|u_k| <= max_tilt``, then renormalizes.
    """
    from scipy.optimize import linprog

    w = np.asarray(w0, dtype=float).copy()
    d = len(w)
    if d == 1:
        return w
    for _ in range(rounds):
        B = np.linalg.svd(w.reshape(1, -1))[2][1:].T
        proj = x @ w
        # rows far above the current minimum cannot become active
        keep = proj <= np.min(proj) + 2 * max_tilt * np.max(np.abs(x @ B)) + 1e-12
        xs = x[keep]
        A_ub = np.hstack([-(xs @ B), np.ones((len(xs), 1))])
        res = linprog(np.r_[np.zeros(d - 1), -1.0], A_ub=A_ub, b_ub=xs @ w,
                      bounds=[(-max_tilt, max_tilt)] * (d - 1) + [(None, None)], method="highs")
        if res.status != 0:
            break
        w_new = w + B @ res.x[:-1]
        w_new /= np.linalg.norm(w_new)
        if np.min(x @ w_new) <= np.min(proj):
            break
        w = w_new
    return w


def learn_halfspace(samples, epsilon: float, alpha: float = 0.5, c: float = 0.01,
                    z_noise: float = 4.0, refine_iters: int = 20, tighten: bool = False):
    """Halfspace from positive (whitened) samples.

    Parameters
    ----------
    samples : (n, d) array
        Draws from a Gaussian truncated to a halfspace, preferably whitened.
    epsilon, alpha : float
        Target accuracy and mass lower bound.  ``alpha`` is accepted for
        interface symmetry and only used for validation.
    c : float
        Degeneracy constant; the moments are treated as zero when
        ``max |M_j| <= max(c eps^3 d^-1.5, z_noise * max_j se_j)``.
    z_noise : float
        Multiple of the moments' standard error added to the degeneracy
        threshold so that sampling noise alone is not mistaken for skew.
        Zero gives the bare ``c eps^3 d^-1.5`` rule.
    refine_iters : int
        Tensor power iterations applied to the cube-root direction; zero
        returns the cube-root direction itself.  The cube root amplifies
        noise in coordinates whose true moment is near zero (an axis-aligned
        normal is the worst case), which a few power steps remove.
    tighten : bool
        Tilt the direction to maximize the held-out minimum margin
        (:func:`tighten_halfspace`) before fixing the threshold.

    Returns
    -------
    (SurvivalSet, HalfspaceDiag)
    """
    x = _matrix(samples)
    if len(x) < 4:
        raise DataError("learn_halfspace needs at least 4 samples")
    if not 0 < alpha <= 1 or not epsilon > 0:
        raise InvalidParameters("need epsilon > 0 and alpha in (0, 1]")
    n, d = x.shape
    diag = third_central_moment_diag(x)
    base = c * epsilon ** 3 * d ** -1.5
    diag.threshold_used = float(max(base, z_noise * float(np.max(diag.M_se))))
    if np.max(np.abs(diag.M)) <= diag.threshold_used:
        diag.degenerate = True
        return Full(d), diag
    w = signed_cube_root_direction(diag.M)
    diag.w_cuberoot = w
    if refine_iters > 0:
        w = tensor_power_refine(x[: n // 2] - diag.gamma_hat, w, refine_iters)
    if tighten:
        w = tighten_halfspace(x[n // 2:], w)
    diag.w_refined = w
    diag.refine_iters = int(refine_iters)
    diag.tightened = bool(tighten)
    # largest threshold whose halfspace still holds every held-out sample
    tau = float(np.min(x[n // 2:] @ w))
    diag.tau = tau
    return Halfspace(w, tau), diag


# ---------------------------------------------------------------------------
# positive / unlabeled reduction

def pu_dataset(pos, unlabeled_params: expfam.NaturalParams, rho: float, n: int,
               rng_seed=None) -> LabeledData:
    """``n`` draws from ``rho * E(unlabeled) (y=0) + (1 - rho) * uniform(pos) (y=1)``."""
    if not 0 <= rho <= 1:
        raise InvalidParameters("rho must lie in [0, 1]")
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_rng(rng_seed)
    is_unl = rng.random(n) < rho
    n_unl = int(is_unl.sum())
    X = np.empty((n, unlabeled_params.d))
    if n_unl < n:
        pos = _matrix(pos)
        if pos.shape[1] != unlabeled_params.d:
            raise DimensionError("positives and unlabeled parameter differ in dimension")
        X[~is_unl] = pos[rng.integers(0, len(pos), n - n_unl)]
    if n_unl:
        X[is_unl] = expfam.sample(unlabeled_params, n_unl, rng)
    return LabeledData(X, (~is_unl).astype(np.int8))


@dataclass
class L1FitInfo:
    objective_history: np.ndarray   # best-so-far L1 loss per iteration
    best_objective: float
    train_error: float
    threshold: float


def _zero_one_threshold(scores: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Threshold ``t`` (from sorted scores and midpoints) minimizing the error of ``1{s >= t}``."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    ys = y[order].astype(np.int64)
    uniq, first = np.unique(s, return_index=True)
    n = len(s)
    # predicting 1 for s >= uniq[k]: errors are positives below plus negatives at/above
    pos_below = np.concatenate([[0], np.cumsum(ys)])[first]
    neg_above = (n - first) - (ys.sum() - pos_below)
    errs = pos_below + neg_above
    cands = list(uniq)
    cand_err = list(errs)
    # midpoints between distinct values give the same errors; keep them as candidates
    mids = 0.5 * (uniq[1:] + uniq[:-1])
    cands += list(mids)
    cand_err += list(errs[1:])
    # threshold above every score: predict all zero
    cands.append(uniq[-1] + 1.0)
    cand_err.append(int(ys.sum()))
    cands = np.asarray(cands)
    cand_err = np.asarray(cand_err)
    best = np.flatnonzero(cand_err == cand_err.min())
    k = best[np.argmin(cands[best])]
    return float(cands[k]), float(cand_err[k]) / n


def l1_poly_regression(data, degree: int, max_features: int = 500, iterations: int = 10_000,
                       step0: float = 1.0, return_info: bool = False):
    """Polynomial threshold classifier from an L1 fit to 0/1 labels.

    Minimizes ``mean |y - p(x)|`` over degree-``degree`` polynomials with
    deterministic subgradient descent (features standardized, least-squares
    warm start, steps ``step0 / sqrt(k + 1)`` along the normalized
    subgradient, best iterate kept), then picks the threshold with the
    smallest empirical 0/1 error.
    """
    data = _as_labeled(data)
    if degree < 1:
        raise InvalidParameters("degree must be >= 1")
    n, d = data.X.shape
    n_feat = math.comb(d + degree, degree)
    if n_feat > max_features:
        raise FeatureCapExceeded(f"{n_feat} monomials exceed the cap of {max_features}")
    exps = monomial_exponents(d, degree)
    F = monomial_features(data.X, exps)
    y = data.y.astype(float)
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    const = exps.sum(axis=1) == 0
    scale[const] = 1.0
    mean[const] = 0.0
    scale[scale == 0] = 1.0
    Z = (F - mean) / scale

    c, *_ = np.linalg.lstsq(Z, y, rcond=None)
    resid = y - Z @ c
    best_c, best_obj = c.copy(), float(np.mean(np.abs(resid)))
    history = np.empty(iterations)
    for k in range(iterations):
        g = -(Z.T @ np.sign(resid)) / n
        gn = np.linalg.norm(g)
        if gn == 0:
            history[k:] = best_obj
            break
        c = c - (step0 / math.sqrt(k + 1.0)) * g / gn
        resid = y - Z @ c
        obj = float(np.mean(np.abs(resid)))
        if obj < best_obj:
            best_obj, best_c = obj, c.copy()
        history[k] = best_obj

    coef = best_c / scale
    coef[const] -= float(np.sum(best_c * mean / scale))
    scores = F @ coef
    t, err = _zero_one_threshold(scores, data.y)
    S = PolyThreshold(d, degree, coef, t)
    if return_info:
        return S, L1FitInfo(history, best_obj, err, t)
    return S


def learn_set_pu(pos, theta0: expfam.NaturalParams, epsilon: float, degree: int, rng_seed=None,
                 n: Optional[int] = None, **l1_kwargs) -> PolyThreshold:
    """Learn ``S*`` from positives by the PU reduction with ``rho = epsilon / 6``.

    ``n`` labeled records are drawn (default ``max(len(pos), 10**5)``).
    """
    rho = epsilon / 6.0
    if not 0 < rho < 1:
        raise InvalidParameters(f"rho = epsilon/6 = {rho:.4g} must lie in (0, 1)")
    pos = _matrix(pos)
    n = int(n) if n is not None else max(len(pos), 100_000)
    data = pu_dataset(pos, theta0, rho, n, rng_seed)
    return l1_poly_regression(data, degree, **l1_kwargs)


# ---------------------------------------------------------------------------
# histogram model of the reduction

def _hist(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or not np.isclose(v.sum(), 1.0):
        raise InvalidParameters("histogram must be nonnegative and sum to one")
    return v


def noise_rate(P, U, rho: float) -> np.ndarray:
    """``rho U / (rho U + (1 - rho) P)`` on the support of ``P`` and 0 elsewhere."""
    P, U = _hist(P), _hist(U)
    out = np.zeros_like(P)
    on = P > 0
    out[on] = rho * U[on] / (rho * U[on] + (1 - rho) * P[on])
    return out


def noise_set(P, U, rho: float, z: float) -> np.ndarray:
    """Indicator of ``B_z = {x in supp P : noise rate >= z}``."""
    return (np.asarray(P) > 0) & (noise_rate(P, U, rho) >= z)


def noise_set_mass_bound(rho: float, z: float) -> float:
    return rho / (1 - rho) * (1 - z) / z


def pu_optimal_set(P, U, rho: float) -> np.ndarray:
    """``supp P`` minus ``B_{1/2}``: the Bayes-optimal positive region."""
    return (np.asarray(P) > 0) & ~noise_set(P, U, rho, 0.5)


def pu_error(mask, P, U, rho: float) -> float:
    """0/1 error of predicting label 1 exactly on ``mask`` under the PU mixture."""
    mask = np.asarray(mask, dtype=bool)
    return float(rho * np.sum(np.asarray(U)[mask]) + (1 - rho) * np.sum(np.asarray(P)[~mask]))
