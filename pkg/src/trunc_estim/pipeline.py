"""
End-to-end estimators.

:func:`estimate_unknown_truncation` splits the sample in three: the first
part fixes the normalizing transform, the parameter domain and a warm
start, the second learns the survival set, the third runs PSGD restricted
to the learned set.  :func:`truncated_linear_regression` applies it to the
joint law of ``(x, y)`` and reads off the regression coefficients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import expfam, metrics
from .expfam import EXPONENTIAL, GAUSSIAN, NaturalParams
from ._seeding import child_seed
from .errors import DataError, InvalidParameters, Unsupported
from .pmle import PSGDConfig, init_theta0, psgd
from .preprocess import AffineTransform, ParameterDomain, preprocess
from .setlearn import learn_box, learn_halfspace, learn_set_pu
from .truncation import (AxisBox, ExternalOracle, Full, Halfspace, PolyThreshold, SurvivalSet,
                         mass_estimate, monomial_exponents, monomial_features, set_from_dict)

BOX = "box"
HALFSPACE = "halfspace"
POLY = "poly"


@dataclass
class PipelineConfig:
    """Knobs for :func:`estimate_unknown_truncation`.

    ``splits`` are the relative sizes of the three sample parts.
    ``refine_iters`` tensor power steps and ``tighten`` sharpen the halfspace
    direction (0 and False keep the plain cube-root direction).
    """

    splits: tuple = (1.0, 1.0, 1.0)
    c_b: float = 1.0
    c_r: float = 0.5
    c_R: float = 10.0
    degeneracy_c: float = 0.01
    z_noise: float = 4.0
    refine_iters: int = 20
    tighten: bool = True
    pu_n: Optional[int] = None
    l1_iterations: int = 10_000
    mass_mc: int = 100_000
    psgd: PSGDConfig = field(default_factory=PSGDConfig)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("c_b", "c_r", "c_R", "degeneracy_c", "z_noise",
                                             "refine_iters", "tighten", "pu_n", "l1_iterations", "mass_mc")}
        out["splits"] = list(self.splits)
        out["psgd"] = self.psgd.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        if "psgd" in obj:
            obj["psgd"] = PSGDConfig.from_dict(obj["psgd"])
        if "splits" in obj:
            obj["splits"] = tuple(obj["splits"])
        return cls(**obj)


def parse_set_class(set_class) -> tuple[str, int]:
    """``"box"``, ``"halfspace"``, ``"poly:3"``, ``("poly", 3)`` or ``{"type": "poly", "degree": 3}``."""
    if isinstance(set_class, dict):
        kind, deg = set_class.get("type"), int(set_class.get("degree", 0))
    elif isinstance(set_class, (tuple, list)):
        kind, deg = set_class[0], int(set_class[1]) if len(set_class) > 1 else 0
    else:
        kind, _, rest = str(set_class).partition(":")
        deg = int(rest) if rest else 0
    kind = str(kind).lower()
    if kind not in (BOX, HALFSPACE, POLY):
        raise InvalidParameters(f"unknown set class {set_class!r}")
    if kind == POLY and deg < 1:
        raise InvalidParameters("polynomial set class needs a degree >= 1")
    return kind, deg


# ---------------------------------------------------------------------------
# reports

@dataclass
class EstimationReport:
    theta_hat: NaturalParams                 # original coordinates
    theta_hat_transformed: NaturalParams
    theta0: NaturalParams                    # transformed coordinates
    learned_set: SurvivalSet                 # transformed coordinates
    learned_set_original: SurvivalSet
    transform: AffineTransform
    domain: ParameterDomain
    diagnostics: dict
    config: dict

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.to_dict(),
            "theta_hat_transformed": self.theta_hat_transformed.to_dict(),
            "theta0": self.theta0.to_dict(),
            "learned_set": self.learned_set.to_dict(),
            "learned_set_original": self.learned_set_original.to_dict(),
            "transform": self.transform.to_dict(),
            "domain": self.domain.to_dict(),
            "diagnostics": _jsonable(self.diagnostics),
            "config": _jsonable(self.config),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, obj: dict) -> "EstimationReport":
        learned = set_from_dict(obj["learned_set"])
        transform = AffineTransform.from_dict(obj["transform"])
        orig = obj["learned_set_original"]
        return cls(NaturalParams.from_dict(obj["theta_hat"]),
                   NaturalParams.from_dict(obj["theta_hat_transformed"]),
                   NaturalParams.from_dict(obj["theta0"]), learned,
                   pullback_set(learned, transform) if orig["type"] == "external" else set_from_dict(orig),
                   transform, ParameterDomain.from_dict(obj["domain"]),
                   obj["diagnostics"], obj["config"])


@dataclass
class RegressionReport:
    w_hat: np.ndarray
    b_hat: float
    noise_var: float
    joint: EstimationReport

    def to_dict(self) -> dict:
        return {"w_hat": np.asarray(self.w_hat).tolist(), "b_hat": float(self.b_hat),
                "noise_var": float(self.noise_var), "joint": self.joint.to_dict()}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# ---------------------------------------------------------------------------
# set pullback

def pullback_set(S: SurvivalSet, T: AffineTransform) -> SurvivalSet:
    """The set ``{x : T(x) in S}`` in original coordinates.

    Halfspaces and polynomial thresholds pull back exactly; boxes do under a
    diagonal transform and become membership oracles otherwise.
    """
    A, c = T.A, T.c
    if isinstance(S, Full):
        return Full(T.d)
    if isinstance(S, Halfspace):
        # w . A (x - c) >= tau  <=>  (A^T w) . x >= tau + w . A c
        return Halfspace.from_normal(A.T @ S.w, S.tau + S.w @ A @ c)
    if isinstance(S, AxisBox) and T.is_diagonal:
        a = np.diag(A)
        ends = np.stack([c + S.lo / a, c + S.hi / a])
        return AxisBox(ends.min(axis=0), ends.max(axis=0))
    if isinstance(S, PolyThreshold):
        return _pullback_poly(S, T)
    return ExternalOracle(lambda x: S.contains(T.apply(x)), T.d,
                          f"pullback of {S.to_dict().get('type', 'set')} through affine map")


def _pullback_poly(S: PolyThreshold, T: AffineTransform) -> PolyThreshold:
    # p(T(x)) is a polynomial of the same degree; recover its coefficients by
    # interpolation on well-spread points
    exps = monomial_exponents(S.d, S.degree)
    rng = np.random.default_rng(0)
    pts = T.c + rng.standard_normal((4 * len(exps) + 8, S.d))
    F = monomial_features(pts, exps)
    vals = S.evaluate(T.apply(pts))
    coef, *_ = np.linalg.lstsq(F, vals, rcond=None)
    return PolyThreshold(S.d, S.degree, coef, S.threshold)


# ---------------------------------------------------------------------------
# the estimator

def split_indices(n: int, ratios=(1.0, 1.0, 1.0)) -> list[tuple[int, int]]:
    """Contiguous, disjoint ``[start, stop)`` ranges proportional to ``ratios``."""
    r = np.asarray(ratios, dtype=float)
    if len(r) != 3 or np.any(r <= 0):
        raise InvalidParameters("splits need three positive ratios")
    edges = np.round(np.concatenate([[0], np.cumsum(r)]) / r.sum() * n).astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(3)]


def estimate_unknown_truncation(samples, family: str, set_class, alpha: float, epsilon: float,
                                cfg: Optional[PipelineConfig] = None,
                                rng_seed: int = 0) -> EstimationReport:
    """Estimate ``theta*`` from samples truncated to an unknown set of the given class.

    Parameters
    ----------
    samples : (n, d) array
        Draws from ``E(theta*, S*)``.
    family : {"gaussian", "exponential"}
    set_class : str or tuple
        ``"box"``, ``"halfspace"`` (Gaussian only) or ``("poly", degree)``.
    alpha : float
        Declared lower bound on the mass of ``S*`` under ``theta*``.
    epsilon : float
        Target accuracy; enters the halfspace degeneracy test and the PU
        mixing weight.
    """
    cfg = cfg or PipelineConfig()
    kind_name, degree = parse_set_class(set_class)
    if family not in (GAUSSIAN, EXPONENTIAL):
        raise InvalidParameters(f"unknown family {family!r}")
    if kind_name == HALFSPACE and family != GAUSSIAN:
        raise Unsupported("halfspace learning needs Gaussian marginals")
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or len(x) < 12:
        raise DataError("need an (n, d) sample with n >= 12")
    n, d = x.shape
    parts = split_indices(n, cfg.splits)
    xa, xb, xc = (x[s:e] for s, e in parts)

    # (A) normalization, domain and warm start
    if family == GAUSSIAN:
        # boxes keep their shape only under a diagonal map
        T, dom = preprocess(family, xa, alpha, c_b=cfg.c_b, diagonal=kind_name == BOX)
    else:
        T, dom = preprocess(family, xa, alpha, c_r=cfg.c_r, c_R=cfg.c_R)
    theta0 = init_theta0(T.apply(xa), dom)

    # (B) survival set
    zb = T.apply(xb)
    diag = {}
    if kind_name == BOX:
        S_hat = learn_box(zb)
    elif kind_name == HALFSPACE:
        S_hat, hdiag = learn_halfspace(zb, epsilon, alpha, c=cfg.degeneracy_c,
                                       z_noise=cfg.z_noise, refine_iters=cfg.refine_iters,
                                       tighten=cfg.tighten)
        diag["halfspace"] = hdiag.to_dict()
    else:
        S_hat = learn_set_pu(zb, theta0, epsilon, degree, rng_seed=child_seed(rng_seed, 1),
                             n=cfg.pu_n, iterations=cfg.l1_iterations)

    # (C) PSGD restricted to the learned set
    theta_t, trace = psgd(T.apply(xc), theta0, S_hat, dom, cfg.psgd, rng_seed=child_seed(rng_seed, 2))
    theta_orig = T.params_to_original(theta_t)
    mass = mass_estimate(theta_t, S_hat, cfg.mass_mc, child_seed(rng_seed, 3))

    diag.update({
        "splits": parts,
        "drop_fraction": trace.drop_fraction,
        "learned_set_mass": {"point_estimate": mass.point_estimate, "half_width": mass.half_width,
                             "n": mass.n},
        "psgd": trace.summary(),
        "theta0_original": T.params_to_original(theta0).theta.tolist(),
    })
    config = {"family": family, "set_class": [kind_name, degree], "alpha": alpha,
              "epsilon": epsilon, "seed": rng_seed, "n": n, "d": d, "pipeline": cfg.to_dict()}
    return EstimationReport(theta_orig, theta_t, theta0, S_hat, pullback_set(S_hat, T), T, dom,
                            diag, config)


# ---------------------------------------------------------------------------
# regression

def regression_from_joint(p: NaturalParams) -> tuple[np.ndarray, float, float]:
    """``(w, b, noise variance)`` of ``y | x`` from a joint Gaussian on ``(x, y)``."""
    mu, cov = p.mean, p.cov
    d = p.d - 1
    w = np.linalg.solve(cov[:d, :d], cov[:d, d])
    b = float(mu[d] - mu[:d] @ w)
    return w, b, float(cov[d, d] - cov[:d, d] @ w)


def joint_natural_blocks(w, b: float, sigma_x, mu_x) -> tuple[np.ndarray, np.ndarray]:
    """``(Sigma_bar^{-1}, Sigma_bar^{-1} mu_bar)`` for ``y = w.x + b + N(0, 1)``, ``x ~ N(mu_x, sigma_x)``."""
    w = np.asarray(w, dtype=float)
    mu_x = np.asarray(mu_x, dtype=float)
    prec_x = np.linalg.inv(np.asarray(sigma_x, dtype=float))
    d = len(w)
    P = np.empty((d + 1, d + 1))
    P[:d, :d] = prec_x + np.outer(w, w)
    P[:d, d] = P[d, :d] = -w
    P[d, d] = 1.0
    h = np.concatenate([prec_x @ mu_x - b * w, [b]])
    return P, h


def regression_from_blocks(P: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, float]:
    """Literal read of ``(w, b)`` from the joint precision and linear term (unit noise)."""
    d = P.shape[0] - 1
    return -P[:d, d] / P[d, d], float(h[d] / P[d, d])


def truncated_linear_regression(pairs, set_class, alpha: float, epsilon: float,
                                cfg: Optional[PipelineConfig] = None,
                                rng_seed: int = 0) -> RegressionReport:
    """Regression coefficients from ``(x, y)`` rows truncated jointly to an unknown set."""
    z = np.asarray(pairs, dtype=float)
    if z.ndim != 2 or z.shape[1] < 2:
        raise DataError("pairs need d >= 1 feature columns plus a response column")
    rep = estimate_unknown_truncation(z, GAUSSIAN, set_class, alpha, epsilon, cfg, rng_seed)
    w, b, s2 = regression_from_joint(rep.theta_hat)
    return RegressionReport(w, b, s2, rep)
