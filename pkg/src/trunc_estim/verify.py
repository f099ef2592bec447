"""
Analytic invariant checks behind ``trunc-estim verify``.

Every check returns a :class:`CheckResult` whose ``margin`` is the worst
slack over its grid (positive means the inequality holds with room to
spare, negative means it is violated).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import integrate, stats

from . import metrics as M
from ._seeding import as_rng
from .expfam import NaturalParams
from .preprocess import contains_domain, gaussian_domain, gaussian_theta_constants

SANDWICH_INTERVALS = ((-3.0, -2.0), (-1.0, 0.0), (0.0, 1.0), (2.0, 3.0))
GRADIENT_DELTAS = (0.01, 0.05, 0.1)


@dataclass(frozen=True)
class CheckResult:
    name: str
    suite: str
    passed: bool
    margin: float
    detail: str = ""


def _result(name, suite, margin, detail="") -> CheckResult:
    return CheckResult(name, suite, bool(margin >= 0), float(margin), detail)


# ---------------------------------------------------------------------------
# hazard rate

def hazard_grid(n: int = 2000) -> np.ndarray:
    return np.linspace(10.0 / n, 10.0, n)


def check_hazard_lb1() -> CheckResult:
    t = hazard_grid()
    return _result("hazard_ge_lb1", "hazard", np.min(M.hazard(t) - M.hazard_lb1(t) + 1e-10))


def check_hazard_lb2() -> CheckResult:
    t = hazard_grid()
    return _result("hazard_ge_lb2", "hazard", np.min(M.hazard(t) - M.hazard_lb2(t) + 1e-10))


def check_lb1_ge_identity() -> CheckResult:
    t = hazard_grid()
    return _result("lb1_ge_t", "hazard", np.min(M.hazard_lb1(t) - t))


# ---------------------------------------------------------------------------
# truncated-normal moments

def quad_moment(tau: float, k: int) -> float:
    """``E[z^k | z >= tau]`` by adaptive quadrature on ``[tau, tau + 40]``."""
    tail = stats.norm.sf(tau)
    val, _ = integrate.quad(lambda z: z ** k * stats.norm.pdf(z), tau, tau + 40.0,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val / tail


def check_moments_quadrature(taus: Optional[Iterable[float]] = None, tol: float = 1e-6) -> CheckResult:
    taus = np.linspace(-5, 5, 41) if taus is None else taus
    worst = 0.0
    for tau in taus:
        m = M.trunc_normal_moments(tau)
        err = max(abs(m.m1 - quad_moment(tau, 1)), abs(m.m2 - quad_moment(tau, 2)),
                  abs(m.m3 - quad_moment(tau, 3)))
        worst = max(worst, err)
    return _result("moments_vs_quadrature", "moments", tol - worst, f"max abs err {worst:.3g}")


def c3_grid(n: int = 2000) -> np.ndarray:
    return np.linspace(-10.0, 10.0, n)


def check_c3_positive() -> CheckResult:
    c3 = np.array([M.trunc_normal_moments(t).c3 for t in c3_grid()])
    return _result("c3_positive", "c3", c3.min())


def check_c3_lower_bound() -> CheckResult:
    g = c3_grid()
    c3 = np.array([M.trunc_normal_moments(t).c3 for t in g])
    return _result("c3_ge_lower_bound", "c3", np.min(c3 - M.third_moment_lower_bound(g)))


# ---------------------------------------------------------------------------
# gradient norm at the truth

def check_gradient_norm(alpha: float = 0.5, deltas=GRADIENT_DELTAS) -> CheckResult:
    """Half-line sets ``S = [s, inf)`` around ``S* = [0, inf)`` for a standard normal."""
    dom = gaussian_domain(1, alpha)
    worst = math.inf
    for delta in deltas:
        for s in (delta, -delta):
            g = M.gradient_norm_at_truth(0.0, 1.0, 0.0, s)
            bound = M.gradient_norm_bound(0.0, 1.0, 0.0, s, dom.Lam, dom.alpha, dom.eta)
            worst = min(worst, bound - g)
    return _result("gradient_norm_bound", "gradient", worst)


# ---------------------------------------------------------------------------
# measure sandwich

def sandwich_margin(p1: NaturalParams, p2: NaturalParams, C: float, intervals=SANDWICH_INTERVALS) -> float:
    """Worst log-space slack of ``e^-C m2^C <= m1 <= e^C m2^(1/C)``."""
    worst = math.inf
    for lo, hi in intervals:
        l1 = math.log(M.interval_mass(p1, lo, hi))
        l2 = math.log(M.interval_mass(p2, lo, hi))
        worst = min(worst, l1 - (C * l2 - C), (C + l2 / C) - l1)
    return worst


def _sandwich_pair():
    dom = gaussian_domain(1, 0.5)
    p1 = NaturalParams.gaussian([0.0], [[1.0]])
    p2 = NaturalParams.gaussian([1.0], [[1.0]])
    return p1, p2, M.sandwich_constant(dom.eta, 1.0, dom.Lam)


def check_sandwich() -> CheckResult:
    p1, p2, C = _sandwich_pair()
    return _result("sandwich_holds", "sandwich", sandwich_margin(p1, p2, C), f"C={C:.4g}")


def check_sandwich_sharp() -> CheckResult:
    """``C = 1.0001`` must break the sandwich on some interval."""
    p1, p2, _ = _sandwich_pair()
    return _result("sandwich_fails_small_C", "sandwich", -sandwich_margin(p1, p2, 1.0001))


# ---------------------------------------------------------------------------
# random pairs from a Gaussian domain

def random_domain_gaussian(d: int, rng, b: float = 1.0) -> NaturalParams:
    """A point of ``GaussianTheta(b)`` with covariance eigenvalues in ``[0.6, 1]``."""
    dom = gaussian_domain(d, 0.5, b=b)
    while True:
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        cov = (Q * rng.uniform(0.6, 1.0, d)) @ Q.T
        prec_mu = rng.normal(size=d)
        prec_mu *= rng.uniform(0, b) / np.linalg.norm(prec_mu)
        p = NaturalParams.gaussian(cov @ prec_mu, cov)
        if contains_domain(dom, p):
            return p


def check_bridge(n_pairs: int = 100, d: int = 2, seed: int = 0) -> CheckResult:
    rng = as_rng(seed)
    worst = math.inf
    for _ in range(n_pairs):
        p1 = random_domain_gaussian(d, rng)
        p2 = random_domain_gaussian(d, rng)
        q = M.bridge_gaussian(p1, p2)
        bound = M.bridge_gaussian_bound(p1, p2)
        r = max(M.gaussian_renyi(3, p1, q), M.gaussian_renyi(3, p2, q))
        worst = min(worst, bound - r)
    return _result("bridge_renyi3_bound", "bridge", worst)


def check_tv_bound(n_pairs: int = 100, seed: int = 1) -> CheckResult:
    """One-dimensional pairs so the TV distance is exact quadrature."""
    rng = as_rng(seed)
    _, Lam = gaussian_theta_constants(1.0)
    worst = math.inf
    for _ in range(n_pairs):
        p1 = random_domain_gaussian(1, rng)
        p2 = random_domain_gaussian(1, rng)
        tv = M.gaussian_tv(p1, p2).point_estimate
        worst = min(worst, M.tv_upper_bound(p1, p2, Lam) - tv)
    return _result("tv_le_smoothness_bound", "tv", worst)


CHECKS: dict[str, list[Callable[[], CheckResult]]] = {
    "hazard": [check_hazard_lb1, check_hazard_lb2, check_lb1_ge_identity],
    "moments": [check_moments_quadrature],
    "c3": [check_c3_positive, check_c3_lower_bound],
    "gradient": [check_gradient_norm],
    "sandwich": [check_sandwich, check_sandwich_sharp],
    "bridge": [check_bridge],
    "tv": [check_tv_bound],
}


def run_suite(suite: Optional[str] = None) -> list[CheckResult]:
    """Run one suite, or all of them when ``suite`` is None."""
    if suite is not None and suite not in CHECKS:
        raise KeyError(f"unknown suite {suite!r}; choose from {sorted(CHECKS)}")
    names = [suite] if suite else list(CHECKS)
    return [fn() for name in names for fn in CHECKS[name]]
