"""
Closed-form and Monte-Carlo evaluation utilities.

Hazard rate of the standard normal and its polynomial lower bounds,
upper-truncated normal moments, Gaussian divergences, the bridge
constructions used to control chi-square distances, TV distance and the
measure-sandwich and gradient-norm checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import integrate, optimize, special, stats

from . import expfam
from ._seeding import as_rng
from .expfam import EXPONENTIAL, GAUSSIAN, NaturalParams
from .errors import InvalidParameters
from .truncation import MassEstimate

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_CF_SWITCH = 8.0
_CF_TERMS = 60


# ---------------------------------------------------------------------------
# hazard rate

def _hazard_cf(t: np.ndarray) -> np.ndarray:
    """``phi(t) / (1 - Phi(t))`` from the Mills-ratio continued fraction (large ``t``)."""
    # R(t) = 1 / (t + 1 / (t + 2 / (t + 3 / ...)))
    acc = t.copy()
    for k in range(_CF_TERMS, 0, -1):
        acc = t + k / acc
    return acc


def hazard(t):
    """Hazard rate ``H(t) = phi(t) / (1 - Phi(t))`` of the standard normal."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    big = t > _CF_SWITCH
    out[~big] = _SQRT_2_OVER_PI / special.erfcx(t[~big] / math.sqrt(2.0))
    out[big] = _hazard_cf(t[big])
    return out if out.ndim else float(out)


def hazard_lb1(t):
    t = np.asarray(t, dtype=float)
    t2 = t * t
    out = t * (t2 ** 3 + 21 * t2 ** 2 + 105 * t2 + 105) / (t2 ** 3 + 20 * t2 ** 2 + 87 * t2 + 48)
    return out if out.ndim else float(out)


def hazard_lb2(t):
    t = np.asarray(t, dtype=float)
    out = (2 * t + np.sqrt((math.pi - 2) ** 2 * t * t + 2 * math.pi)) / math.pi
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TruncNormalMoments:
    """Moments of ``z ~ N(0, 1)`` conditioned on ``z >= tau``."""

    tau: float
    h: float
    m1: float
    m2: float
    m3: float
    c3: float


def trunc_normal_moments(tau: float) -> TruncNormalMoments:
    tau = float(tau)
    h = float(hazard(tau))
    c3 = h * (tau * tau - 1.0 + 2.0 * h * h - 3.0 * tau * h)
    return TruncNormalMoments(tau, h, h, 1.0 + tau * h, (2.0 + tau * tau) * h, c3)


def third_moment_lower_bound(tau):
    """Explicit piecewise lower bound on the third central moment ``c3(tau)``."""
    tau = np.asarray(tau, dtype=float)
    phi = stats.norm.pdf(tau)
    with np.errstate(divide="ignore"):
        far = phi * 9.0 / (1e4 * 156.0 ** 2) * np.where(tau > 0, tau, 1.0) ** -12.0
    # tau = 0 takes the smaller middle constant
    out = np.where(tau >= 1.2, far, np.where(tau >= 0, phi * 0.004, phi * 0.008))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Gaussian divergences

def _gauss(p: NaturalParams):
    if p.family != GAUSSIAN:
        raise InvalidParameters("expected a Gaussian parameter")
    return p.mean, p.cov


def _logdet(a: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(a)
    return val if sign > 0 else -math.inf


def _is_pd(a: np.ndarray) -> bool:
    return bool(np.linalg.eigvalsh(0.5 * (a + a.T))[0] > 0)


def gaussian_kl(p1: NaturalParams, p2: NaturalParams) -> float:
    """``KL(p1 || p2)``."""
    mu1, s1 = _gauss(p1)
    mu2, s2 = _gauss(p2)
    prec2 = p2.precision
    diff = mu1 - mu2
    return float(0.5 * (np.trace(prec2 @ s1) + diff @ prec2 @ diff - p1.d
                        + _logdet(s2) - _logdet(s1)))


def gaussian_renyi(q: float, p1: NaturalParams, p2: NaturalParams) -> float:
    """Renyi divergence ``D_q(p1 || p2)`` of order ``q > 1``; ``inf`` if the integral diverges.

    Finite iff ``q Sigma_1^{-1} - (q - 1) Sigma_2^{-1}`` is positive definite.
    """
    if not q > 1:
        raise InvalidParameters("Renyi order must exceed 1")
    mu1, s1 = _gauss(p1)
    mu2, s2 = _gauss(p2)
    if not _is_pd(q * p1.precision - (q - 1) * p2.precision):
        return math.inf
    mix = q * s2 + (1 - q) * s1
    diff = mu1 - mu2
    quad = 0.5 * q * diff @ np.linalg.solve(mix, diff)
    logdet = _logdet(mix) - (1 - q) * _logdet(s1) - q * _logdet(s2)
    return float(quad - logdet / (2 * (q - 1)))


def gaussian_chi2(p1: NaturalParams, p2: NaturalParams) -> float:
    """``chi^2(p1 || p2) = int p1^2 / p2 - 1`` by completing the square."""
    mu1, s1 = _gauss(p1)
    mu2, s2 = _gauss(p2)
    P1, P2 = p1.precision, p2.precision
    A = 2 * P1 - P2
    if not _is_pd(A):
        return math.inf
    b = 2 * P1 @ mu1 - P2 @ mu2
    c = 2 * mu1 @ P1 @ mu1 - mu2 @ P2 @ mu2
    log_int = (0.5 * _logdet(s2) - _logdet(s1) - 0.5 * _logdet(A)
               + 0.5 * b @ np.linalg.solve(A, b) - 0.5 * c)
    return float(math.expm1(log_int))


# ---------------------------------------------------------------------------
# bridges

def _sym_sqrt(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (a + a.T))
    w = w ** (-0.5 if inverse else 0.5)
    return (V * w) @ V.T


def bridge_gaussian(p1: NaturalParams, p2: NaturalParams) -> NaturalParams:
    """Gaussian with finite order-3 Renyi divergence from both inputs.

    In coordinates whitened by ``p1`` the bridge is
    ``N(0, U diag(max(1, lambda_i)) U^T)`` where ``U diag(lambda) U^T`` is
    ``p2``'s whitened covariance; it is mapped back with ``p1``'s mean.
    """
    mu1, s1 = _gauss(p1)
    _, s2 = _gauss(p2)
    half = _sym_sqrt(s1)
    inv_half = _sym_sqrt(s1, inverse=True)
    w, U = np.linalg.eigh(inv_half @ s2 @ inv_half)
    B = (U * np.maximum(1.0, w)) @ U.T
    cov = half @ B @ half
    return NaturalParams.gaussian(mu1, 0.5 * (cov + cov.T))


def bridge_gaussian_bound(p1: NaturalParams, p2: NaturalParams) -> float:
    """``1.5 ||S1^-1/2 (mu1 - mu2)||^2 + 0.75 max(1, l_max) ||S1^-1/2 S2 S1^-1/2 - I||_F^2``."""
    mu1, s1 = _gauss(p1)
    mu2, s2 = _gauss(p2)
    inv_half = _sym_sqrt(s1, inverse=True)
    shift = inv_half @ (mu1 - mu2)
    rel = inv_half @ s2 @ inv_half
    lmax = float(np.linalg.eigvalsh(rel)[-1])
    return float(1.5 * shift @ shift
                 + 0.75 * max(1.0, lmax) * np.linalg.norm(rel - np.eye(p1.d)) ** 2)


def bridge_exponential(phi, gamma, rule: str = "max") -> NaturalParams:
    """Product-exponential bridge between natural parameters ``phi`` and ``gamma``.

    ``rule="max"`` (default) takes the componentwise larger natural
    parameter (the smaller rate, i.e. the heavier tail), which keeps the
    order-3 Renyi divergence from both inputs finite.  ``rule="min"`` is
    kept for comparison; it can give infinite divergences.
    """
    phi = np.asarray(phi, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if phi.shape != gamma.shape:
        raise InvalidParameters("bridge inputs differ in dimension")
    if rule not in ("max", "min"):
        raise InvalidParameters("rule must be 'max' or 'min'")
    lam = np.maximum(phi, gamma) if rule == "max" else np.minimum(phi, gamma)
    return NaturalParams.exponential(lam)


def exp_renyi3(p1, p2) -> float:
    """Order-3 Renyi divergence between product exponentials ``p1 = E(phi)``, ``p2 = E(lam)``.

    ``exp(2 R3) = prod phi_i^3 / (lam_i^2 (3 phi_i - 2 lam_i))``; ``inf`` unless
    every ``3 phi_i - 2 lam_i < 0``.
    """
    phi = np.asarray(getattr(p1, "theta", p1), dtype=float)
    lam = np.asarray(getattr(p2, "theta", p2), dtype=float)
    if np.any(phi >= 0) or np.any(lam >= 0):
        raise InvalidParameters("exponential natural parameters must be negative")
    den = 3 * phi - 2 * lam
    if np.any(den >= 0):
        return math.inf
    return float(0.5 * np.sum(3 * np.log(-phi) - 2 * np.log(-lam) - np.log(-den)))


# ---------------------------------------------------------------------------
# total variation

def gaussian_tv(p1: NaturalParams, p2: NaturalParams, n_mc: int = 200_000,
                rng_seed=None) -> MassEstimate:
    """TV distance; quadrature for ``d = 1``, clipped Monte Carlo under ``p1`` otherwise."""
    if p1.kind != p2.kind:
        raise InvalidParameters("TV needs parameters of the same family and dimension")
    if p1 == p2:
        return MassEstimate(0.0, 0, 0.0)
    if p1.d == 1:
        return MassEstimate(_tv_1d(p1, p2), 0, 0.0)
    x = expfam.sample(p1, n_mc, rng_seed)
    ratio = np.exp(np.minimum(expfam.log_density(p2, x) - expfam.log_density(p1, x), math.log(1e6)))
    vals = 0.5 * np.abs(1.0 - ratio)
    return MassEstimate(float(vals.mean()), int(n_mc), 1.96 * float(vals.std()) / math.sqrt(n_mc))


def _tv_1d(p1: NaturalParams, p2: NaturalParams) -> float:
    f = lambda x: abs(expfam.density(p1, [x]) - expfam.density(p2, [x]))  # noqa: E731
    if p1.family == GAUSSIAN:
        lo = min(p1.mean[0] - 12 * math.sqrt(p1.cov[0, 0]), p2.mean[0] - 12 * math.sqrt(p2.cov[0, 0]))
        hi = max(p1.mean[0] + 12 * math.sqrt(p1.cov[0, 0]), p2.mean[0] + 12 * math.sqrt(p2.cov[0, 0]))
    else:
        lo, hi = 0.0, 40.0 / min(-p1.theta[0], -p2.theta[0])
    # split at the density crossings so quad sees smooth pieces
    pts = _crossings(p1, p2, lo, hi)
    val, _ = integrate.quad(f, lo, hi, points=pts or None, epsabs=1e-10, epsrel=1e-10, limit=200)
    return 0.5 * val


def _crossings(p1, p2, lo, hi):
    grid = np.linspace(lo, hi, 4001)
    g = expfam.log_density(p1, grid[:, None]) - expfam.log_density(p2, grid[:, None])
    idx = np.flatnonzero(np.sign(g[1:]) != np.sign(g[:-1]))
    diff = lambda x: float(expfam.log_density(p1, [[x]])[0] - expfam.log_density(p2, [[x]])[0])  # noqa: E731
    return [optimize.brentq(diff, grid[i], grid[i + 1], xtol=1e-14) if g[i] * g[i + 1] < 0
            else float(grid[i] if g[i] == 0 else grid[i + 1]) for i in idx]


def tv_upper_bound(p1: NaturalParams, p2: NaturalParams, Lam: float) -> float:
    """``sqrt(Lam / 2) * ||theta_1 - theta_2||``."""
    return math.sqrt(Lam / 2.0) * float(np.linalg.norm(p1.theta - p2.theta))


# ---------------------------------------------------------------------------
# measure sandwich and gradient norm

def interval_mass(p: NaturalParams, lo: float, hi: float) -> float:
    """Mass of ``[lo, hi]`` under a one-dimensional parameter."""
    if p.d != 1:
        raise InvalidParameters("interval masses are one-dimensional")
    if p.family == GAUSSIAN:
        s = math.sqrt(p.cov[0, 0])
        m = p.mean[0]
        return float(stats.norm.cdf((hi - m) / s) - stats.norm.cdf((lo - m) / s))
    rate = -p.theta[0]
    lo, hi = max(lo, 0.0), max(hi, 0.0)
    return float(math.exp(-rate * lo) - math.exp(-rate * hi))


def sandwich_constant(r: float, R: float, Lam: float) -> float:
    return max(Lam * R * (R + r), 1.0 + R / r)


def measure_sandwich_check(theta1: NaturalParams, theta2: NaturalParams, r: float, R: float,
                           Lam: float, intervals: Iterable, C: Optional[float] = None) -> bool:
    """Check ``e^-C m2^C <= m1 <= e^C m2^(1/C)`` for ``m_i = E(T; theta_i)`` on every interval."""
    C = sandwich_constant(r, R, Lam) if C is None else float(C)
    ok = True
    for lo, hi in intervals:
        m1 = interval_mass(theta1, lo, hi)
        m2 = interval_mass(theta2, lo, hi)
        lower = -C + C * math.log(m2) if m2 > 0 else -math.inf
        upper = C + math.log(m2) / C if m2 > 0 else -math.inf
        lm1 = math.log(m1) if m1 > 0 else -math.inf
        ok &= lower <= lm1 <= upper
    return bool(ok)


def _halfline_stats(mu: float, sigma: float, a: float) -> np.ndarray:
    """``E[t(x)] = [E x, -E x^2]`` for ``x ~ N(mu, sigma^2)`` given ``x >= a``."""
    tm = trunc_normal_moments((a - mu) / sigma)
    ex = mu + sigma * tm.m1
    ex2 = mu * mu + 2 * mu * sigma * tm.m1 + sigma * sigma * tm.m2
    return np.array([ex, -ex2])


def gradient_norm_at_truth(mu: float, sigma: float, s_star: float, s: float) -> float:
    """``||E_{S* ∩ S}[t] - E_S[t]||`` for half-lines ``S* = [s_star, inf)`` and ``S = [s, inf)``."""
    both = max(s_star, s)
    return float(np.linalg.norm(_halfline_stats(mu, sigma, both) - _halfline_stats(mu, sigma, s)))


def gradient_norm_bound(mu: float, sigma: float, s_star: float, s: float, Lam: float,
                        alpha: float, eta: float) -> float:
    """``3 Lam e^(2 + 2 Lam eta^2) / (alpha eta) * E(S xor S*) / E(S*)`` for half-lines."""
    p = NaturalParams.gaussian([mu], [[sigma * sigma]])
    lo, hi = sorted((s_star, s))
    sym = interval_mass(p, lo, hi)
    mass_star = interval_mass(p, s_star, math.inf)
    return 3 * Lam * math.exp(2 + 2 * Lam * eta * eta) / (alpha * eta) * sym / mass_star
