"""
Perturbed-MLE solver.

The objective for a survival set ``S`` is the truncated negative
log-likelihood ``L_S(theta) = -E_data[log E(x; theta, S)]``.  Its gradient
is ``E_{E(theta,S)}[t] - E_data[t]`` and its Hessian ``Cov_{E(theta,S)}[t]``,
so one rejection-sampled draw ``z`` from the model restricted to ``S`` and
one data point ``x`` give the unbiased estimate ``t(z) - t(x)``.

:func:`psgd` runs projected SGD on that estimate over
``Omega = B(theta0, radius) ∩ Theta``; the inner loop lives in
:mod:`trunc_estim._kernels`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from . import expfam
from .expfam import EXPONENTIAL, GAUSSIAN, NaturalParams
from ._seeding import as_rng
from .errors import (DataError, InvalidParameters, ProjectionFailure, RejectionBudgetExceeded)
from .preprocess import (DYKSTRA_MAX_SWEEPS, DYKSTRA_TOL, ParameterDomain, _project_ball,
                         _violation, domain_constraints, dykstra, project_interior)
from .truncation import (AxisBox, Full, Halfspace, PolyThreshold, SurvivalSet,
                         sample_truncated)

log = logging.getLogger(__name__)

_FEAS_TOL = 1e-7
_STREAM_CHUNK = 1 << 18


# ---------------------------------------------------------------------------
# configuration and trace

@dataclass
class PSGDConfig:
    """Settings for :func:`psgd`.

    Parameters
    ----------
    step_size : float, optional
        Constant step ``gamma``.  ``None`` picks
        ``step_scale / (1 + max eig Cov[t(data)])``.
    iterations : int, optional
        Number of steps ``N``.  ``None`` uses ``max(min_iterations, passes * n_data)``.
    omega_radius : float, optional
        Radius of the ball around ``theta0``; ``None`` means ``3 Lam / (eta lam alpha)``.
    averaging : {"tail", "last"}
        Return the mean of the last ``tail_fraction`` of iterates, or the last one.
    grad_batch : int
        Data points (and model draws) averaged per step.
    budget : int, optional
        Proposal budget per model draw; ``None`` means ``max(ceil(50 / alpha), 10000)``.
        Iterates near the eigenvalue floor of the domain can have acceptance well
        below ``alpha`` for a few steps before the gradient pulls them back.
    trace_stride : int, optional
        Record every ``trace_stride``-th iterate; ``None`` keeps about 1000 rows.
    backend : str, optional
        ``"python"`` or ``"compiled"``; ``None`` picks the best available.
    """

    step_size: Optional[float] = None
    iterations: Optional[int] = None
    omega_radius: Optional[float] = None
    averaging: str = "tail"
    tail_fraction: float = 0.25
    grad_batch: int = 1
    budget: Optional[int] = None
    trace_stride: Optional[int] = None
    step_scale: float = 0.004
    passes: float = 10.0
    min_iterations: int = 1_000_000
    backend: Optional[str] = None

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise InvalidParameters("step_size must be positive")
        if self.iterations is not None and self.iterations < 0:
            raise InvalidParameters("iterations must be >= 0")
        if self.omega_radius is not None and not self.omega_radius > 0:
            raise InvalidParameters("omega_radius must be positive")
        if self.averaging not in ("tail", "last"):
            raise InvalidParameters("averaging must be 'tail' or 'last'")
        if not 0 < self.tail_fraction <= 1:
            raise InvalidParameters("tail_fraction must lie in (0, 1]")
        if self.grad_batch < 1:
            raise InvalidParameters("grad_batch must be >= 1")
        if self.budget is not None and self.budget < 1:
            raise InvalidParameters("budget must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, obj: dict) -> "PSGDConfig":
        return cls(**obj)


@dataclass
class PSGDTrace:
    """Recorded iterates of one PSGD run.

    Row ``k`` of ``thetas`` is the iterate after step ``iterations[k]``.
    """

    theta0: np.ndarray
    iterations: np.ndarray
    thetas: np.ndarray
    grad_norms: np.ndarray
    proposals: np.ndarray
    theta_last: np.ndarray
    theta_hat: np.ndarray
    n_steps: int
    step_size: float
    omega_radius: float
    mean_sq_grad: float = float("nan")
    total_proposals: int = 0
    drop_fraction: float = 0.0
    sigma_est: float = float("nan")
    backend: str = "python"
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "n_steps": int(self.n_steps),
            "step_size": float(self.step_size),
            "omega_radius": float(self.omega_radius),
            "mean_sq_grad": float(self.mean_sq_grad),
            "total_proposals": int(self.total_proposals),
            "acceptance_rate": (self.n_steps / self.total_proposals) if self.total_proposals else None,
            "drop_fraction": float(self.drop_fraction),
            "sigma_est": float(self.sigma_est),
            "backend": self.backend,
            "notes": list(self.notes),
        }

    def to_csv(self, path=None) -> str:
        """``iteration,grad_norm,proposals`` rows; written to ``path`` if given."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "grad_norm", "proposals"])
        for it, g, p in zip(self.iterations, self.grad_norms, self.proposals):
            writer.writerow([int(it), repr(float(g)), int(p)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# warm start and the constraint region

def init_theta0(samples, dom: ParameterDomain, eta: Optional[float] = None) -> NaturalParams:
    """Moment-matched parameter of the data, pulled into the shrunk domain."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[1] != dom.d or len(x) == 0:
        raise DataError(f"samples must be a non-empty (n, {dom.d}) array")
    tbar = expfam.suff_stats(dom.kind, x).mean(axis=0)
    theta_hat = expfam.moment_match(dom.kind, tbar)
    return project_interior(dom, eta, theta_hat)


def default_omega_radius(dom: ParameterDomain) -> float:
    return 3.0 * dom.Lam / (dom.eta * dom.lam * dom.alpha)


class Omega:
    """``B(theta0, radius) ∩ Theta`` with a Dykstra projection."""

    def __init__(self, theta0: NaturalParams, dom: ParameterDomain, radius: float):
        if not radius > 0:
            raise InvalidParameters("omega radius must be positive")
        if theta0.kind != dom.kind:
            raise InvalidParameters("theta0 family does not match the domain")
        self.center = np.array(theta0.theta)
        self.dom = dom
        self.radius = float(radius)

    def contains(self, theta, tol: float = _FEAS_TOL) -> bool:
        theta = np.asarray(getattr(theta, "theta", theta), dtype=float)
        return (np.linalg.norm(theta - self.center) <= self.radius * (1 + tol) + tol
                and _violation(self.dom, theta) <= tol)

    def project_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.contains(theta, tol=0.0):
            return theta.copy()
        ball = lambda x: _project_ball(x, self.center, self.radius)  # noqa: E731
        return dykstra(theta, [ball] + domain_constraints(self.dom))

    def project(self, p: NaturalParams) -> NaturalParams:
        if self.contains(p.theta, tol=0.0):
            return p
        return NaturalParams(p.kind, self.project_theta(p.theta))


def build_omega(theta0: NaturalParams, dom: ParameterDomain, radius: Optional[float] = None) -> Omega:
    return Omega(theta0, dom, default_omega_radius(dom) if radius is None else radius)


# ---------------------------------------------------------------------------
# gradients

def stochastic_gradient(x, theta: NaturalParams, S: SurvivalSet, rng_seed=None,
                        budget: int = 10_000) -> np.ndarray:
    """One draw of ``t(z) - t(x)`` with ``z ~ E(theta, S)``."""
    if budget < 1:
        raise ValueError("rejection budget must be >= 1")
    z = sample_truncated(theta, S, 1, rng_seed, max_attempts_per_sample=budget).samples[0]
    return expfam.suff_stats(theta.kind, z) - expfam.suff_stats(theta.kind, x)


def pmle_gradient_mc(theta: NaturalParams, S: SurvivalSet, data, n_mc: int, rng_seed=None,
                     budget: int = 10_000) -> np.ndarray:
    """Full-batch gradient with the model expectation estimated from ``n_mc`` draws."""
    data = np.asarray(data, dtype=float)
    z = sample_truncated(theta, S, n_mc, rng_seed, max_attempts_per_sample=budget).samples
    return (expfam.suff_stats(theta.kind, z).mean(axis=0)
            - expfam.suff_stats(theta.kind, data).mean(axis=0))


def pmle_objective_mc(theta: NaturalParams, S: SurvivalSet, data, n_mc: int, rng_seed=None,
                      proposal: Optional[NaturalParams] = None) -> float:
    """Monte-Carlo value of ``L_S(theta)`` up to a theta-free constant.

    ``log E(S; theta)`` is estimated by importance sampling from a fixed
    ``proposal`` (default ``theta``), so with a fixed seed the estimate is a
    smooth function of ``theta`` suitable for finite differences.
    """
    data = np.asarray(data, dtype=float)
    proposal = theta if proposal is None else proposal
    z = expfam.sample(proposal, n_mc, rng_seed)
    inside = S.contains(z)
    logw = expfam.log_density(theta, z[inside]) - expfam.log_density(proposal, z[inside])
    if logw.size == 0:
        return math.inf
    top = np.max(logw)
    log_mass = top + math.log(np.sum(np.exp(logw - top)) / n_mc)
    tbar = expfam.suff_stats(theta.kind, data).mean(axis=0)
    return float(-(theta.theta @ tbar) + expfam.log_partition(theta) + log_mass)


def restricted_hessian_eigs(p: NaturalParams) -> np.ndarray:
    """Eigenvalues of ``Cov[t]`` on the subspace of symmetric quadratic blocks.

    For ``d >= 2`` the Gaussian statistic repeats every off-diagonal entry,
    so the full covariance is singular; this restriction is the curvature
    that PSGD actually sees.
    """
    cov = expfam.suff_stats_cov(p)
    if p.family == EXPONENTIAL or p.d == 1:
        return np.linalg.eigvalsh(cov)
    basis = symmetric_basis(p.d)
    return np.linalg.eigvalsh(basis.T @ cov @ basis)


def symmetric_basis(d: int) -> np.ndarray:
    """Orthonormal basis (columns) of ``{theta : quadratic block symmetric}``."""
    cols = []
    for i in range(d):
        e = np.zeros(d + d * d)
        e[i] = 1.0
        cols.append(e)
    for i in range(d):
        for j in range(i, d):
            e = np.zeros(d + d * d)
            if i == j:
                e[d + i * d + i] = 1.0
            else:
                e[d + i * d + j] = e[d + j * d + i] = math.sqrt(0.5)
            cols.append(e)
    return np.array(cols).T


# ---------------------------------------------------------------------------
# projected SGD

def _set_args(S: SurvivalSet, d: int):
    """Encode a survival set for the kernel; ``None`` if it needs the generic path."""
    empty = np.zeros(0)
    no_exps = np.zeros((0, d), dtype=np.int64)
    base = dict(w=np.zeros(d), tau=0.0, lo=np.zeros(d), hi=np.zeros(d), exps=no_exps,
                coef=empty, thresh=0.0)
    if isinstance(S, Full):
        return _kernels.SET_FULL, base
    if isinstance(S, Halfspace):
        return _kernels.SET_HALFSPACE, dict(base, w=np.ascontiguousarray(S.w), tau=S.tau)
    if isinstance(S, AxisBox):
        return _kernels.SET_BOX, dict(base, lo=np.ascontiguousarray(S.lo), hi=np.ascontiguousarray(S.hi))
    if isinstance(S, PolyThreshold):
        return _kernels.SET_POLY, dict(base, exps=np.ascontiguousarray(S.exponents, dtype=np.int64),
                                       coef=np.ascontiguousarray(S.coef), thresh=S.threshold)
    return None, base


def default_step_size(kind: expfam.FamilyKind, data: np.ndarray, scale: float = 0.004) -> float:
    """``scale / (1 + largest eigenvalue of the empirical Cov[t(x)])``."""
    t = expfam.suff_stats(kind, data)
    cov = np.atleast_2d(np.cov(t, rowvar=False))
    return scale / (1.0 + float(np.linalg.eigvalsh(cov)[-1]))


def psgd(data, theta0: NaturalParams, S: SurvivalSet, dom: ParameterDomain,
         cfg: Optional[PSGDConfig] = None, rng_seed=None) -> tuple[NaturalParams, PSGDTrace]:
    """Projected SGD on the perturbed MLE objective.

    Data outside ``S`` are dropped first (an error if more than half are).
    The data are visited in a fresh random order each epoch, every step
    uses ``grad_batch`` rejection-sampled model draws, and every iterate is
    projected onto ``Omega``.

    Returns
    -------
    (NaturalParams, PSGDTrace)
        The tail-averaged (or last) iterate and the recorded trace.
    """
    cfg = cfg or PSGDConfig()
    kind = dom.kind
    if theta0.kind != kind:
        raise InvalidParameters("theta0 family does not match the domain")
    x = np.ascontiguousarray(np.asarray(data, dtype=float))
    if x.ndim != 2 or x.shape[1] != dom.d:
        raise DataError(f"data must be an (n, {dom.d}) array")
    inside = S.contains(x) if len(x) else np.zeros(0, dtype=bool)
    drop = 1.0 - (float(np.mean(inside)) if len(x) else 0.0)
    if len(x) == 0 or drop > 0.5:
        raise DataError(f"{drop:.1%} of the data fall outside the survival set; refusing to continue")
    if drop > 0:
        log.info("psgd: dropped %.2f%% of data outside S", 100 * drop)
    x = np.ascontiguousarray(x[inside])
    n = len(x)

    gamma = cfg.step_size if cfg.step_size is not None else default_step_size(kind, x, cfg.step_scale)
    N = cfg.iterations if cfg.iterations is not None else int(max(cfg.min_iterations, cfg.passes * n))
    radius = cfg.omega_radius if cfg.omega_radius is not None else default_omega_radius(dom)
    budget = cfg.budget if cfg.budget is not None else max(int(math.ceil(50.0 / dom.alpha)), 10_000)
    stride = cfg.trace_stride or max(1, N // 1000)
    backend = _kernels.get_backend(cfg.backend)
    notes = []
    if drop > 0:
        notes.append(f"dropped {drop:.4f} of data outside S")

    sigma_est = float(restricted_hessian_eigs(theta0)[0])
    if sigma_est > 0 and gamma >= 1.0 / sigma_est:
        msg = f"step size {gamma:.3g} is not below 1/sigma_est = {1.0 / sigma_est:.3g}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    theta = np.array(theta0.theta, dtype=float)
    center = theta.copy()
    m = theta.size
    n_rows = N // stride
    trace_theta = np.zeros((n_rows, m))
    trace_gnorm = np.zeros(n_rows)
    trace_prop = np.zeros(n_rows, dtype=np.int64)
    tail_sum = np.zeros(m)
    totals = np.zeros(2)
    n_tail = max(1, int(math.ceil(cfg.tail_fraction * N))) if N else 0
    tail_start = N - n_tail

    if N == 0:
        tr = PSGDTrace(center, np.zeros(0, dtype=np.int64), trace_theta, trace_gnorm, trace_prop,
                       center.copy(), center.copy(), 0, gamma, radius, drop_fraction=drop,
                       sigma_est=sigma_est, backend=_kernels.backend_name(backend), notes=notes)
        return theta0, tr

    rng = as_rng(rng_seed)
    batch = cfg.grad_batch
    n_order = N * batch
    order = np.concatenate([rng.permutation(n) for _ in range(-(-n_order // n))])[:n_order]
    order = np.ascontiguousarray(order, dtype=np.int64)

    set_code, sargs = _set_args(S, dom.d)
    fam = _kernels.FAMILY_GAUSSIAN if kind.family == GAUSSIAN else _kernels.FAMILY_EXPONENTIAL
    b = float(dom.b or 0.0)
    r = float(dom.r or 0.0)
    R = float(dom.R or 0.0)

    def fresh(size):
        if kind.family == GAUSSIAN:
            return rng.standard_normal(size)
        return rng.random(size)

    if set_code is None:
        done = _generic_steps(kind, theta, x, order, N, gamma, batch, S, rng, budget,
                              Omega(theta0, dom, radius), tail_start, tail_sum, stride,
                              trace_theta, trace_gnorm, trace_prop, totals)
        backend_label = "generic"
    else:
        backend_label = _kernels.backend_name(backend)
        stream = fresh(_STREAM_CHUNK * dom.d)
        pos = 0
        done = 0
        while done < N:
            status, steps, pos = backend.run_steps(
                fam, dom.d, theta, x, order, done, N - done, gamma, batch, stream, pos,
                set_code, sargs["w"], sargs["tau"], sargs["lo"], sargs["hi"], sargs["exps"],
                sargs["coef"], sargs["thresh"], b, r, R, center, radius, budget,
                DYKSTRA_TOL, DYKSTRA_MAX_SWEEPS, tail_start, tail_sum, stride,
                trace_theta, trace_gnorm, trace_prop, totals)
            done += steps
            if status == _kernels.OK:
                break
            if status == _kernels.STREAM_EXHAUSTED:
                stream = np.concatenate([stream[pos:], fresh(_STREAM_CHUNK * dom.d)])
                pos = 0
                continue
            if status == _kernels.BUDGET_EXCEEDED:
                raise RejectionBudgetExceeded(
                    f"step {done + 1}: a model draw needed more than {budget} proposals; "
                    "the iterate left the region where S has non-negligible mass")
            if status == _kernels.PROJECTION_FAILED:
                raise ProjectionFailure(f"step {done + 1}: projection onto Omega did not converge")
            raise InvalidParameters(f"step {done + 1}: iterate is not a valid parameter")

    theta_last = theta.copy()
    if cfg.averaging == "tail":
        theta_hat = tail_sum / n_tail
    else:
        theta_hat = theta_last.copy()
    iters = (np.arange(n_rows, dtype=np.int64) + 1) * stride
    tr = PSGDTrace(center, iters, trace_theta, trace_gnorm, trace_prop, theta_last, theta_hat,
                   N, gamma, radius, mean_sq_grad=totals[0] / N, total_proposals=int(totals[1]),
                   drop_fraction=drop, sigma_est=sigma_est, backend=backend_label, notes=notes)
    return NaturalParams(kind, theta_hat), tr


def _generic_steps(kind, theta, x, order, N, gamma, batch, S, rng, budget, omega,
                   tail_start, tail_sum, stride, trace_theta, trace_gnorm, trace_prop, totals):
    """Python loop for survival sets the kernel cannot encode (membership oracles)."""
    for t in range(1, N + 1):
        p = NaturalParams(kind, theta)
        draws = sample_truncated(p, S, batch, rng, max_attempts_per_sample=budget)
        xb = x[order[(t - 1) * batch:t * batch]]
        v = (expfam.suff_stats(kind, draws.samples).mean(axis=0)
             - expfam.suff_stats(kind, xb).mean(axis=0))
        theta[:] = omega.project_theta(theta - gamma * v)
        gnorm = float(np.linalg.norm(v))
        totals[0] += gnorm * gnorm
        totals[1] += draws.proposals
        if t > tail_start:
            tail_sum += theta
        if t % stride == 0:
            row = t // stride - 1
            trace_theta[row] = theta
            trace_gnorm[row] = gnorm
            trace_prop[row] = draws.proposals
    return N
