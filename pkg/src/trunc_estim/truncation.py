"""
Survival sets, truncated sampling and Monte-Carlo mass estimates.

Every set exposes ``contains(x)`` which accepts one point or an ``(n, d)``
array of rows and returns a bool (or bool array).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import expfam
from ._seeding import as_rng
from .errors import DimensionError, InvalidParameters, RejectionBudgetExceeded

_UNIT_TOL = 1e-10


def _rows(x, d: Optional[int]) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x = x.reshape(1, -1) if single else x
    if d is not None and x.shape[1] != d:
        raise DimensionError(f"point dimension {x.shape[1]} does not match set dimension {d}")
    return x, single


def _ret(mask: np.ndarray, single: bool):
    return bool(mask[0]) if single else mask


class SurvivalSet:
    """Base class; subclasses implement ``_mask`` on an ``(n, d)`` array."""

    def contains(self, x):
        pts, single = _rows(x, getattr(self, "d", None))
        return _ret(self._mask(pts), single)

    def _mask(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Full(SurvivalSet):
    d: Optional[int] = None

    def _mask(self, pts):
        return np.ones(len(pts), dtype=bool)

    def to_dict(self):
        return {"type": "full", "d": self.d}


@dataclass(frozen=True, eq=False)
class Halfspace(SurvivalSet):
    """``{x : w . x >= tau}`` with ``w`` a unit vector."""

    w: np.ndarray
    tau: float

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if abs(np.linalg.norm(w) - 1.0) > _UNIT_TOL:
            raise InvalidParameters("halfspace normal must have unit length")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def from_normal(cls, w, tau: float) -> "Halfspace":
        """Build from a non-normalized normal, rescaling ``tau`` to match."""
        w = np.asarray(w, dtype=float)
        norm = np.linalg.norm(w)
        return cls(w / norm, tau / norm)

    @property
    def d(self):
        return self.w.size

    def _mask(self, pts):
        return pts @ self.w >= self.tau

    def to_dict(self):
        return {"type": "halfspace", "w": self.w.tolist(), "tau": self.tau}


@dataclass(frozen=True, eq=False)
class AxisBox(SurvivalSet):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise DimensionError("box bounds must have equal length")
        if np.any(lo > hi):
            raise InvalidParameters("box requires lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def d(self):
        return self.lo.size

    def _mask(self, pts):
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def to_dict(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


def monomial_exponents(d: int, degree: int) -> np.ndarray:
    """Exponent rows of all monomials of total degree <= ``degree``.

    Graded-lexicographic order: by total degree, then lexicographically
    (``x1^2, x1 x2, x2^2`` for degree two in two variables).
    """
    rows = []
    for deg in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            e = np.zeros(d, dtype=np.int64)
            for j in combo:
                e[j] += 1
            rows.append(e)
    return np.array(rows, dtype=np.int64).reshape(-1, d)


def monomial_features(x: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    feats = np.ones((x.shape[0], exponents.shape[0]))
    top = int(exponents.max(initial=0))
    powers = [np.ones_like(x)]
    for _ in range(top):
        powers.append(powers[-1] * x)
    for k, e in enumerate(exponents):
        for j in np.flatnonzero(e):
            feats[:, k] *= powers[e[j]][:, j]
    return feats


@dataclass(frozen=True, eq=False)
class PolyThreshold(SurvivalSet):
    """``{x : p(x) >= threshold}`` for a polynomial in graded-lex monomials."""

    d: int
    degree: int
    coef: np.ndarray
    threshold: float

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float).reshape(-1)
        expected = math.comb(self.d + self.degree, self.degree)
        if coef.size != expected:
            raise DimensionError(f"degree-{self.degree} polynomial in {self.d} variables "
                                 f"needs {expected} coefficients, got {coef.size}")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "_exponents", monomial_exponents(self.d, self.degree))

    @property
    def exponents(self) -> np.ndarray:
        return self._exponents

    def evaluate(self, x) -> np.ndarray:
        pts, _ = _rows(x, self.d)
        return monomial_features(pts, self._exponents) @ self.coef

    def _mask(self, pts):
        return monomial_features(pts, self._exponents) @ self.coef >= self.threshold

    def to_dict(self):
        return {"type": "poly", "d": self.d, "degree": self.degree,
                "coef": self.coef.tolist(), "threshold": self.threshold}


@dataclass(frozen=True, eq=False)
class ExternalOracle(SurvivalSet):
    """Wraps an arbitrary membership predicate.

    ``fn`` receives an ``(n, d)`` array and must return a length-``n`` bool
    array.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    d: Optional[int] = None
    description: str = "external"

    def _mask(self, pts):
        return np.asarray(self.fn(pts), dtype=bool).reshape(len(pts))

    def to_dict(self):
        return {"type": "external", "d": self.d, "description": self.description}


def set_from_dict(obj: dict) -> SurvivalSet:
    kind = obj["type"]
    if kind == "full":
        return Full(obj.get("d"))
    if kind == "halfspace":
        return Halfspace(obj["w"], obj["tau"])
    if kind == "box":
        return AxisBox(obj["lo"], obj["hi"])
    if kind == "poly":
        return PolyThreshold(int(obj["d"]), int(obj["degree"]), obj["coef"], obj["threshold"])
    raise InvalidParameters(f"cannot deserialize survival set of type {kind!r}")


def contains(S: SurvivalSet, x):
    return S.contains(x)


# ---------------------------------------------------------------------------
# sampling and mass estimation

@dataclass(frozen=True)
class MassEstimate:
    point_estimate: float
    n: int
    half_width: float

    @classmethod
    def from_count(cls, hits: int, n: int) -> "MassEstimate":
        p = hits / n
        return cls(p, n, 1.96 * math.sqrt(p * (1.0 - p) / n))

    @property
    def interval(self) -> tuple[float, float]:
        return self.point_estimate - self.half_width, self.point_estimate + self.half_width


@dataclass
class TruncatedDraws:
    samples: np.ndarray
    proposals: int

    @property
    def acceptance_rate(self) -> float:
        return len(self.samples) / self.proposals


def default_max_attempts(alpha: float) -> int:
    """Per-sample proposal budget ``ceil(50 / alpha)``."""
    return int(math.ceil(50.0 / alpha))


def sample_truncated(p: expfam.NaturalParams, S: SurvivalSet, n: int, rng_seed=None,
                     max_attempts_per_sample: int = 10_000) -> TruncatedDraws:
    """Rejection sampler for ``E(theta)`` conditioned on ``S``.

    Proposals are drawn in vectorized batches; every accepted point is
    attributed the number of proposals it consumed so the per-sample budget
    is enforced exactly as a sequential sampler would.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if max_attempts_per_sample < 1:
        raise ValueError("max_attempts_per_sample must be >= 1")
    rng = as_rng(rng_seed)
    out = np.empty((n, p.d))
    filled = 0
    proposals = 0
    since = 0  # proposals spent on the sample currently being drawn
    batch = max(64, 2 * n)
    while filled < n:
        z = expfam.sample(p, batch, rng)
        hit = np.flatnonzero(S.contains(z))[: n - filled]
        if hit.size:
            cost = np.diff(hit, prepend=-1)
            cost[0] += since
            if cost.max() > max_attempts_per_sample:
                raise RejectionBudgetExceeded(
                    f"a sample needed more than {max_attempts_per_sample} proposals; "
                    "the survival set has too little mass under this parameter")
            out[filled:filled + hit.size] = z[hit]
            filled += hit.size
            since = batch - 1 - int(hit[-1])
        else:
            since += batch
        proposals += batch if filled < n else int(hit[-1]) + 1
        if filled < n and since > max_attempts_per_sample:
            raise RejectionBudgetExceeded(
                f"a sample needed more than {max_attempts_per_sample} proposals; "
                "the survival set has too little mass under this parameter")
    assert np.all(S.contains(out))
    return TruncatedDraws(out, proposals)


def mass_estimate(p: expfam.NaturalParams, S: SurvivalSet, n: int, rng_seed=None) -> MassEstimate:
    """Fraction of ``n`` untruncated draws landing in ``S``."""
    if n < 100:
        raise ValueError("mass_estimate needs n >= 100")
    if isinstance(S, Full):
        return MassEstimate(1.0, int(n), 0.0)
    z = expfam.sample(p, n, rng_seed)
    return MassEstimate.from_count(int(np.count_nonzero(S.contains(z))), int(n))


def sym_diff_mass(p: expfam.NaturalParams, S1: SurvivalSet, S2: SurvivalSet, n: int,
                  rng_seed=None) -> MassEstimate:
    """Monte-Carlo mass of ``S1 xor S2`` under ``E(theta)``."""
    if n < 100:
        raise ValueError("sym_diff_mass needs n >= 100")
    if S1 is S2:
        return MassEstimate(0.0, int(n), 0.0)
    z = expfam.sample(p, n, rng_seed)
    diff = S1.contains(z) ^ S2.contains(z)
    return MassEstimate.from_count(int(np.count_nonzero(diff)), int(n))
