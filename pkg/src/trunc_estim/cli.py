"""
Command-line harness.

    trunc-estim gen      --config exp.json --out DIR [--seed N]
    trunc-estim estimate --config exp.json --data DIR/data.csv --out report.json [--repeats K]
    trunc-estim regress  --config exp.json --data DIR/data.csv --out report.json
    trunc-estim verify   [--suite NAME] [--out checks.csv]
    trunc-estim bench    [--config exp.json] [--out timing.csv] [--repeats K]

The exit code is nonzero iff a command raised or a verify check failed.
``TRUNC_ESTIM_THREADS`` caps the number of worker processes for repeats.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, _kernels, expfam, pmle, verify
from ._seeding import child_seed
from .errors import DataError, InvalidParameters, TruncEstimError
from .expfam import EXPONENTIAL, GAUSSIAN, NaturalParams
from .pipeline import (PipelineConfig, estimate_unknown_truncation, joint_natural_blocks,
                       parse_set_class, truncated_linear_regression)
from .preprocess import gaussian_domain
from .truncation import Halfspace, mass_estimate, sample_truncated, set_from_dict

log = logging.getLogger("trunc_estim")

HOLDOUT_FRACTION = 0.1


# ---------------------------------------------------------------------------
# experiment config

@dataclass
class ExperimentConfig:
    """Everything needed to regenerate data and rerun an estimate.

    The truth is given as ``theta`` (natural parameters), ``mu``/``sigma``
    (Gaussian) or ``rate`` (exponential).  When ``regression`` is set the
    truth is instead the joint law of ``(x, y)`` with
    ``y = w.x + b + N(0, 1)`` and ``x ~ N(mu_x, sigma_x)``.
    """

    family: str = GAUSSIAN
    d: int = 1
    truth: dict = field(default_factory=dict)
    survival_set: dict = field(default_factory=lambda: {"type": "full"})
    set_class: str = "halfspace"
    n: int = 1000
    alpha: float = 0.25
    epsilon: float = 0.1
    degree: Optional[int] = None
    regression: Optional[dict] = None
    pipeline: dict = field(default_factory=dict)
    seed: int = 0
    repeats: int = 1
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in (GAUSSIAN, EXPONENTIAL):
            raise InvalidParameters(f"family must be {GAUSSIAN!r} or {EXPONENTIAL!r}, got {self.family!r}")
        if self.n < 1 or self.d < 1 or self.repeats < 1:
            raise InvalidParameters("n, d and repeats must be positive")
        if not 0 < self.alpha < 1:
            raise InvalidParameters("alpha must lie in (0, 1)")

    # -- truth ---------------------------------------------------------------
    def true_params(self) -> NaturalParams:
        if self.regression is not None:
            r = self.regression
            if self.family != GAUSSIAN:
                raise InvalidParameters("regression needs the Gaussian family")
            P, h = joint_natural_blocks(r["w"], r["b"], r["sigma_x"], r["mu_x"])
            cov = np.linalg.inv(P)
            return NaturalParams.gaussian(cov @ h, 0.5 * (cov + cov.T))
        t = self.truth
        if "theta" in t:
            kind = expfam.FamilyKind(self.family, self.d)
            return NaturalParams(kind, t["theta"])
        if self.family == GAUSSIAN:
            return NaturalParams.gaussian(t["mu"], t["sigma"])
        return NaturalParams.exponential(-np.asarray(t["rate"], dtype=float))

    @property
    def data_dim(self) -> int:
        return self.d + 1 if self.regression is not None else self.d

    def set_class_arg(self):
        if self.degree is not None:
            return (self.set_class, self.degree)
        return self.set_class

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig.from_dict(self.pipeline)

    # -- canonical JSON -------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(obj) - known)
        if extra:
            raise InvalidParameters(f"unknown config keys: {extra}")
        return cls(**obj)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from None
        try:
            return cls.from_json(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path} is not valid JSON: {exc}") from None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, separators=(",", ": "), allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# CSV helpers

def write_csv(path, x: np.ndarray, header) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in x:
        w.writerow([repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def _is_numeric_row(row) -> bool:
    try:
        [float(v) for v in row]
    except ValueError:
        return False
    return True


def read_csv(path, d: Optional[int] = None) -> np.ndarray:
    """Sample matrix from CSV; a leading non-numeric row is taken as the header."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataError(f"cannot read data {path}: {exc}") from None
    if rows and not _is_numeric_row(rows[0]):
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    try:
        x = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from None
    if d is not None and x.shape[1] != d:
        raise DataError(f"{path}: {x.shape[1]} columns but the config expects {d}")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{path}: data contain NaN or inf")
    return x


def _header(cfg: ExperimentConfig):
    cols = [f"x{i}" for i in range(cfg.d)]
    return cols + ["y"] if cfg.regression is not None else cols


# ---------------------------------------------------------------------------
# commands

def cmd_gen(cfg: ExperimentConfig, out_dir, seed: Optional[int] = None) -> dict:
    """Write ``data.csv`` (truncated samples) and ``truth.json``."""
    seed = cfg.seed if seed is None else seed
    p = cfg.true_params()
    S = set_from_dict(cfg.survival_set)
    draws = sample_truncated(p, S, cfg.n, child_seed(seed, 0),
                             max_attempts_per_sample=max(10_000, math.ceil(50 / cfg.alpha)))
    mass = mass_estimate(p, S, 100_000, child_seed(seed, 1))
    log.info("gen: acceptance rate %.4f (mass estimate %.4f +- %.4f)",
             draws.acceptance_rate, mass.point_estimate, mass.half_width)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "data.csv", draws.samples, _header(cfg))
    truth = {"theta": p.to_dict(), "survival_set": S.to_dict(), "seed": seed,
             "acceptance_rate": draws.acceptance_rate, "proposals": draws.proposals,
             "mass": {"point_estimate": mass.point_estimate, "half_width": mass.half_width},
             "config": cfg.to_dict()}
    (out / "truth.json").write_text(canonical_json(truth))
    return truth


def truncated_loglik(report, x: np.ndarray) -> float:
    """Average truncated log-density of held-out ``x`` under a report.

    Held-out points outside the learned set have zero model density; instead
    of returning ``-inf`` they enter through ``log`` of the covered fraction,
    which keeps scores finite and still penalizes sets that cut off data.
    """
    inside = report.learned_set_original.contains(x)
    mass = report.diagnostics["learned_set_mass"]["point_estimate"]
    if not np.any(inside) or mass <= 0:
        return -1e300
    ll = expfam.log_density(report.theta_hat, x[inside]) - math.log(mass)
    return float(ll.mean() + math.log(inside.mean()))


def _run_one(args):
    x, family, set_class, alpha, epsilon, pcfg, seed = args
    return estimate_unknown_truncation(x, family, set_class, alpha, epsilon,
                                       PipelineConfig.from_dict(pcfg), seed)


def _workers(repeats: int) -> int:
    cap = os.environ.get("TRUNC_ESTIM_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InvalidParameters(f"TRUNC_ESTIM_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(n, repeats))


def cmd_estimate(cfg: ExperimentConfig, x: np.ndarray, seed: Optional[int] = None,
                 repeats: Optional[int] = None) -> dict:
    """Run the pipeline; with ``repeats > 1`` pick the median held-out likelihood run."""
    seed = cfg.seed if seed is None else seed
    repeats = cfg.repeats if repeats is None else repeats
    if repeats < 1:
        raise InvalidParameters("repeats must be >= 1")
    pcfg = cfg.pipeline_config().to_dict()
    parse_set_class(cfg.set_class_arg())
    if repeats == 1:
        rep = _run_one((x, cfg.family, cfg.set_class_arg(), cfg.alpha, cfg.epsilon, pcfg, seed))
        return {"report": rep.to_dict(), "experiment": cfg.to_dict(), "seed": seed, "repeats": 1}

    perm = np.random.default_rng(child_seed(seed, 99)).permutation(len(x))
    n_hold = max(1, int(round(HOLDOUT_FRACTION * len(x))))
    hold, fit = x[perm[:n_hold]], x[perm[n_hold:]]
    seeds = [child_seed(seed, 100 + k) for k in range(repeats)]
    jobs = [(fit, cfg.family, cfg.set_class_arg(), cfg.alpha, cfg.epsilon, pcfg, s) for s in seeds]
    nw = _workers(repeats)
    if nw == 1:
        reports = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            reports = list(ex.map(_run_one, jobs))
    scores = [truncated_loglik(r, hold) for r in reports]
    # median: lower middle element of the sorted scores, ties by repeat index
    order = sorted(range(repeats), key=lambda k: (scores[k], k))
    pick = order[(repeats - 1) // 2]
    return {"report": reports[pick].to_dict(), "selected": pick, "scores": scores,
            "candidates": [r.theta_hat.to_dict() for r in reports],
            "candidate_seeds": seeds, "holdout": n_hold,
            "experiment": cfg.to_dict(), "seed": seed, "repeats": repeats}


def cmd_regress(cfg: ExperimentConfig, xy: np.ndarray, seed: Optional[int] = None) -> dict:
    seed = cfg.seed if seed is None else seed
    if xy.shape[1] < 2:
        raise DataError("regression data need at least one feature column and a response column")
    rep = truncated_linear_regression(xy, cfg.set_class_arg(), cfg.alpha, cfg.epsilon,
                                      cfg.pipeline_config(), seed)
    out = rep.to_dict()
    out.update({"experiment": cfg.to_dict(), "seed": seed})
    return out


def cmd_verify(suite: Optional[str] = None):
    """Return ``(csv_text, all_passed)``."""
    results = verify.run_suite(suite)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "status", "worst_margin"])
    for r in results:
        w.writerow([r.name, "pass" if r.passed else "fail", repr(r.margin)])
    return buf.getvalue(), all(r.passed for r in results)


def bench_psgd(steps: int = 200_000, n: int = 100_000, repeats: int = 3, seed: int = 0,
               backends=None) -> list[dict]:
    """Time the PSGD loop on a one-dimensional half-normal problem for each backend."""
    x = np.abs(np.random.default_rng(seed).standard_normal((n, 1)))
    S = Halfspace(np.array([1.0]), 0.0)
    dom = gaussian_domain(1, 0.5)
    theta0 = pmle.init_theta0(x, dom)
    names = backends or [b for b in ("compiled", "python") if b in _kernels.BACKENDS]
    rows = []
    for name in names:
        k = steps if name == "compiled" else max(1, steps // 20)
        cfg = pmle.PSGDConfig(iterations=k, backend=name)
        for r in range(repeats):
            t0 = time.perf_counter()
            pmle.psgd(x, theta0, S, dom, cfg, rng_seed=child_seed(seed, r))
            dt = time.perf_counter() - t0
            rows.append({"backend": name, "repeat": r, "steps": k, "seconds": dt,
                         "steps_per_second": k / dt})
    return rows


def cmd_bench(cfg: Optional[ExperimentConfig] = None, repeats: int = 3, seed: int = 0) -> str:
    n = cfg.n if cfg is not None else 100_000
    rows = bench_psgd(n=n, repeats=repeats, seed=seed)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["backend", "repeat", "steps", "seconds", "steps_per_second"],
                       lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trunc-estim",
                                 description="Estimation under unknown truncation.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True, data=False):
        if config:
            p.add_argument("--config", required=True, help="experiment config (JSON)")
        if data:
            p.add_argument("--data", required=True, help="CSV sample matrix, header row optional")
        p.add_argument("--out", help="output path (stdout when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")

    common(sub.add_parser("gen", help="generate truncated samples and ground truth"))
    p = sub.add_parser("estimate", help="run the unknown-truncation pipeline")
    common(p, data=True)
    p.add_argument("--repeats", type=int, help="independent runs; the median held-out likelihood wins")
    common(sub.add_parser("regress", help="truncated linear regression"), data=True)
    p = sub.add_parser("verify", help="run the analytic invariant checks")
    p.add_argument("--suite", choices=sorted(verify.CHECKS), help="run one suite only")
    p.add_argument("--out")
    p = sub.add_parser("bench", help="time the PSGD backends")
    p.add_argument("--config", help="experiment config; only n is used")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    return ap


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "gen":
            cfg = ExperimentConfig.load(args.config)
            out = args.out or cfg.outputs.get("dir") or "."
            truth = cmd_gen(cfg, out, args.seed)
            print(f"wrote {Path(out) / 'data.csv'} ({cfg.n} rows, acceptance "
                  f"{truth['acceptance_rate']:.4f})", file=sys.stderr)
            return 0
        if args.command == "estimate":
            cfg = ExperimentConfig.load(args.config)
            x = read_csv(args.data, cfg.data_dim)
            _emit(canonical_json(cmd_estimate(cfg, x, args.seed, args.repeats)), args.out)
            return 0
        if args.command == "regress":
            cfg = ExperimentConfig.load(args.config)
            if cfg.regression is None and cfg.family != GAUSSIAN:
                raise InvalidParameters("regression needs the Gaussian family")
            x = read_csv(args.data)
            _emit(canonical_json(cmd_regress(cfg, x, args.seed)), args.out)
            return 0
        if args.command == "verify":
            text, ok = cmd_verify(args.suite)
            _emit(text, args.out)
            return 0 if ok else 1
        if args.command == "bench":
            cfg = ExperimentConfig.load(args.config) if args.config else None
            _emit(cmd_bench(cfg, args.repeats, args.seed), args.out)
            return 0
    except (TruncEstimError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
