import numpy as np
import pytest

from trunc_estim.expfam import FamilyKind, NaturalParams


def gauss(mu, sigma) -> NaturalParams:
    return NaturalParams.gaussian(np.atleast_1d(mu), np.atleast_2d(sigma))


def std_normal() -> NaturalParams:
    return NaturalParams(FamilyKind.gaussian(1), [0.0, 0.5])


def random_gaussian(rng, d, ev_lo=0.5, ev_hi=2.0, mu_scale=1.0) -> NaturalParams:
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    cov = (Q * rng.uniform(ev_lo, ev_hi, d)) @ Q.T
    return NaturalParams.gaussian(rng.normal(scale=mu_scale, size=d), cov)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report one line each; printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(k: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[k])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
