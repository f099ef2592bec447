import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from trunc_estim import expfam
from trunc_estim.errors import DegenerateMoments, DimensionError, InvalidParameters
from trunc_estim.expfam import FamilyKind, MeanCov, NaturalParams

from conftest import random_gaussian, std_normal

G1 = FamilyKind.gaussian(1)
E1 = FamilyKind.exponential(1)


# -- sufficient statistics --------------------------------------------------

def test_suff_stats_gaussian_scalar():
    np.testing.assert_array_equal(expfam.suff_stats(G1, [2.0]), [2.0, -4.0])


def test_suff_stats_exponential_identity():
    np.testing.assert_array_equal(expfam.suff_stats(FamilyKind.exponential(3), [1, 2, 3]), [1, 2, 3])


def test_suff_stats_gaussian_row_major():
    np.testing.assert_array_equal(expfam.suff_stats(FamilyKind.gaussian(2), [1.0, 0.0]),
                                  [1, 0, -1, 0, 0, 0])
    # off-diagonal entries land in row-major slots
    t = expfam.suff_stats(FamilyKind.gaussian(2), [1.0, 2.0])
    np.testing.assert_array_equal(t, [1, 2, -1, -2, -2, -4])


def test_suff_stats_dimension_mismatch():
    with pytest.raises(DimensionError):
        expfam.suff_stats(FamilyKind.gaussian(2), [1.0, 2.0, 3.0])


def test_suff_stats_batch_matches_rows(rng):
    kind = FamilyKind.gaussian(3)
    x = rng.normal(size=(5, 3))
    batch = expfam.suff_stats(kind, x)
    for i in range(5):
        np.testing.assert_array_equal(batch[i], expfam.suff_stats(kind, x[i]))


# -- log partition and moments ----------------------------------------------

def test_log_partition_examples():
    assert expfam.log_partition(std_normal()) == pytest.approx(0.0, abs=1e-15)
    assert expfam.log_partition(NaturalParams(E1, [-1.0])) == pytest.approx(0.0, abs=1e-15)
    assert expfam.log_partition(NaturalParams(G1, [1.0, 0.5])) == pytest.approx(0.5, abs=1e-14)


def test_log_partition_matches_quadrature():
    p = NaturalParams(G1, [1.0, 0.5])
    val, _ = integrate.quad(lambda x: np.exp(p.theta @ expfam.suff_stats(G1, [x])) / np.sqrt(2 * np.pi),
                            -np.inf, np.inf)
    assert np.log(val) == pytest.approx(expfam.log_partition(p), abs=1e-10)


def test_mean_suff_stats_examples():
    np.testing.assert_allclose(expfam.mean_suff_stats(std_normal()), [0, -1])
    np.testing.assert_allclose(expfam.mean_suff_stats(NaturalParams(E1, [-2.0])), [0.5])
    np.testing.assert_allclose(expfam.mean_suff_stats(NaturalParams(G1, [1.0, 0.5])), [1, -2])


def test_mean_suff_stats_monte_carlo():
    p = NaturalParams(G1, [1.0, 0.5])
    t = expfam.suff_stats(G1, expfam.sample(p, 10 ** 6, 0)).mean(axis=0)
    np.testing.assert_allclose(t, [1, -2], atol=1e-2)


def test_moment_match_examples():
    np.testing.assert_allclose(expfam.moment_match(G1, [0, -1]).theta, [0, 0.5], atol=1e-15)
    np.testing.assert_allclose(expfam.moment_match(G1, [1, -2]).theta, [1, 0.5], atol=1e-15)
    np.testing.assert_allclose(expfam.moment_match(FamilyKind.exponential(2), [0.5, 2]).theta, [-2, -0.5])


def test_moment_match_degenerate():
    with pytest.raises(DegenerateMoments):
        expfam.moment_match(G1, [1.0, -1.0])  # implied variance 0
    with pytest.raises(DegenerateMoments):
        expfam.moment_match(E1, [0.0])


def test_suff_stats_cov_matches_monte_carlo(rng):
    p = random_gaussian(rng, 2)
    t = expfam.suff_stats(p.kind, expfam.sample(p, 400_000, 1))
    emp = np.cov(t.T)
    np.testing.assert_allclose(expfam.suff_stats_cov(p), emp, atol=0.15 * np.abs(emp).max())


# -- density and sampling ---------------------------------------------------

def test_density_examples():
    assert expfam.density(std_normal(), [0.0]) == pytest.approx(0.3989422804014327)
    assert expfam.density(NaturalParams(E1, [-1.0]), [0.0]) == pytest.approx(1.0)
    assert expfam.density(NaturalParams(E1, [-1.0]), [-1.0]) == 0.0
    assert expfam.log_density(NaturalParams(E1, [-1.0]), [-1.0]) == -np.inf


@pytest.mark.parametrize("p, lo, hi", [
    (NaturalParams(G1, [0.3, 0.8]), -np.inf, np.inf),
    (NaturalParams(E1, [-2.5]), 0.0, np.inf),
])
def test_density_integrates_to_one(p, lo, hi):
    val, _ = integrate.quad(lambda x: expfam.density(p, [x]), lo, hi, epsabs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_sample_moments():
    x = expfam.sample(std_normal(), 10 ** 6, 3)
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1) < 0.02
    y = expfam.sample(NaturalParams(E1, [-1.0]), 10 ** 6, 4)
    assert abs(y.mean() - 1) < 0.01
    assert y.min() >= 0


def test_sample_deterministic_and_n_zero():
    p = std_normal()
    np.testing.assert_array_equal(expfam.sample(p, 10, 7), expfam.sample(p, 10, 7))
    with pytest.raises(ValueError):
        expfam.sample(p, 0, 1)


def test_suff_stats_cov_psd_and_unit_entry():
    t = expfam.suff_stats(G1, expfam.sample(std_normal(), 10 ** 6, 5))
    c = np.cov(t.T)
    np.testing.assert_allclose(c, c.T)
    assert np.linalg.eigvalsh(c).min() >= -1e-12
    assert c[0, 0] == pytest.approx(1.0, abs=0.02)


# -- parameter conversions ---------------------------------------------------

def test_mean_cov_examples():
    p = expfam.mean_cov_to_params(MeanCov(np.zeros(2), np.eye(2)))
    np.testing.assert_allclose(p.theta, [0, 0, 0.5, 0, 0, 0.5])
    p = expfam.mean_cov_to_params(MeanCov([1.0], [[4.0]]))
    np.testing.assert_allclose(p.theta, [0.25, 0.125])


def test_mean_cov_round_trip(rng):
    for d in (1, 2, 4):
        A = rng.normal(size=(d, d))
        sigma = A @ A.T + d * np.eye(d)
        mu = rng.normal(size=d)
        back = expfam.params_to_mean_cov(expfam.mean_cov_to_params(MeanCov(mu, sigma)))
        np.testing.assert_allclose(back.mu, mu, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(back.sigma, sigma, rtol=1e-12)


def test_invalid_parameters():
    with pytest.raises(InvalidParameters):
        NaturalParams(E1, [0.0])
    with pytest.raises(InvalidParameters):
        NaturalParams(G1, [0.0, -0.5])
    with pytest.raises(DimensionError):
        NaturalParams(G1, [0.0])


def test_quadratic_block_symmetrized():
    p = NaturalParams(FamilyKind.gaussian(2), [0, 0, 1.0, 0.2, 0.0, 1.0])
    np.testing.assert_array_equal(p.theta[2:], [1.0, 0.1, 0.1, 1.0])


def test_json_round_trip():
    p = NaturalParams(FamilyKind.gaussian(2), [0.1, -0.2, 0.7, 0.1, 0.1, 0.4])
    obj = json.loads(p.to_json())
    assert obj == {"family": "gaussian", "d": 2, "theta": p.theta.tolist()}
    assert NaturalParams.from_json(p.to_json()) == p


def test_immutable():
    p = std_normal()
    with pytest.raises(AttributeError):
        p.theta = np.zeros(2)
    with pytest.raises(ValueError):
        p.theta[0] = 1.0


# -- properties ---------------------------------------------------------------

def _random_params(seed, family, d):
    rng = np.random.default_rng(seed)
    if family == "gaussian":
        return random_gaussian(rng, d)
    return NaturalParams(FamilyKind.exponential(d), -rng.uniform(0.3, 3.0, d))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), family=st.sampled_from(["gaussian", "exponential"]),
       d=st.integers(1, 3))
def test_gradient_of_log_partition(seed, family, d):
    p = _random_params(seed, family, d)
    h = 1e-5
    grad = np.empty(p.kind.m)
    for i in range(p.kind.m):
        e = np.zeros(p.kind.m)
        e[i] = h
        if family == "gaussian" and i >= d:
            # move the symmetric pair together; split the derivative between them
            r, c = divmod(i - d, d)
            e[:] = 0
            e[d + r * d + c] += h / 2
            e[d + c * d + r] += h / 2
        up = expfam.log_partition(NaturalParams(p.kind, p.theta + e))
        dn = expfam.log_partition(NaturalParams(p.kind, p.theta - e))
        grad[i] = (up - dn) / (2 * h)
    np.testing.assert_allclose(grad, expfam.mean_suff_stats(p), rtol=1e-4, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), family=st.sampled_from(["gaussian", "exponential"]),
       d=st.integers(1, 3))
def test_moment_match_inverts_mean_map(seed, family, d):
    p = _random_params(seed, family, d)
    back = expfam.moment_match(p.kind, expfam.mean_suff_stats(p))
    np.testing.assert_allclose(back.theta, p.theta, rtol=1e-10, atol=1e-12)
