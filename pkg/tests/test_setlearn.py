import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trunc_estim import expfam, setlearn
from trunc_estim.errors import DataError, FeatureCapExceeded, InvalidParameters
from trunc_estim.expfam import NaturalParams
from trunc_estim.setlearn import (LabeledData, LabeledSample, l1_poly_regression, learn_box,
                                  learn_halfspace, learn_set_pu, noise_set, noise_set_mass_bound,
                                  pu_dataset, pu_error, pu_optimal_set, third_central_moment_diag)
from trunc_estim.truncation import AxisBox, Full, Halfspace, sample_truncated, sym_diff_mass

from conftest import std_normal

STD2 = NaturalParams.gaussian([0.0, 0.0], np.eye(2))


# -- boxes ------------------------------------------------------------------------

def test_learn_box_examples():
    S = learn_box([[0.1, 0.2], [0.9, 0.5], [0.4, 0.3]])
    np.testing.assert_allclose(S.lo, [0.1, 0.2])
    np.testing.assert_allclose(S.hi, [0.9, 0.5])
    S = learn_box([[1.0, 2.0]])
    np.testing.assert_array_equal(S.lo, S.hi)
    with pytest.raises(DataError):
        learn_box(np.empty((0, 2)))


def test_learn_box_recovers_unit_square():
    box = AxisBox([0, 0], [1, 1])
    x = sample_truncated(STD2, box, 10_000, 0).samples
    S = learn_box(x)
    assert sym_diff_mass(STD2, S, box, 200_000, 1).point_estimate <= 0.02


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(1, 50), d=st.integers(1, 4))
def test_learn_box_contains_every_sample(seed, n, d):
    x = np.random.default_rng(seed).normal(size=(n, d))
    assert np.all(learn_box(x).contains(x))


# -- third moments and halfspaces -------------------------------------------------

def test_third_moment_symmetric_data():
    diag = third_central_moment_diag(np.array([[-1.0], [1.0], [-1.0], [1.0]]))
    np.testing.assert_allclose(diag.M, 0)
    with pytest.raises(DataError):
        third_central_moment_diag(np.array([[1.0]]))


def test_third_moment_half_normal():
    x = sample_truncated(std_normal(), Halfspace([1.0], 0.0), 10 ** 6, 0).samples
    M = third_central_moment_diag(x).M[0]
    assert M == pytest.approx(math.sqrt(2 / math.pi) * (4 / math.pi - 1), abs=0.005)


def test_third_moment_untruncated():
    x = expfam.sample(NaturalParams.gaussian(np.zeros(3), np.eye(3)), 10 ** 6, 1)
    assert np.max(np.abs(third_central_moment_diag(x).M)) <= 0.01


def test_third_moment_off_axis_zero():
    x = sample_truncated(STD2, Halfspace([1.0, 0.0], 0.0), 10 ** 6, 2).samples
    diag = third_central_moment_diag(x)
    assert abs(diag.M[1]) <= 3 * diag.M_se[1]


def test_learn_halfspace_axis():
    x = sample_truncated(STD2, Halfspace([1.0, 0.0], 0.0), 200_000, 3).samples
    S, diag = learn_halfspace(x, 0.1)
    assert isinstance(S, Halfspace) and not diag.degenerate
    assert np.max(np.abs(S.w - [1.0, 0.0])) <= 0.05
    assert sym_diff_mass(STD2, S, Halfspace([1.0, 0.0], 0.0), 200_000, 4).point_estimate <= 0.05
    # every held-out sample is kept
    assert np.all(S.contains(x[len(x) // 2:]))


def test_cube_root_direction_is_noisy_on_axis():
    # the raw cube root is kept in the diagnostics; on an axis-aligned normal
    # the zero coordinate comes out at roughly n^(-1/6)
    x = sample_truncated(STD2, Halfspace([1.0, 0.0], 0.0), 200_000, 3).samples
    _, diag = learn_halfspace(x, 0.1)
    assert np.max(np.abs(diag.w_cuberoot - [1.0, 0.0])) > 0.05
    assert np.max(np.abs(diag.w_refined - [1.0, 0.0])) <= 0.05


def test_learn_halfspace_untruncated_is_full():
    x = expfam.sample(NaturalParams.gaussian(np.zeros(3), np.eye(3)), 200_000, 5)
    S, diag = learn_halfspace(x, 0.1)
    assert isinstance(S, Full) and diag.degenerate
    assert np.max(np.abs(diag.M)) <= diag.threshold_used


def test_learn_halfspace_bare_threshold_is_tiny():
    # without the noise term the rule c eps^3 d^-1.5 is far below sampling noise
    x = expfam.sample(NaturalParams.gaussian(np.zeros(3), np.eye(3)), 200_000, 5)
    _, diag = learn_halfspace(x, 0.1, z_noise=0.0)
    assert diag.threshold_used == pytest.approx(0.01 * 0.1 ** 3 * 3 ** -1.5)


def test_learn_halfspace_one_dimensional():
    x = sample_truncated(std_normal(), Halfspace([1.0], 0.0), 100_000, 6).samples
    S, _ = learn_halfspace(x, 0.1)
    assert S.w[0] == 1.0
    assert 0.0 <= S.tau <= 0.01


@pytest.mark.parametrize("phi", [np.pi / 6, np.pi / 4])
def test_learn_halfspace_refinement_options(phi):
    w = np.array([np.cos(phi), np.sin(phi)])
    x = sample_truncated(STD2, Halfspace(w, 0.0), 200_000, 7).samples
    S0, _ = learn_halfspace(x, 0.1, refine_iters=0)
    S1, d1 = learn_halfspace(x, 0.1, refine_iters=20, tighten=True)
    assert d1.tightened and d1.refine_iters == 20
    assert np.max(np.abs(S1.w - w)) <= np.max(np.abs(S0.w - w)) + 1e-3
    assert np.max(np.abs(S1.w - w)) <= 0.02


def test_learn_halfspace_input_checks():
    with pytest.raises(DataError):
        learn_halfspace(np.zeros((3, 2)), 0.1)
    with pytest.raises(InvalidParameters):
        learn_halfspace(np.zeros((10, 2)), -0.1)


# -- PU reduction -----------------------------------------------------------------

def test_pu_dataset_extremes():
    pos = np.array([[1.0], [2.0]])
    d0 = pu_dataset(pos, std_normal(), 0.0, 500, 0)
    assert np.all(d0.y == 1) and set(d0.X[:, 0]) <= {1.0, 2.0}
    d1 = pu_dataset(pos, std_normal(), 1.0, 500, 0)
    assert np.all(d1.y == 0)
    d5 = pu_dataset(pos, std_normal(), 0.5, 100_000, 1)
    assert d5.y.mean() == pytest.approx(0.5, abs=0.01)
    with pytest.raises(InvalidParameters):
        pu_dataset(pos, std_normal(), 1.5, 10, 0)


def test_labeled_records_round_trip():
    data = LabeledData(np.array([[0.0], [1.0]]), [0, 1])
    recs = data.records()
    assert recs[1] == LabeledSample(recs[1].x, 1)
    back = LabeledData.from_records(recs)
    np.testing.assert_array_equal(back.X, data.X)
    with pytest.raises(InvalidParameters):
        LabeledData(np.zeros((2, 1)), [0, 2])


def test_l1_separable_line():
    x = np.linspace(-2, 2, 401).reshape(-1, 1)
    data = LabeledData(x, (x[:, 0] >= 0).astype(int))
    S, info = l1_poly_regression(data, 1, iterations=2000, return_info=True)
    assert info.train_error == 0.0
    np.testing.assert_array_equal(S.contains(x), data.y == 1)


def test_l1_interval_against_brute_force():
    rng = np.random.default_rng(0)
    x = rng.normal(scale=1.5, size=(3000, 1))
    y = (np.abs(x[:, 0]) <= 1).astype(int)
    flip = rng.random(3000) < 0.05
    y[flip] = 1 - y[flip]
    _, info = l1_poly_regression(LabeledData(x, y), 2, iterations=3000, return_info=True)
    # brute-force best interval classifier
    g = np.sort(x[:, 0])
    best = 1.0
    cand = g[::15]
    for i, a in enumerate(cand):
        for b in cand[i:]:
            best = min(best, np.mean(((x[:, 0] >= a) & (x[:, 0] <= b)).astype(int) != y))
    assert info.train_error <= best + 0.02


def test_l1_constant_labels():
    x = np.random.default_rng(1).normal(size=(200, 2))
    S, info = l1_poly_regression(LabeledData(x, np.ones(200)), 2, iterations=200, return_info=True)
    assert info.train_error == 0.0
    assert info.best_objective == pytest.approx(0.0, abs=1e-12)
    assert np.all(S.contains(x))


def test_l1_history_non_increasing():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2000, 2))
    y = (x[:, 0] ** 2 + x[:, 1] >= 0.5).astype(int)
    _, info = l1_poly_regression(LabeledData(x, y), 2, iterations=500, return_info=True)
    assert np.all(np.diff(info.objective_history) <= 0)


def test_l1_feature_cap():
    with pytest.raises(FeatureCapExceeded):
        l1_poly_regression(LabeledData(np.zeros((5, 10)), np.ones(5)), 4)


def test_learn_set_pu_guards_and_containment():
    with pytest.raises(InvalidParameters):
        learn_set_pu(np.zeros((5, 1)), std_normal(), 6.0, 2)
    pos = np.random.default_rng(3).uniform(0, 1, size=(20_000, 1))
    theta0 = NaturalParams.gaussian([0.5], [[1 / 12]])
    S = learn_set_pu(pos, theta0, 0.6, 2, rng_seed=4, n=20_000, iterations=3000)
    assert S.contains(pos).mean() >= 0.95


def test_learn_set_pu_half_line():
    pos = sample_truncated(std_normal(), Halfspace([1.0], 0.0), 100_000, 5).samples
    S = learn_set_pu(pos, std_normal(), 0.6, 3, rng_seed=6, n=30_000, iterations=3000)
    assert sym_diff_mass(std_normal(), S, Halfspace([1.0], 0.0), 200_000, 7).point_estimate <= 0.1


# -- histogram model ----------------------------------------------------------------

def _hist_model(bins=20):
    edges = np.linspace(-3, 3, bins + 1)
    from scipy import stats
    U = np.diff(stats.norm.cdf(edges))
    U /= U.sum()
    P = np.where(edges[:-1] >= 0, U, 0.0)
    P /= P.sum()
    return P, U


@pytest.mark.parametrize("rho", [0.05, 0.2, 0.5])
@pytest.mark.parametrize("z", [1 / 3, 1 / 2])
def test_noise_set_mass_bound(rho, z):
    P, U = _hist_model()
    # skew the positives so B_z is non-empty
    P2 = P * np.linspace(2, 0.1, len(P))
    P2 /= P2.sum()
    for PP in (P, P2):
        B = noise_set(PP, U, rho, z)
        assert PP[B].sum() <= noise_set_mass_bound(rho, z)


@pytest.mark.parametrize("rho", [0.05, 0.3, 0.6])
def test_bayes_optimal_set(rho):
    P, U = _hist_model()
    P = P * np.linspace(2, 0.1, len(P))
    P /= P.sum()
    # exhaustive search over all 2^20 bin subsets
    k = len(P)
    masks = ((np.arange(2 ** k)[:, None] >> np.arange(k)) & 1).astype(bool)
    errs = rho * (masks @ U) + (1 - rho) * (1 - masks @ P)
    brute = masks[np.argmin(errs)]
    np.testing.assert_array_equal(pu_optimal_set(P, U, rho), brute)
    assert pu_error(brute, P, U, rho) == pytest.approx(errs.min())
