import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedrd import SingularInformation, SurvivalDataset, compute_components, fit_local, solve_spd
from fedrd.estimator import FitResult

from conftest import random_dataset
from oracles import brute_components, exact_pair_components


def test_pair_components_match_rational_oracle(pair):
    a, d, sigma = exact_pair_components()
    acc = compute_components(pair)
    assert acc.a_mat[0, 0] == float(a) == 0.5
    assert acc.d_vec[0] == float(d) == -0.5
    assert acc.sigma_mat[0, 0] == float(sigma) == 0.25
    assert acc.n == 2


def test_censored_pair_components(pair_censored):
    acc = compute_components(pair_censored)
    assert (acc.a_mat[0, 0], acc.d_vec[0], acc.sigma_mat[0, 0]) == (0.5, 0.5, 0.25)


def test_constant_column_gives_zero_sums():
    rng = np.random.default_rng(0)
    x = np.column_stack([rng.normal(size=30), np.full(30, 4.2)])
    acc = compute_components(SurvivalDataset(rng.exponential(size=30), np.ones(30, int), x))
    assert np.allclose(acc.a_mat[1], 0, atol=1e-12)
    assert np.allclose(acc.a_mat[:, 1], 0, atol=1e-12)
    assert abs(acc.d_vec[1]) < 1e-12
    assert np.allclose(acc.sigma_mat[1], 0, atol=1e-12)


def test_fit_local_pair(pair, pair_censored):
    fit = fit_local(pair)
    assert fit.beta.tolist() == [-1.0]
    assert fit.cov.tolist() == [[1.0]]
    assert fit.method == "local" and fit.n == 2
    assert fit_local(pair_censored).beta.tolist() == [1.0]
    assert fit_local(pair_censored).cov.tolist() == [[1.0]]


def test_single_subject_is_singular():
    with pytest.raises(SingularInformation):
        fit_local(SurvivalDataset([1.0], [1], [[0.3]]))


def test_no_events_is_singular():
    with pytest.raises(SingularInformation):
        fit_local(SurvivalDataset([1.0, 2.0, 3.0], [0, 0, 0], [[0.0], [1.0], [0.5]]))


@pytest.mark.parametrize("seed", range(8))
def test_components_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, n=int(rng.integers(2, 40)), p=int(rng.integers(1, 4)), ties=seed % 2 == 0)
    acc = compute_components(data)
    a, d, sigma = brute_components(data.time, data.status, data.x)
    np.testing.assert_allclose(acc.a_mat, a, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(acc.d_vec, d, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(acc.sigma_mat, sigma, rtol=1e-10, atol=1e-12)


def test_solve_spd_examples():
    v = np.array([3.0, -1.0, 2.0])
    assert solve_spd(np.eye(3), v).tolist() == v.tolist()
    assert solve_spd(np.diag([2.0, 4.0]), [2.0, 4.0]).tolist() == [1.0, 1.0]
    with pytest.raises(SingularInformation):
        solve_spd(np.zeros((2, 2)), [1.0, 1.0])


def test_solve_spd_matrix_rhs_and_residual():
    rng = np.random.default_rng(1)
    b = rng.normal(size=(5, 5))
    m = b @ b.T + 5 * np.eye(5)
    rhs = rng.normal(size=(5, 3))
    z = solve_spd(m, rhs)
    assert np.max(np.abs(m @ z - rhs)) <= 1e-8 * np.max(np.abs(rhs))


def test_solve_spd_rank_deficient():
    u = np.array([[1.0], [2.0], [3.0]])
    with pytest.raises(SingularInformation):
        solve_spd(u @ u.T, [1.0, 1.0, 1.0])


def test_fit_result_rejects_unknown_method():
    with pytest.raises(ValueError):
        FitResult(np.zeros(1), np.eye(1), 1, "ensemble")


seeds = st.integers(0, 2**32 - 1)


@given(seeds, st.floats(0.05, 20.0))
def test_time_scaling(seed, c):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, n=25, p=2)
    scaled = SurvivalDataset(data.time * c, data.status, data.x)
    acc, acc_c = compute_components(data), compute_components(scaled)
    np.testing.assert_allclose(acc_c.d_vec, acc.d_vec, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(acc_c.sigma_mat, acc.sigma_mat, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(acc_c.a_mat, c * acc.a_mat, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(fit_local(scaled).beta, fit_local(data).beta / c, rtol=1e-7, atol=1e-10)


@given(seeds, st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_covariate_translation(seed, shift):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, n=25, p=2)
    moved = SurvivalDataset(data.time, data.status, data.x + np.array(shift))
    acc, acc_m = compute_components(data), compute_components(moved)
    scale = 1 + np.max(np.abs(shift))
    np.testing.assert_allclose(acc_m.a_mat, acc.a_mat, atol=1e-9 * scale**2)
    np.testing.assert_allclose(acc_m.d_vec, acc.d_vec, atol=1e-9 * scale)
    np.testing.assert_allclose(acc_m.sigma_mat, acc.sigma_mat, atol=1e-9 * scale**2)


@given(seeds)
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, n=30, p=3, ties=True)
    perm = rng.permutation(data.n)
    fit, fit_p = fit_local(data), fit_local(data.subset(perm))
    np.testing.assert_allclose(fit_p.beta, fit.beta, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(fit_p.cov, fit.cov, rtol=1e-10, atol=1e-14)


@given(seeds)
def test_accumulators_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    acc = compute_components(random_dataset(rng, n=20, p=3, ties=True))
    for m in (acc.a_mat, acc.sigma_mat):
        assert np.array_equal(m, m.T)
        assert np.min(np.linalg.eigvalsh(m)) >= -1e-10 * max(1.0, np.max(np.abs(m)))
