import numpy as np
import pytest
from scipy.stats import binomtest
from hypothesis import given, settings
from hypothesis import strategies as st

from mralp.kernels import CovParams, KernelSpec, cov_matrix
from mralp.rangefinder import (RangeFinderConfig, RangeFinderError, adaptive_range_finder, calibrate_c,
                               numerical_rank, projection_error, rank_targeted_phi)


def exp_matrix(q, seed, theta=0.05):
    X = np.random.default_rng([seed, 1]).uniform(0, 100, (q, 2))
    return cov_matrix(KernelSpec(), CovParams(1.0, (theta,)), X)


def orth_err(P):
    return np.linalg.norm(P @ P.T - np.eye(P.shape[0]))


@pytest.mark.parametrize("q, c", [(300, 4), (100, 3), (1, 1), (10, 2), (11, 3)])
def test_calibrate_c(q, c):
    assert calibrate_c(q) == c
    assert q / 10 ** c <= 0.1 and (c == 1 or q / 10 ** (c - 1) > 0.1)


def test_dominant_axis_found():
    K = np.diag([1.0, 1e-12, 1e-12])
    out = adaptive_range_finder(K, RangeFinderConfig(epsilon=0.1, seed=0))
    assert out.rank == 1
    assert abs(out.rows[0, 0]) >= 0.999
    assert out.error < 0.1 and out.contract_met


def test_rank_one_target_near_optimal():
    # the single row is K g / |K g|; its residual is sqrt(1 + 8 sin^2), within 1.5x of the
    # optimal error 1 iff |g2 / g1| <= 3 tan(asin(sqrt(1.25 / 8)))
    K = np.diag([3.0, 1.0])
    errs = np.array([projection_error(K, rank_targeted_phi(K, 1, seed=s).rows) for s in range(400)])
    assert np.all(errs >= 1.0 - 1e-12)
    t = 3.0 * np.tan(np.arcsin(np.sqrt(1.25 / 8.0)))
    p = 2.0 / np.pi * np.arctan(t)
    assert p == pytest.approx(0.58043, abs=1e-5)
    assert binomtest(int(np.sum(errs <= 1.5)), len(errs), p).pvalue > 0.01


def test_rank_q_minus_one_succeeds():
    K = exp_matrix(40, 0, theta=0.5)
    out = rank_targeted_phi(K, 39, seed=1)
    assert out.rows.shape == (39, 40) and orth_err(out.rows) < 1e-10


def test_rank_target_ten_on_300():
    out = rank_targeted_phi(exp_matrix(300, 2), 10, seed=3)
    assert out.rows.shape == (10, 300)


def test_rank_target_above_numerical_rank():
    A = np.random.default_rng(0).standard_normal((20, 3))
    K = A @ A.T
    assert numerical_rank(K) == 3
    with pytest.raises(RangeFinderError, match="numerical rank 3"):
        rank_targeted_phi(K, 3)


def test_degenerate_inputs():
    with pytest.raises(RangeFinderError):
        adaptive_range_finder(np.zeros((4, 4)), RangeFinderConfig(0.1))
    with pytest.raises(RangeFinderError):
        adaptive_range_finder(np.array([[1.0, 2.0], [0.0, 1.0]]), RangeFinderConfig(0.1))
    with pytest.raises(ValueError):
        RangeFinderConfig(epsilon=0.0)


def test_deterministic_and_path_keyed():
    K = exp_matrix(120, 4)
    a = adaptive_range_finder(K, RangeFinderConfig(5.0, seed=2), path=(1, 2))
    b = adaptive_range_finder(K, RangeFinderConfig(5.0, seed=2), path=(1, 2))
    c = adaptive_range_finder(K, RangeFinderConfig(5.0, seed=2), path=(2, 1))
    assert np.array_equal(a.rows, b.rows)
    assert not np.array_equal(a.rows[:1], c.rows[:1])


def test_stop_reasons():
    K = exp_matrix(60, 5)
    assert adaptive_range_finder(K, RangeFinderConfig(1e-9, max_rank=5)).stop == "max_rank"
    assert adaptive_range_finder(K, RangeFinderConfig(50.0)).stop == "tolerance"
    A = np.random.default_rng(1).standard_normal((30, 2))
    out = adaptive_range_finder(A @ A.T, RangeFinderConfig(0.0, max_rank=10))
    assert out.stop == "exhausted" and out.rank == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.5, 30.0))
def test_orthonormal_rows_and_contract_verified(seed, eps):
    K = exp_matrix(80, seed % 7)
    out = adaptive_range_finder(K, RangeFinderConfig(eps, seed=seed))
    assert orth_err(out.rows) < 1e-10
    assert out.error is not None


def test_monotone_residual():
    K = exp_matrix(100, 6)
    P = adaptive_range_finder(K, RangeFinderConfig(1e-3, max_rank=40, seed=0)).rows
    errs = [np.linalg.norm(K)] + [projection_error(K, P[:j]) for j in range(1, len(P) + 1)]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_rows_in_column_space():
    A = np.random.default_rng(2).standard_normal((25, 6))
    K = A @ A.T
    P = adaptive_range_finder(K, RangeFinderConfig(1e-6, seed=1)).rows
    proj = K @ np.linalg.pinv(K) @ P.T
    assert np.linalg.norm(P.T - proj) <= 1e-6 * np.linalg.norm(P)
