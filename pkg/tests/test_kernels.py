import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mralp.kernels import (GAUSSIAN, ONE, SPHERICAL, WENDLAND2, CovParams, KernelSpec, TaperSpec, cov_eval,
                           cov_matrix, taper_eval, taper_matrix_sparse, taper_pattern)

EXP = KernelSpec()
GAUSS = KernelSpec(GAUSSIAN, length_scale=100.0)
P = CovParams(1.0, (5.0,), 0.0)

coords = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
point = st.tuples(coords, coords)


def test_zero_distance_is_sigma2():
    assert cov_eval(EXP, P, [1.0, 2.0], [1.0, 2.0]) == 1.0
    assert cov_eval(EXP, CovParams(2.5, (5.0,)), [0, 0], [0, 0]) == 2.5


def test_exponential_unit_distance():
    # exp(-5), frozen from a closed-form evaluation
    assert cov_eval(EXP, P, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(6.737946999085467e-3, rel=1e-14)


def test_gaussian_with_length_scale():
    v = cov_eval(GAUSS, CovParams(1.0, (2.5,)), [0.0, 0.0], [60.0, 80.0])
    assert v == pytest.approx(8.20849986238988e-2, rel=1e-14)


def test_spherical_taper_values():
    t = TaperSpec(SPHERICAL, 10.0)
    assert taper_eval(t, [3, 3], [3, 3]) == 1.0
    assert taper_eval(t, [0, 0], [12, 0]) == 0.0
    assert taper_eval(t, [0, 0], [10, 0]) == 0.0
    assert taper_eval(t, [0, 0], [3, 4]) == pytest.approx(0.3125, rel=1e-15)


def test_wendland_and_one():
    assert taper_eval(TaperSpec(WENDLAND2, 2.0), [0, 0], [0, 0]) == 1.0
    assert taper_eval(TaperSpec(WENDLAND2, 2.0), [0, 0], [0, 2.5]) == 0.0
    assert taper_eval(TaperSpec(ONE), [0, 0], [1e9, 0]) == 1.0


def test_bad_specs():
    with pytest.raises(ValueError):
        CovParams(-1.0)
    with pytest.raises(ValueError):
        CovParams(1.0, (0.0,))
    with pytest.raises(ValueError):
        TaperSpec(SPHERICAL, 0.0)
    with pytest.raises(ValueError):
        cov_eval(EXP, P, [0, 0], [0, 0, 0])


def test_single_point_matrix():
    C = cov_matrix(EXP, CovParams(3.0, (1.0,)), [[1.0, 1.0]])
    assert C.shape == (1, 1) and C[0, 0] == 3.0


def test_matrix_exactly_symmetric():
    X = np.random.default_rng(0).uniform(0, 10, (3, 2))
    for k in (EXP, GAUSS):
        C = cov_matrix(k, P, X)
        assert np.array_equal(C, C.T)


@pytest.mark.parametrize("kernel", [EXP, GAUSS])
def test_matrix_psd(kernel):
    X = np.random.default_rng(1).uniform(0, 100, (50, 2))
    ev = np.linalg.eigvalsh(cov_matrix(kernel, CovParams(1.0, (0.3,)), X))
    assert ev[0] >= -1e-10 * ev[-1]


def test_matrix_matches_pointwise():
    X = np.random.default_rng(2).uniform(0, 5, (7, 2))
    C = cov_matrix(EXP, P, X)
    ref = np.array([[cov_eval(EXP, P, a, b) for b in X] for a in X])
    assert np.allclose(C, ref, rtol=1e-14, atol=0)


@settings(max_examples=60, deadline=None)
@given(point, point, st.floats(0.01, 10))
def test_cov_eval_symmetric_bitwise(a, b, theta):
    for k in (EXP, GAUSS):
        p = CovParams(1.7, (theta,))
        assert cov_eval(k, p, a, b) == cov_eval(k, p, b, a)


@settings(max_examples=60, deadline=None)
@given(point, point, st.floats(0.1, 30))
def test_taper_zero_beyond_support(a, b, gamma):
    d = math.dist(a, b)
    for fam in (SPHERICAL, WENDLAND2):
        v = taper_eval(TaperSpec(fam, gamma), a, b)
        if d >= gamma:
            assert v == 0.0
        else:
            assert 0.0 < v <= 1.0


def test_small_gamma_gives_identity_pattern():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    T = taper_matrix_sparse(TaperSpec(SPHERICAL, 0.5), X).toarray()
    assert np.array_equal(T, np.eye(3))


@pytest.mark.parametrize("threshold", [10 ** 9, 0])
def test_sparse_pattern_matches_dense(threshold):
    rng = np.random.default_rng(3)
    A, B = rng.uniform(0, 20, (80, 2)), rng.uniform(0, 20, (60, 2))
    t = TaperSpec(SPHERICAL, 4.0)
    S = taper_matrix_sparse(t, A, B, dense_threshold=threshold).toarray()
    D = np.array([[taper_eval(t, a, b) for b in B] for a in A])
    assert np.array_equal(S != 0, D != 0)
    assert np.allclose(S, D, rtol=1e-14, atol=1e-16)


def test_large_gamma_is_dense_taper():
    X = np.random.default_rng(4).uniform(0, 1, (20, 2))
    t = TaperSpec(SPHERICAL, 5.0)
    rows, cols, _ = taper_pattern(t, X)
    assert len(rows) == 400


def test_tapered_sparsity_scale():
    X = np.random.default_rng(5).uniform(0, 100, (1000, 2))
    rows, cols, _ = taper_pattern(TaperSpec(SPHERICAL, 1.0), X)
    off = np.sum(rows != cols) / (1000 * 999)
    expected = math.pi / 100.0 ** 2
    assert expected / 2 <= off <= 2 * expected
